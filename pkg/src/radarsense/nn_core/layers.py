"""Static feed-forward networks built from a list of layer specs.

A spec is a list of plain dicts such as ``{"type": "conv2d", "out": 16,
"kernel": 3, "stride": [2, 1]}``; :func:`build_network` turns it into a
:class:`Network` once the input shape is known, so specs stay serialisable
for checkpoints and config files.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, conv2d


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (list, tuple)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


class Layer:
    kind = ""

    def __init__(self, spec: dict):
        self.spec = dict(spec)
        self.params: dict[str, Tensor] = {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def init(self, in_shape: tuple, rng: np.random.Generator, dtype) -> None:
        pass

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Conv2d(Layer):
    kind = "conv2d"

    def _geometry(self, in_shape):
        c, h, w = in_shape
        kh, kw = _pair(self.spec.get("kernel", 3))
        sh, sw = _pair(self.spec.get("stride", 1))
        pad = self.spec.get("padding", "same")
        ph, pw = (kh // 2, kw // 2) if pad == "same" else _pair(pad)
        return c, h, w, kh, kw, sh, sw, ph, pw

    def out_shape(self, in_shape):
        c, h, w, kh, kw, sh, sw, ph, pw = self._geometry(in_shape)
        return (int(self.spec["out"]), (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1)

    def init(self, in_shape, rng, dtype):
        c, _, _, kh, kw, *_ = self._geometry(in_shape)
        o = int(self.spec["out"])
        bound = np.sqrt(6.0 / (c * kh * kw))  # He-uniform
        self.params["weight"] = Tensor(rng.uniform(-bound, bound, (o, c, kh, kw)).astype(dtype),
                                       requires_grad=True)
        self.params["bias"] = Tensor(np.zeros(o, dtype=dtype), requires_grad=True)
        self._geom = self._geometry(in_shape)

    def __call__(self, x):
        _, _, _, _, _, sh, sw, ph, pw = self._geom
        return conv2d(x, self.params["weight"], self.params["bias"], (sh, sw), (ph, pw))


class Dense(Layer):
    kind = "dense"

    def out_shape(self, in_shape):
        return (int(self.spec["out"]),)

    def init(self, in_shape, rng, dtype):
        (n_in,) = in_shape
        n_out = int(self.spec["out"])
        bound = np.sqrt(6.0 / (n_in + n_out))  # Glorot-uniform
        self.params["weight"] = Tensor(rng.uniform(-bound, bound, (n_in, n_out)).astype(dtype),
                                       requires_grad=True)
        self.params["bias"] = Tensor(np.zeros(n_out, dtype=dtype), requires_grad=True)

    def __call__(self, x):
        return x @ self.params["weight"] + self.params["bias"]


class ReLU(Layer):
    kind = "relu"

    def __call__(self, x):
        return x.relu()


class Sigmoid(Layer):
    kind = "sigmoid"

    def __call__(self, x):
        return x.sigmoid()


class Softmax(Layer):
    kind = "softmax"

    def __call__(self, x):
        return x.softmax(axis=-1)


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def __call__(self, x):
        return x.reshape(x.shape[0], -1)


class Reshape(Layer):
    kind = "reshape"

    def out_shape(self, in_shape):
        shape = tuple(int(s) for s in self.spec["shape"])
        if np.prod(shape) != np.prod(in_shape):
            raise ValueError(f"reshape {in_shape} -> {shape} changes the element count")
        return shape

    def __call__(self, x):
        return x.reshape((x.shape[0],) + tuple(self.spec["shape"]))


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def out_shape(self, in_shape):
        return (in_shape[0],)

    def __call__(self, x):
        return x.mean(axis=(2, 3))


class Standardize(Layer):
    """Fixed affine map ``(x - shift) / scale``; attributes live in the layer description."""

    kind = "standardize"

    def __call__(self, x):
        shift = float(self.spec.get("shift", 0.0))
        scale = float(self.spec.get("scale", 1.0))
        return (x - shift) * (1.0 / scale)


class RowBinMax(Layer):
    """Max over groups of rows (axis H of a C x H x W input).

    Row ``r`` belongs to output row ``floor((r + 0.5) / H * extent * out_rows)``,
    where ``extent`` is the fraction of the output range the input rows span.
    Every output row must receive at least one input row.
    """

    kind = "row_bin_max"

    def _groups(self, h: int) -> np.ndarray:
        n = int(self.spec["out_rows"])
        extent = float(self.spec.get("extent", 1.0))
        owner = np.floor((np.arange(h) + 0.5) / h * extent * n).astype(int)
        if owner.min() < 0 or owner.max() >= n or len(np.unique(owner)) != n:
            raise ValueError(f"cannot bin {h} rows into {n} groups with extent {extent}")
        k = np.bincount(owner, minlength=n).max()
        idx = np.empty((n, k), dtype=int)
        for i in range(n):
            rows = np.flatnonzero(owner == i)
            idx[i] = np.concatenate([rows, np.full(k - len(rows), rows[0])])
        return idx

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, int(self.spec["out_rows"]), w)

    def init(self, in_shape, rng, dtype):
        self._idx = self._groups(in_shape[1])

    def __call__(self, x):
        idx = self._idx
        gathered = x.data[:, :, idx, :]  # (B, C, n, k, W)
        arg = np.argmax(gathered, axis=3)
        out = np.take_along_axis(gathered, arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        # (B, C, n, W) source row of each output
        rows = idx[np.arange(idx.shape[0])[None, None, :, None], arg]

        def bw(g):
            full = np.zeros_like(x.data)
            # groups are disjoint, so no two outputs share a source element
            np.put_along_axis(full, rows, g, axis=2)
            return (full,)
        return x._make(out, (x,), bw, "row_bin_max")


class Transpose(Layer):
    """Permute the non-batch axes; ``axes`` indexes them from 0."""

    kind = "transpose"

    def out_shape(self, in_shape):
        return tuple(in_shape[a] for a in self.spec["axes"])

    def __call__(self, x):
        return x.transpose((0,) + tuple(a + 1 for a in self.spec["axes"]))


class Identity(Layer):
    kind = "identity"

    def __call__(self, x):
        return x


LAYER_TYPES = {cls.kind: cls for cls in
               (Conv2d, Dense, ReLU, Sigmoid, Softmax, Flatten, Reshape, GlobalAvgPool,
                Standardize, RowBinMax, Transpose, Identity)}


@dataclass
class Network:
    """A built network: layer objects plus the layer descriptions that produced them."""

    input_shape: tuple
    spec: list
    layers: list = field(default_factory=list)

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for _, p in sorted(layer.params.items())]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(f"{i}.{name}", p) for i, layer in enumerate(self.layers)
                for name, p in sorted(layer.params.items())]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    @property
    def output_shape(self) -> tuple:
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape

    def __call__(self, x) -> Tensor:
        return forward(self, x)

    def astype(self, dtype) -> "Network":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self


def build_network(spec: list, input_shape: tuple, seed: int = 0, dtype=np.float32) -> Network:
    """Instantiate ``spec`` for inputs of shape ``input_shape`` (batch axis excluded)."""
    rng = np.random.default_rng(seed)
    layers = []
    shape = tuple(int(s) for s in input_shape)
    for entry in spec:
        kind = entry.get("type")
        if kind not in LAYER_TYPES:
            raise ValueError(f"unknown layer type {kind!r}")
        layer = LAYER_TYPES[kind](entry)
        layer.init(shape, rng, dtype)
        shape = layer.out_shape(shape)
        layers.append(layer)
    return Network(tuple(int(s) for s in input_shape), copy.deepcopy(list(spec)), layers)


def forward(net: Network, x) -> Tensor:
    """Run ``x`` (batched, or a single example) through ``net``, recording the graph."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if x.shape[1:] != net.input_shape:
        if x.shape == net.input_shape:
            x = x.reshape((1,) + x.shape)
        else:
            raise ValueError(f"input shape {x.shape} does not match network input "
                             f"{net.input_shape}")
    params = net.parameters()
    if params and not x._prev and x.dtype != params[0].dtype:
        x = Tensor(x.data.astype(params[0].dtype), requires_grad=x.requires_grad)
    for layer in net.layers:
        x = layer(x)
    return x
