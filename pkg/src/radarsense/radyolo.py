"""Grid detector on the compressed spectrogram.

The network maps a 312x16 spectrogram to a 32x7 grid ``P`` whose columns are
``(p_radar, p_interf, x, y, w, h, conf)``, all through sigmoids. ``y`` is
relative to its cell; ``x``, ``w``, ``h`` are fractions of band / window.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingStratumError
from .geometry import Box, merge_intervals, union_length
from .nn_core import Adam, Tensor, build_network, load_checkpoint, save_checkpoint
from .nn_core.layers import Network
from .spectro_pre import (DFT_SIZE, N_CELLS, N_ROWS, N_SAMPLES, ROWS_PER_BLOCK, GridTarget,
                          SpectrogramTensor)

log = logging.getLogger(__name__)

P_R, P_I, X, Y, W, H, C = range(7)
BOOST_HEIGHT = 0.02
BOOST = 0.5
SQRT_EPS = 1e-9

# fraction of the window the 312 compressed rows cover (the tail 16 rows are dropped)
ROW_EXTENT = N_ROWS * ROWS_PER_BLOCK * DFT_SIZE / N_SAMPLES

# Convolutions at full resolution, a fixed max over the rows inside each grid
# cell, then small convolutions along the cell axis and a per-cell head that
# reads the whole frequency axis. Weights are shared across cells.
DEFAULT_ARCH = [
    {"type": "conv2d", "out": 16, "kernel": 3},
    {"type": "relu"},
    {"type": "conv2d", "out": 16, "kernel": 3},
    {"type": "relu"},
    {"type": "row_bin_max", "out_rows": N_CELLS, "extent": ROW_EXTENT},
    {"type": "conv2d", "out": 32, "kernel": 3},
    {"type": "relu"},
    {"type": "conv2d", "out": 32, "kernel": 3, "stride": [1, 2]},
    {"type": "relu"},
    {"type": "conv2d", "out": 64, "kernel": 3, "stride": [1, 2]},
    {"type": "relu"},
    {"type": "conv2d", "out": 7, "kernel": [1, DFT_SIZE // 4], "padding": [0, 0]},
    {"type": "reshape", "shape": [7, N_CELLS]},
    {"type": "transpose", "axes": [1, 0]},
    {"type": "sigmoid"},
]


@dataclass(frozen=True)
class LossHyper:
    lambda_coord: float = 5.0
    lambda_obj: float = 1.0
    lambda_nobj: float = 2.0
    lambda_class: float = 1.0

    def __post_init__(self):
        vals = (self.lambda_coord, self.lambda_obj, self.lambda_nobj, self.lambda_class)
        if min(vals) <= 0:
            raise ValueError("loss weights must be positive")
        # localization outweighs classification, no-object outweighs object
        if not self.lambda_coord > self.lambda_class:
            raise ValueError("lambda_coord must exceed lambda_class")
        if not self.lambda_nobj > self.lambda_obj:
            raise ValueError("lambda_nobj must exceed lambda_obj")


# ---------------------------------------------------------------------------
# boxes

def iou(a: Box, b: Box) -> float:
    ax0, ax1 = a.x_range
    ay0, ay1 = a.y_range
    bx0, bx1 = b.x_range
    by0, by1 = b.y_range
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return inter / union


def boosted_iou(truth: Box, pred: Box, height_threshold: float = BOOST_HEIGHT) -> float:
    """IOU with a +0.5 bonus for truth boxes shorter than 2% of the window, capped at 1."""
    v = iou(truth, pred)
    if truth.h < height_threshold:
        v += BOOST
    return min(1.0, v)


def _iou_arrays(tx, ty, tw, th, px, py, pw, ph) -> np.ndarray:
    iw = np.clip(np.minimum(tx + tw / 2, px + pw / 2) - np.maximum(tx - tw / 2, px - pw / 2), 0, None)
    ih = np.clip(np.minimum(ty + th / 2, py + ph / 2) - np.maximum(ty - th / 2, py - ph / 2), 0, None)
    inter = iw * ih
    union = tw * th + pw * ph - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1), 0.0)


def confidence_targets(P: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``c * boosted IOU`` per cell for batched grids ``P``, ``T`` of shape (B, 32, 7)."""
    cells = np.arange(N_CELLS)
    ty = (cells + T[..., Y]) / N_CELLS
    py = (cells + P[..., Y]) / N_CELLS
    v = _iou_arrays(T[..., X], ty, T[..., W], T[..., H], P[..., X], py, P[..., W], P[..., H])
    v = np.minimum(1.0, v + BOOST * (T[..., H] < BOOST_HEIGHT))
    return T[..., C] * v


# ---------------------------------------------------------------------------
# loss

def yolo_loss(P, target, hyp: LossHyper = LossHyper()):
    """Grid loss summed over cells and batch.

    ``P`` is a (B, 32, 7) :class:`Tensor` (or array); ``target`` the matching
    (B, 32, 7) array from :meth:`GridTarget.as_arrays` (a single GridTarget is
    accepted too). The IOU factor in the confidence target is computed from
    the current predictions but treated as a constant.
    """
    if isinstance(target, GridTarget):
        target = target.as_arrays()
    T = np.asarray(target, dtype=np.float64)
    as_float = not isinstance(P, Tensor)
    if as_float:
        P = Tensor(np.asarray(P, dtype=np.float64))
    if P.ndim == 2:
        P = P.reshape(1, N_CELLS, 7)
    if T.ndim == 2:
        T = T[None]
    if P.shape != T.shape:
        raise ValueError(f"prediction {P.shape} and target {T.shape} shapes differ")
    dt = P.dtype
    obj = T[..., C].astype(dt)
    nobj = (1.0 - T[..., C]).astype(dt)
    ct = confidence_targets(P.data.astype(np.float64), T).astype(dt)

    def col(k):
        return P[:, :, k]

    sq = lambda t: t * t  # noqa: E731
    loc = (sq(col(X) - T[..., X].astype(dt)) + sq(col(Y) - T[..., Y].astype(dt))) * obj
    size = (sq((col(W) + SQRT_EPS).sqrt() - np.sqrt(T[..., W] + SQRT_EPS).astype(dt))
            + sq((col(H) + SQRT_EPS).sqrt() - np.sqrt(T[..., H] + SQRT_EPS).astype(dt))) * obj
    conf_err = sq(ct - col(C))
    cls = (sq(col(P_R) - T[..., P_R].astype(dt)) + sq(col(P_I) - T[..., P_I].astype(dt))) * obj
    loss = (hyp.lambda_coord * (loc.sum() + size.sum())
            + hyp.lambda_obj * (conf_err * obj).sum()
            + hyp.lambda_nobj * (conf_err * nobj).sum()
            + hyp.lambda_class * cls.sum())
    return loss.item() if as_float else loss


# ---------------------------------------------------------------------------
# model

@dataclass
class RadYoloModel:
    net: Network
    history: list = field(default_factory=list)

    def predict(self, spectrograms, batch_size: int = 64) -> np.ndarray:
        """(B, 32, 7) grids for a batch of (312, 16) spectrograms."""
        x = _stack(spectrograms)
        out = [self.net(Tensor(x[i:i + batch_size])).data
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros((0, N_CELLS, 7))

    def save(self, path) -> None:
        save_checkpoint(path, self.net, meta={"history": self.history, "flow": "radyolo"})

    @classmethod
    def load(cls, path) -> "RadYoloModel":
        net, meta = load_checkpoint(path)
        return cls(net, meta.get("history", []))


def _stack(spectrograms) -> np.ndarray:
    arrs = [s.values if isinstance(s, SpectrogramTensor) else np.asarray(s) for s in spectrograms]
    if not arrs:
        return np.zeros((0, 1, N_ROWS, DFT_SIZE), np.float32)
    return np.stack(arrs).astype(np.float32).reshape(-1, 1, N_ROWS, DFT_SIZE)


def train_radyolo(dataset, hyp: LossHyper = LossHyper(), epochs: int = 30, seed: int = 0, *,
                  lr: float = 1e-3, batch_size: int = 16, arch: list | None = None,
                  validation=None, lr_final: float | None = None) -> RadYoloModel:
    """Fit the grid detector with Adam on ``(SpectrogramTensor, GridTarget)`` pairs.

    With ``lr_final`` the learning rate follows a cosine from ``lr`` down to
    ``lr_final`` over the epochs; otherwise it stays at ``lr``.
    Records mean per-example training loss (and validation loss when a
    validation set is given) after every epoch in ``model.history``.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training set is empty")
    x = _stack([s for s, _ in dataset])
    t = np.stack([g.as_arrays() for _, g in dataset])
    spec = copy.deepcopy(arch or DEFAULT_ARCH)
    spec.insert(0, {"type": "standardize", "shift": float(x.mean()),
                    "scale": float(x.std() or 1.0)})
    net = build_network(spec, (1, N_ROWS, DFT_SIZE), seed=seed)
    opt = Adam(net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    if validation is not None:
        validation = list(validation)
        vx = _stack([s for s, _ in validation])
        vt = np.stack([g.as_arrays() for _, g in validation])
    model = RadYoloModel(net)
    for epoch in range(epochs):
        opt.state.lr = cosine_lr(lr, lr_final, epoch, epochs)
        order = rng.permutation(len(x))
        total = 0.0
        for i in range(0, len(x), batch_size):
            idx = order[i:i + batch_size]
            loss = yolo_loss(net(Tensor(x[idx])), t[idx], hyp)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        rec = {"epoch": epoch + 1, "train_loss": total / len(x)}
        if validation is not None:
            rec["val_loss"] = _eval_loss(model, vx, vt, hyp)
        model.history.append(rec)
        log.info("radyolo epoch %d: %s", epoch + 1, rec)
    return model


def cosine_lr(lr: float, lr_final: float | None, epoch: int, epochs: int) -> float:
    """Learning rate for ``epoch`` (0-based) on a cosine from ``lr`` to ``lr_final``."""
    if lr_final is None or epochs <= 1:
        return lr
    return lr_final + 0.5 * (lr - lr_final) * (1 + math.cos(math.pi * epoch / (epochs - 1)))


def _eval_loss(model: RadYoloModel, x, t, hyp) -> float:
    if len(x) == 0:
        return float("nan")
    P = model.predict(x)
    return yolo_loss(P, t, hyp) / len(x)


def localization_error(model: RadYoloModel, dataset) -> float:
    """Mean squared centre error over object cells."""
    dataset = list(dataset)
    P = model.predict([s for s, _ in dataset])
    T = np.stack([g.as_arrays() for _, g in dataset])
    obj = T[..., C] > 0
    if not obj.any():
        return 0.0
    err = (P[..., X] - T[..., X]) ** 2 + (P[..., Y] - T[..., Y]) ** 2
    return float(err[obj].mean())


# ---------------------------------------------------------------------------
# calibration

def percentile_nearest_rank(values, q: float) -> float:
    """Nearest-rank percentile: the ceil(q/100 * n)-th smallest value; 0 for no values."""
    v = np.sort(np.asarray(list(values), dtype=np.float64))
    if v.size == 0:
        return 0.0
    rank = max(1, int(math.ceil(q / 100.0 * v.size - 1e-12)))
    return float(v[min(rank, v.size) - 1])


@dataclass
class CalibrationStats:
    c_RO_max: float
    c_RO_min: float
    c_IO_max: float
    c_IO_min: float
    c_BNO_max: float

    @property
    def t_o(self) -> float:
        return max(self.c_BNO_max, min(self.c_RO_max, self.c_IO_max))

    @property
    def t_o_w(self) -> float:
        return self.c_RO_min

    def to_dict(self) -> dict:
        return asdict(self)


def calibration_from_grids(P: np.ndarray, T: np.ndarray) -> CalibrationStats:
    """Confidence statistics from predicted grids ``P`` and ground-truth grids ``T``."""
    r_max, r_min, i_max, i_min, b_max = [], [], [], [], []
    for p, t in zip(P, T):
        conf_r = p[:, C] * p[:, P_R]
        conf_i = p[:, C] * p[:, P_I]
        conf_b = p[:, C] * (1.0 - (p[:, P_R] + p[:, P_I]))
        radar = t[:, P_R] > 0
        interf = t[:, P_I] > 0
        empty = t[:, C] == 0
        if radar.any():
            r_max.append(conf_r[radar].max())
            r_min.append(conf_r[radar].min())
        if interf.any():
            i_max.append(conf_i[interf].max())
            i_min.append(conf_i[interf].min())
        if empty.any():
            b_max.append(conf_b[empty].max())
    if not r_max:
        raise MissingStratumError("calibration set contains no radar objects")
    stats = CalibrationStats(
        percentile_nearest_rank(r_max, 10), percentile_nearest_rank(r_min, 10),
        percentile_nearest_rank(i_max, 10), percentile_nearest_rank(i_min, 10),
        percentile_nearest_rank(b_max, 95))
    if stats.t_o_w > stats.t_o:
        log.warning("relaxed threshold %.4f exceeds detection threshold %.4f",
                    stats.t_o_w, stats.t_o)
    return stats


def calibrate(model: RadYoloModel, trainset) -> CalibrationStats:
    trainset = list(trainset)
    P = model.predict([s for s, _ in trainset])
    T = np.stack([g.as_arrays() for _, g in trainset])
    return calibration_from_grids(P, T)


def save_calibration(path, stats: CalibrationStats, extra: dict | None = None) -> None:
    doc = {"radyolo": stats.to_dict(), "t_o": stats.t_o, "t_o_w": stats.t_o_w}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_calibration(path) -> CalibrationStats:
    return CalibrationStats(**json.loads(Path(path).read_text())["radyolo"])


# ---------------------------------------------------------------------------
# prediction

@dataclass(frozen=True)
class Detection:
    cell: int
    cls: str  # "radar" | "interference"
    box: Box  # global coordinates
    conf_radar: float
    conf_interf: float


def _cell_box(P: np.ndarray, i: int) -> Box:
    return Box(float(P[i, X]), (i + float(P[i, Y])) / N_CELLS, float(P[i, W]), float(P[i, H]))


def decode(P, t_o: float) -> list[Detection]:
    """Cells whose best class confidence reaches ``t_o``; radar only on a strict win."""
    P = np.asarray(P, dtype=np.float64).reshape(N_CELLS, 7)
    conf_r = P[:, C] * P[:, P_R]
    conf_i = P[:, C] * P[:, P_I]
    dets = []
    for i in range(N_CELLS):
        if max(conf_r[i], conf_i[i]) >= t_o:
            cls = "radar" if conf_r[i] > conf_i[i] else "interference"
            dets.append(Detection(i, cls, _cell_box(P, i), float(conf_r[i]), float(conf_i[i])))
    return dets


def decode_radar_only(P, threshold: float) -> list[Detection]:
    """Radar cells whose radar confidence reaches ``threshold``, ignoring interference."""
    P = np.asarray(P, dtype=np.float64).reshape(N_CELLS, 7)
    conf_r = P[:, C] * P[:, P_R]
    conf_i = P[:, C] * P[:, P_I]
    return [Detection(i, "radar", _cell_box(P, i), float(conf_r[i]), float(conf_i[i]))
            for i in range(N_CELLS) if conf_r[i] >= threshold]


@dataclass
class RadarEstimate:
    num_pulses: int
    center_freq_frac: float
    bandwidth_frac: float
    pulse_width_frac: float
    pulse_interval_frac: float | None
    bands: list = field(default_factory=list)  # merged [lo, hi] frequency fractions
    cells: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bands"] = [list(b) for b in self.bands]
        return d


@dataclass
class InterferenceEstimate:
    center_freq_frac: float
    bandwidth_frac: float
    on_segments: list  # (y, h) pairs
    bands: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"center_freq_frac": self.center_freq_frac, "bandwidth_frac": self.bandwidth_frac,
                "on_segments": [list(s) for s in self.on_segments],
                "bands": [list(b) for b in self.bands]}


def _bands(dets) -> list[tuple[float, float]]:
    return merge_intervals((max(0.0, d.box.x - d.box.w / 2), min(1.0, d.box.x + d.box.w / 2))
                           for d in dets)


def estimate_radar(detections) -> RadarEstimate:
    dets = [d for d in detections if d.cls == "radar"]
    if not dets:
        raise ValueError("radar estimation needs at least one radar detection")
    bands = _bands(dets)
    ys = sorted(d.box.y for d in dets)
    interval = float(np.min(np.diff(ys))) if len(ys) > 1 else None
    return RadarEstimate(
        num_pulses=len(dets),
        center_freq_frac=float(np.mean([d.box.x for d in dets])),
        bandwidth_frac=union_length(bands),
        pulse_width_frac=float(min(d.box.h for d in dets)),
        pulse_interval_frac=interval,
        bands=bands,
        cells=sorted(d.cell for d in dets),
    )


def estimate_interference(detections) -> InterferenceEstimate:
    dets = [d for d in detections if d.cls == "interference"]
    if not dets:
        raise ValueError("interference estimation needs at least one interference detection")
    bands = _bands(dets)
    segs = merge_intervals((max(0.0, d.box.y - d.box.h / 2), min(1.0, d.box.y + d.box.h / 2))
                           for d in dets)
    return InterferenceEstimate(
        center_freq_frac=float(np.mean([d.box.x for d in dets])),
        bandwidth_frac=union_length(bands),
        on_segments=[((a + b) / 2, b - a) for a, b in segs],
        bands=bands,
    )
