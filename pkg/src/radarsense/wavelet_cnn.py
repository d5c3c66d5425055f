"""Binary radar classifier on the three-sub-band scalogram stack.

The network sees ``log10`` of the compressed CWT magnitudes (radar peaks
sit many orders of magnitude above the noise floor), standardized with
training-set statistics, and outputs a 2-way softmax whose first entry is
the radar probability.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import MissingStratumError
from .nn_core import Adam, Tensor, build_network, load_checkpoint, save_checkpoint
from .nn_core.layers import Network
from .radyolo import CalibrationStats, RadarEstimate, decode_radar_only, estimate_radar
from .wavelet_pre import N_LAGS_OUT, N_SCALES, ScalogramTensor

log = logging.getLogger(__name__)

PROB_CLIP = 1e-7
FLOOR = 1e-6
DEFAULT_G = 5.0

DEFAULT_ARCH = [
    {"type": "conv2d", "out": 16, "kernel": 3, "stride": 2},
    {"type": "relu"},
    {"type": "conv2d", "out": 32, "kernel": 3, "stride": 2},
    {"type": "relu"},
    {"type": "conv2d", "out": 64, "kernel": 3, "stride": 2},
    {"type": "relu"},
    {"type": "global_avg_pool"},
    {"type": "dense", "out": 2},
    {"type": "softmax"},
]


def features(stacks) -> np.ndarray:
    """(B, 3, 400, 64) log-magnitude network input."""
    arrs = [w.values if isinstance(w, ScalogramTensor) else np.asarray(w) for w in stacks]
    if not arrs:
        return np.zeros((0, 3, N_LAGS_OUT, N_SCALES), np.float32)
    x = np.stack(arrs).astype(np.float32).reshape(-1, 3, N_LAGS_OUT, N_SCALES)
    return np.log10(np.maximum(x, FLOOR))


def bce_loss(probs, labels):
    """-sum_b [p log2 q + (1 - p) log2 (1 - q)] for softmax outputs ``probs`` (B, 2).

    ``q = probs[:, 0]`` and ``1 - q`` is read off ``probs[:, 1]``; both are
    clipped away from 0 and 1. Returns a Tensor for Tensor input, else a float.
    """
    p = np.asarray(labels, dtype=np.float64).reshape(-1)
    as_float = not isinstance(probs, Tensor)
    if as_float:
        probs = Tensor(np.asarray(probs, dtype=np.float64))
    if probs.shape != (len(p), 2):
        raise ValueError(f"expected ({len(p)}, 2) probabilities, got {probs.shape}")
    dt = probs.dtype
    q = probs[:, 0].clip(PROB_CLIP, 1 - PROB_CLIP)
    q_bar = probs[:, 1].clip(PROB_CLIP, 1 - PROB_CLIP)
    ll = q.log() * p.astype(dt) + q_bar.log() * (1 - p).astype(dt)
    loss = -(ll.sum() * (1 / np.log(2)))
    return loss.item() if as_float else loss


@dataclass
class WaveletModel:
    net: Network
    history: list = field(default_factory=list)

    def predict_proba(self, stacks, batch_size: int = 32) -> np.ndarray:
        """Radar probability for each scalogram stack."""
        x = features(stacks)
        out = [self.net(Tensor(x[i:i + batch_size])).data[:, 0]
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out).astype(np.float64) if out else np.zeros(0)

    def save(self, path) -> None:
        save_checkpoint(path, self.net, meta={"history": self.history, "flow": "wavelet"})

    @classmethod
    def load(cls, path) -> "WaveletModel":
        net, meta = load_checkpoint(path)
        return cls(net, meta.get("history", []))


def train_waveletcnn(dataset, epochs: int = 20, seed: int = 0, *, lr: float = 1e-3,
                     batch_size: int = 16, arch: list | None = None) -> WaveletModel:
    """Fit the classifier on ``(ScalogramTensor, has_radar)`` pairs with Adam."""
    dataset = list(dataset)
    labels = np.array([bool(y) for _, y in dataset])
    if len(set(labels.tolist())) < 2:
        raise ValueError("training set needs both radar and no-radar examples")
    x = features([w for w, _ in dataset])
    spec = copy.deepcopy(arch or DEFAULT_ARCH)
    spec.insert(0, {"type": "standardize", "shift": float(x.mean()),
                    "scale": float(x.std() or 1.0)})
    net = build_network(spec, (3, N_LAGS_OUT, N_SCALES), seed=seed)
    opt = Adam(net.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    model = WaveletModel(net)
    for epoch in range(epochs):
        order = rng.permutation(len(x))
        total, correct = 0.0, 0
        for i in range(0, len(x), batch_size):
            idx = order[i:i + batch_size]
            out = net(Tensor(x[idx]))
            loss = bce_loss(out, labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            correct += int(np.sum((out.data[:, 0] >= 0.5) == labels[idx]))
        rec = {"epoch": epoch + 1, "train_loss": total / len(x), "train_acc": correct / len(x)}
        model.history.append(rec)
        log.info("wavelet epoch %d: %s", epoch + 1, rec)
    return model


@dataclass
class WaveletCalibration:
    threshold: float  # t_w
    g: float = DEFAULT_G

    def to_dict(self) -> dict:
        return asdict(self)


def threshold_from_probs(radar_probs, g: float = DEFAULT_G) -> float:
    """t_w: the g-th nearest-rank percentile of radar probabilities on radar examples."""
    from .radyolo import percentile_nearest_rank

    if not 0 < g < 50:
        raise ValueError(f"percentile g must lie in (0, 50), got {g}")
    probs = list(radar_probs)
    if not probs:
        raise MissingStratumError("calibration set contains no radar examples")
    return percentile_nearest_rank(probs, g)


def calibrate_tw(model: WaveletModel, trainset, g: float = DEFAULT_G) -> WaveletCalibration:
    if not 0 < g < 50:
        raise ValueError(f"percentile g must lie in (0, 50), got {g}")
    radar = [w for w, y in trainset if y]
    return WaveletCalibration(threshold_from_probs(model.predict_proba(radar), g), g)


def predict_radar(model: WaveletModel, stack: ScalogramTensor, t_w: float) -> bool:
    return bool(model.predict_proba([stack])[0] >= t_w)


def estimate_via_override(P, stats: CalibrationStats) -> RadarEstimate | None:
    """Radar estimate from the grid re-decoded at the relaxed threshold, if any cell passes."""
    dets = decode_radar_only(P, stats.t_o_w)
    return estimate_radar(dets) if dets else None


def save_wavelet_calibration(path, cal: WaveletCalibration) -> None:
    Path(path).write_text(json.dumps({"wavelet": cal.to_dict()}, indent=2, sort_keys=True))


def load_wavelet_calibration(path) -> WaveletCalibration:
    return WaveletCalibration(**json.loads(Path(path).read_text())["wavelet"])
