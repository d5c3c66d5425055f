"""Two-flow window decision: grid detector first, wavelet classifier as fallback.

Flow 1 runs the grid detector on the spectrogram. Only when it finds no
radar does flow 2 run: the wavelet classifier decides radar presence and,
on a positive, the grid is re-decoded at the relaxed radar threshold to
recover parameters. Interference always comes from flow 1.
"""
from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .radyolo import (CalibrationStats, InterferenceEstimate, RadarEstimate, RadYoloModel,
                      decode, estimate_interference, estimate_radar)
from .signal_synth import IQCapture
from .spectro_pre import N_SAMPLES, SpectrogramTensor, make_spectrogram
from .wavelet_cnn import WaveletCalibration, WaveletModel, estimate_via_override
from .wavelet_pre import make_wavelet_stack


class Provenance(str, Enum):
    FLOW1 = "flow1"
    FLOW2_OVERRIDE = "flow2_override"
    FLOW2_DETECT_ONLY = "flow2_detect_only"


@dataclass
class Decision:
    radar_present: bool
    interference_present: bool
    radar_estimate: RadarEstimate | None
    interference_estimate: InterferenceEstimate | None
    provenance: Provenance
    flow1_radar: bool = False
    flow2_ran: bool = False
    wavelet_prob: float | None = None
    window_index: int = 0
    latency_s: float = 0.0
    flow_latency_s: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "window_index": self.window_index,
            "radar_present": self.radar_present,
            "interference_present": self.interference_present,
            "radar_estimate": self.radar_estimate.to_dict() if self.radar_estimate else None,
            "interference_estimate": (self.interference_estimate.to_dict()
                                      if self.interference_estimate else None),
            "provenance": self.provenance.value,
            "flow1_radar": self.flow1_radar,
            "flow2_ran": self.flow2_ran,
            "wavelet_prob": self.wavelet_prob,
            "latency_s": self.latency_s,
            "flow_latency_s": self.flow_latency_s,
        }


@dataclass
class Detector:
    """Trained models plus their calibration."""

    radyolo: RadYoloModel
    stats: CalibrationStats
    wavelet: WaveletModel | None = None
    wavelet_cal: WaveletCalibration | None = None
    flow2_calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def has_flow2(self) -> bool:
        return self.wavelet is not None and self.wavelet_cal is not None


def flow1(P: np.ndarray, stats: CalibrationStats):
    """(radar estimate or None, interference estimate or None) from one grid."""
    dets = decode(P, stats.t_o)
    radar = estimate_radar(dets) if any(d.cls == "radar" for d in dets) else None
    interf = (estimate_interference(dets)
              if any(d.cls == "interference" for d in dets) else None)
    return radar, interf


def process_window(s: IQCapture, det: Detector, *, use_flow2: bool = True,
                   spectrogram: SpectrogramTensor | None = None, stack=None,
                   window_index: int = 0) -> Decision:
    """Decide one 160000-sample window.

    ``spectrogram`` and ``stack`` optionally supply precomputed features.
    With ``use_flow2=False`` only the grid detector runs.
    """
    if len(s) != N_SAMPLES:
        raise ValueError(f"window must hold {N_SAMPLES} samples, got {len(s)}")
    if det.radyolo is None or det.stats is None:
        raise ConfigurationError("grid detector model and calibration are required")
    if use_flow2 and not det.has_flow2:
        raise ConfigurationError("wavelet model and threshold are required for flow 2")
    t0 = time.perf_counter()
    x = spectrogram if spectrogram is not None else make_spectrogram(s)
    P = det.radyolo.predict([x])[0]
    radar, interf = flow1(P, det.stats)
    t1 = time.perf_counter()
    lat = {"flow1": t1 - t0}
    if radar is not None or not use_flow2:
        d = Decision(radar is not None, interf is not None, radar, interf, Provenance.FLOW1,
                     flow1_radar=radar is not None)
    else:
        with det._lock:
            det.flow2_calls += 1
        w = stack if stack is not None else make_wavelet_stack(s)
        prob = float(det.wavelet.predict_proba([w])[0])
        positive = prob >= det.wavelet_cal.threshold
        est = estimate_via_override(P, det.stats) if positive else None
        if not positive:
            prov = Provenance.FLOW1
        elif est is not None:
            prov = Provenance.FLOW2_OVERRIDE
        else:
            prov = Provenance.FLOW2_DETECT_ONLY
        d = Decision(positive, interf is not None, est, interf, prov,
                     flow1_radar=False, flow2_ran=True, wavelet_prob=prob)
        lat["flow2"] = time.perf_counter() - t1
    d.window_index = window_index
    d.latency_s = time.perf_counter() - t0
    d.flow_latency_s = lat
    return d


def windows(capture: IQCapture):
    """Non-overlapping 160000-sample windows; a trailing partial window is dropped."""
    n = len(capture) // N_SAMPLES
    if n == 0:
        raise ValueError(f"capture of {len(capture)} samples is shorter than one window")
    for i in range(n):
        yield IQCapture(capture.samples[i * N_SAMPLES:(i + 1) * N_SAMPLES],
                        capture.sample_rate_hz, capture.center_freq_hz)


def run_stream(capture: IQCapture, det: Detector, *, use_flow2: bool = True,
               workers: int = 1) -> list[Decision]:
    """Decisions for every window of a long capture, in window order."""
    wins = list(windows(capture))

    def one(i):
        return process_window(wins[i], det, use_flow2=use_flow2, window_index=i)

    if workers <= 1:
        return [one(i) for i in range(len(wins))]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(one, range(len(wins))))


def write_decision_log(path, decisions, window_s: float = N_SAMPLES / 10e6) -> None:
    """One JSON object per line, with the window start time."""
    with Path(path).open("w") as fh:
        for d in decisions:
            rec = d.to_dict()
            rec["window_start_s"] = d.window_index * window_s
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
