"""On-disk capture store: ``<name>.iq`` holds interleaved little-endian float32
I/Q pairs, ``<name>.meta`` a JSON sidecar with rate, centre frequency and an
optional annotation."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .signal_synth import Annotation, IQCapture


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".iq", ".meta"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".iq"), p.with_name(p.name + ".meta")


def write_capture(path, capture: IQCapture, annotation: Annotation | None = None,
                  extra: dict | None = None) -> tuple[Path, Path]:
    iq_path, meta_path = _paths(path)
    iq_path.parent.mkdir(parents=True, exist_ok=True)
    inter = np.empty(2 * len(capture), dtype="<f4")
    inter[0::2] = capture.samples.real
    inter[1::2] = capture.samples.imag
    inter.tofile(iq_path)
    meta = {
        "sample_rate_hz": capture.sample_rate_hz,
        "center_freq_hz": capture.center_freq_hz,
        "num_samples": len(capture),
        "annotation": annotation.to_dict() if annotation is not None else None,
    }
    if extra:
        meta["extra"] = extra
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return iq_path, meta_path


def read_capture(path) -> tuple[IQCapture, Annotation | None, dict]:
    iq_path, meta_path = _paths(path)
    meta = json.loads(meta_path.read_text())
    raw = np.fromfile(iq_path, dtype="<f4")
    if raw.size % 2:
        raise ValueError(f"{iq_path}: odd number of float32 values")
    if "num_samples" in meta and raw.size // 2 != meta["num_samples"]:
        raise ValueError(f"{iq_path}: {raw.size // 2} samples, sidecar says {meta['num_samples']}")
    samples = raw[0::2] + 1j * raw[1::2]
    cap = IQCapture(samples, meta["sample_rate_hz"], meta.get("center_freq_hz", 0.0))
    ann = meta.get("annotation")
    return cap, (Annotation.from_dict(ann) if ann else None), meta.get("extra", {})


def read_raw_iq(path, sample_rate_hz: float) -> IQCapture:
    """Headerless interleaved float32 file."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 2:
        raise ValueError(f"{path}: odd number of float32 values")
    return IQCapture(raw[0::2] + 1j * raw[1::2], sample_rate_hz)
