"""Compressed log-spectrogram and grid-cell training targets.

A 16 ms window of 160000 samples is cut into 10000 rows of 16 samples,
each row gets a 16-point DFT (rectangular window, no overlap), magnitudes
go to dB, and every 32 consecutive rows collapse to their column-wise max.
The trailing 16 rows (26 us) do not fill a block of 32 and are dropped.

Columns are in ascending frequency order (``fftshift``): column 8 is DC,
column 0 is -5 MHz.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Box
from .signal_synth import Annotation, IQCapture

N_SAMPLES = 160_000
DFT_SIZE = 16
ROWS_PER_BLOCK = 32
N_ROWS = 312
N_CELLS = 32
EPS = 1e-12


@dataclass
class SpectrogramTensor:
    values: np.ndarray  # (312, 16) float32, dB

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (N_ROWS, DFT_SIZE):
            raise ValueError(f"spectrogram must be {N_ROWS}x{DFT_SIZE}, got {self.values.shape}")


def row_dft(samples: np.ndarray) -> np.ndarray:
    """Uncompressed complex STFT, shape (10000, 16), columns fftshifted."""
    s = np.asarray(samples)
    if s.shape != (N_SAMPLES,):
        raise ValueError(f"expected {N_SAMPLES} samples, got {s.shape}")
    return np.fft.fftshift(np.fft.fft(s.astype(np.complex128).reshape(-1, DFT_SIZE), axis=1),
                           axes=1)


def log_spectrogram(samples: np.ndarray) -> np.ndarray:
    """Uncompressed dB spectrogram X_u, shape (10000, 16)."""
    return 20.0 * np.log10(np.abs(row_dft(samples)) + EPS)


def compress_rows(xu: np.ndarray) -> np.ndarray:
    """Column-wise max over blocks of 32 rows; trailing partial block dropped."""
    used = N_ROWS * ROWS_PER_BLOCK
    return xu[:used].reshape(N_ROWS, ROWS_PER_BLOCK, -1).max(axis=1)


def make_spectrogram(s: IQCapture) -> SpectrogramTensor:
    return SpectrogramTensor(compress_rows(log_spectrogram(s.samples)))


def dump_spectrogram(path, x: SpectrogramTensor) -> None:
    """Flat little-endian float32 dump, row-major."""
    x.values.astype("<f4").tofile(path)


def load_spectrogram_dump(path) -> SpectrogramTensor:
    return SpectrogramTensor(np.fromfile(path, dtype="<f4").reshape(N_ROWS, DFT_SIZE))


# ---------------------------------------------------------------------------
# grid targets

NONE, RADAR, INTERFERENCE = 0, 1, 2


@dataclass
class GridTarget:
    """Per-cell ground truth.

    ``boxes[i]`` is ``(x, y_cell, w, h)``: ``y_cell`` is the object centre's
    offset inside cell ``i`` in cell units [0, 1); ``x``, ``w`` and ``h`` are
    fractions of the whole band / window.
    """

    objectness: np.ndarray  # (32,) 0/1
    cls: np.ndarray  # (32,) NONE / RADAR / INTERFERENCE
    boxes: np.ndarray  # (32, 4)

    @classmethod
    def empty(cls) -> "GridTarget":
        return cls(np.zeros(N_CELLS, np.float32), np.zeros(N_CELLS, np.int8),
                   np.zeros((N_CELLS, 4), np.float32))

    def global_box(self, i: int) -> Box:
        x, yc, w, h = (float(v) for v in self.boxes[i])
        return Box(x, (i + yc) / N_CELLS, w, h)

    def as_arrays(self) -> np.ndarray:
        """(32, 7) layout matching the network output columns."""
        out = np.zeros((N_CELLS, 7), np.float32)
        out[:, 0] = self.cls == RADAR
        out[:, 1] = self.cls == INTERFERENCE
        out[:, 2:6] = self.boxes
        out[:, 6] = self.objectness
        return out


def cell_of(y: float) -> int:
    """Zero-based grid cell holding normalized time ``y``."""
    return min(N_CELLS - 1, max(0, int(np.floor(y * N_CELLS))))


def annotate_grid(a: Annotation) -> GridTarget:
    """Assign each box to the cell holding its centre.

    Interference takes a cell over radar. Between two boxes of the same
    class the one with the earlier centre keeps the cell.
    """
    t = GridTarget.empty()
    centre = np.full(N_CELLS, np.inf)
    for kind, boxes in ((INTERFERENCE, a.interference_boxes), (RADAR, a.radar_boxes)):
        for b in sorted(boxes, key=lambda b: b.y):
            i = cell_of(b.y)
            if t.objectness[i]:
                if t.cls[i] != kind or b.y >= centre[i]:
                    continue
            t.objectness[i] = 1
            t.cls[i] = kind
            centre[i] = b.y
            t.boxes[i] = (b.x, b.y * N_CELLS - i, b.w, b.h)
    return t
