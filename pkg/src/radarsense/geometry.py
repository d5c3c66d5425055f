"""Boxes on the normalized (frequency, time) plane and 1-D interval helpers."""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Box:
    """Centre/size box; ``x``/``w`` are fractions of the monitored band,
    ``y``/``h`` fractions of the observation window."""

    x: float
    y: float
    w: float
    h: float

    @property
    def x_range(self) -> tuple[float, float]:
        return self.x - self.w / 2, self.x + self.w / 2

    @property
    def y_range(self) -> tuple[float, float]:
        return self.y - self.h / 2, self.y + self.h / 2

    @classmethod
    def from_edges(cls, x0: float, x1: float, y0: float, y1: float) -> "Box":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def clipped(self) -> "Box | None":
        """Clip to the unit square; ``None`` when nothing remains."""
        x0, x1 = max(0.0, self.x_range[0]), min(1.0, self.x_range[1])
        y0, y1 = max(0.0, self.y_range[0]), min(1.0, self.y_range[1])
        if x1 < x0 or y1 < y0 or (x1 == x0 and self.w > 0) or (y1 == y0 and self.h > 0):
            return None
        return Box.from_edges(x0, x1, y0, y1)

    def to_dict(self) -> dict:
        return asdict(self)


def merge_intervals(intervals, touch_tol: float = 1e-12) -> list[tuple[float, float]]:
    """Union of closed intervals; touching intervals are merged."""
    out: list[list[float]] = []
    for lo, hi in sorted((float(a), float(b)) for a, b in intervals):
        if out and lo <= out[-1][1] + touch_tol:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


def union_length(intervals) -> float:
    return sum(b - a for a, b in merge_intervals(intervals))


def intersection_length(a, b) -> float:
    """Length of (union of ``a``) ∩ (union of ``b``)."""
    ma, mb = merge_intervals(a), merge_intervals(b)
    total, i, j = 0.0, 0, 0
    while i < len(ma) and j < len(mb):
        lo = max(ma[i][0], mb[j][0])
        hi = min(ma[i][1], mb[j][1])
        if hi > lo:
            total += hi - lo
        if ma[i][1] < mb[j][1]:
            i += 1
        else:
            j += 1
    return total
