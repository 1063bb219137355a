"""Axis-aligned boxes in pixel-edge coordinates.

A box ``(x0, y0, x1, y1)`` covers the half-open pixel range
``[x0, x1) x [y0, y1)``, so a mask component spanning columns 3..7 has
``x0 = 3`` and ``x1 = 8``.
"""

from __future__ import annotations

from typing import NamedTuple


class Box(NamedTuple):
    cls: int
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def area(self) -> float:
        return max(self.x1 - self.x0, 0.0) * max(self.y1 - self.y0, 0.0)

    @property
    def center(self) -> tuple:
        return 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)

    def to_dict(self) -> dict:
        return {"class": int(self.cls), "x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(int(d["class"]), float(d["x0"]), float(d["y0"]), float(d["x1"]), float(d["y1"]))


class Detection(NamedTuple):
    cls: int
    score: float
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def box(self) -> Box:
        return Box(self.cls, self.x0, self.y0, self.x1, self.y1)


def iou_box(a, b) -> float:
    """Intersection over union of two boxes given as objects with x0..y1 fields."""
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter
    return inter / union if union > 0 else 0.0
