"""Box and trajectory overlap arithmetic.

Boxes are ``(x, y, w, h)`` in pixels with the right edge at ``x + w``.
Trajectories hold one box per frame over an inclusive, absolute frame span.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class Box(NamedTuple):
    x: float
    y: float
    w: float
    h: float

    def validate(self) -> "Box":
        if not all(np.isfinite(self)):
            raise ValueError(f"box has non-finite coordinates: {tuple(self)}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive width and height: {tuple(self)}")
        return self

    @classmethod
    def from_corners(cls, x1, y1, x2, y2) -> "Box":
        return cls(float(x1), float(y1), float(x2 - x1), float(y2 - y1))

    def corners(self):
        return self.x, self.y, self.x + self.w, self.y + self.h


class TrajectorySpan(NamedTuple):
    begin: int
    end: int

    def __len__(self) -> int:
        return self.end - self.begin + 1

    def intersect(self, other: "TrajectorySpan") -> "TrajectorySpan | None":
        lo, hi = max(self.begin, other.begin), min(self.end, other.end)
        return TrajectorySpan(lo, hi) if lo <= hi else None

    def contains(self, other: "TrajectorySpan") -> bool:
        return self.begin <= other.begin and other.end <= self.end


@dataclass
class Trajectory:
    """A contiguous per-frame box sequence starting at absolute frame ``begin``."""

    begin: int
    boxes: np.ndarray
    category: str
    score: float = 1.0
    track_id: str | None = None
    detected: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.begin = int(self.begin)
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if len(self.boxes) == 0:
            raise ValueError("trajectory needs at least one box")
        if self.detected is not None:
            self.detected = np.asarray(self.detected, dtype=bool)
            if self.detected.shape != (len(self.boxes),):
                raise ValueError("detected flags must match the number of boxes")

    @property
    def end(self) -> int:
        return self.begin + len(self.boxes) - 1

    @property
    def span(self) -> TrajectorySpan:
        return TrajectorySpan(self.begin, self.end)

    def __len__(self) -> int:
        return len(self.boxes)

    def box_at(self, frame: int) -> np.ndarray:
        if not self.begin <= frame <= self.end:
            raise IndexError(f"frame {frame} outside trajectory span {tuple(self.span)}")
        return self.boxes[frame - self.begin]

    def boxes_over(self, begin: int, end: int) -> np.ndarray:
        if begin < self.begin or end > self.end:
            raise IndexError(f"span [{begin}, {end}] outside trajectory span {tuple(self.span)}")
        return self.boxes[begin - self.begin:end - self.begin + 1]

    def sliced(self, begin: int, end: int) -> "Trajectory":
        detected = None
        if self.detected is not None:
            detected = self.detected[begin - self.begin:end - self.begin + 1]
        return Trajectory(begin, self.boxes_over(begin, end).copy(), self.category,
                          self.score, self.track_id, detected)


def _as_boxes(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).reshape(-1, 4)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two ``(x, y, w, h)`` boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ax2, ay2, bx2, by2 = ax + aw, ay + ah, bx + bw, by + bh
    iw = min(ax2, bx2) - max(ax, bx)
    ih = min(ay2, by2) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # Areas come from the same corner arithmetic as the intersection, so
    # identical boxes score exactly 1; the clamp guards nested-box rounding.
    union = (ax2 - ax) * (ay2 - ay) + (bx2 - bx) * (by2 - by) - inter
    return min(inter / union, 1.0)


def iou_many(a, b) -> np.ndarray:
    """Row-wise IoU of two equally shaped ``(n, 4)`` box arrays."""
    a, b = _as_boxes(a), _as_boxes(b)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2, bx2) - np.maximum(a[:, 0], b[:, 0])
    ih = np.minimum(ay2, by2) - np.maximum(a[:, 1], b[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (ax2 - a[:, 0]) * (ay2 - a[:, 1]) + (bx2 - b[:, 0]) * (by2 - b[:, 1]) - inter
    return np.minimum(inter / union, 1.0)


def iou_matrix(a, b) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    a, b = _as_boxes(a), _as_boxes(b)
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None]) - np.maximum(a[:, 0][:, None], b[:, 0][None])
    ih = np.minimum(ay2[:, None], by2[None]) - np.maximum(a[:, 1][:, None], b[:, 1][None])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = ((ax2 - a[:, 0]) * (ay2 - a[:, 1]))[:, None] + ((bx2 - b[:, 0]) * (by2 - b[:, 1]))[None] - inter
    return np.minimum(inter / union, 1.0)


def _common_frames(tx: Trajectory, ty: Trajectory):
    lo, hi = max(tx.begin, ty.begin), min(tx.end, ty.end)
    if lo > hi:
        return None
    return tx.boxes_over(lo, hi), ty.boxes_over(lo, hi)


def trajectory_overlap(tx: Trajectory, ty: Trajectory, beta: float = 0.5) -> float:
    """Fraction of co-occurring frames whose box IoU exceeds ``beta``; 0 without co-occurrence."""
    common = _common_frames(tx, ty)
    if common is None:
        return 0.0
    bx, by = common
    return int(np.count_nonzero(iou_many(bx, by) > beta)) / len(bx)


def viou(tx: Trajectory, ty: Trajectory) -> float:
    """Sum of per-frame IoU over the temporal intersection, divided by the temporal union length."""
    common = _common_frames(tx, ty)
    if common is None:
        return 0.0
    union = max(tx.end, ty.end) - min(tx.begin, ty.begin) + 1
    return float(iou_many(*common).sum()) / union


def clip_box(box, frame_w: float, frame_h: float):
    """Clip a box to ``[0, frame_w] x [0, frame_h]``; ``None`` when nothing is left."""
    x1, y1 = max(box[0], 0.0), max(box[1], 0.0)
    x2, y2 = min(box[0] + box[2], frame_w), min(box[1] + box[3], frame_h)
    if x2 <= x1 or y2 <= y1:
        return None
    return Box(x1, y1, x2 - x1, y2 - y1)
