"""Per-segment features: body-part behavior descriptor, relative motion, semantic context."""
from __future__ import annotations

import hashlib
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Box, Trajectory, TrajectorySpan, clip_box, iou_matrix
from .pairing import CandidateSegment

NUM_JOINTS = 17

# Standard 17-keypoint order used by keypoint files.
JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

MOTION_DIM = 15


@dataclass(frozen=True)
class FeatureConfig:
    part_ratio: float = 0.2
    min_visibility: float = 0.3
    roi_size: int = 7
    num_parts: int = NUM_JOINTS

    def __post_init__(self):
        if not 0.0 < self.part_ratio < 1.0:
            raise ValueError("part_ratio must lie in (0, 1)")
        if not 0.0 <= self.min_visibility <= 1.0:
            raise ValueError("min_visibility must lie in [0, 1]")
        if self.roi_size < 1:
            raise ValueError("roi_size must be >= 1")
        if not 1 <= self.num_parts <= NUM_JOINTS:
            raise ValueError(f"num_parts must lie in [1, {NUM_JOINTS}]")


@dataclass
class Skeleton:
    joints: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        self.visibility = np.asarray(self.visibility, dtype=np.float64)
        if self.joints.shape != (NUM_JOINTS, 2) or self.visibility.shape != (NUM_JOINTS,):
            raise ValueError(f"skeleton needs exactly {NUM_JOINTS} joints")
        if np.any((self.visibility < 0) | (self.visibility > 1)):
            raise ValueError("joint visibility must lie in [0, 1]")

    def bbox(self, min_visibility: float = 0.3) -> Box:
        """Tight box around visible joints (all joints when none is visible)."""
        pts = self.joints[self.visibility >= min_visibility]
        if len(pts) == 0:
            pts = self.joints
        x1, y1 = pts.min(axis=0)
        x2, y2 = pts.max(axis=0)
        return Box(x1, y1, max(x2 - x1, 1.0), max(y2 - y1, 1.0))


@dataclass
class SkeletonTrajectory:
    host: Trajectory
    skeletons: dict[int, Skeleton] = field(default_factory=dict)

    @property
    def span(self) -> TrajectorySpan:
        return self.host.span


@dataclass
class FeatureGrid:
    frame: int
    values: np.ndarray
    frame_w: float
    frame_h: float

    @property
    def shape(self):
        return self.values.shape


class EmbeddingTable(Mapping):
    """Category token -> word vector, all of one dimension."""

    def __init__(self, vectors: Mapping[str, Sequence[float]]):
        self._vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        dims = {v.shape for v in self._vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"embedding vectors have inconsistent dimensions: {sorted(dims)}")
        self.dim = next(iter(dims))[0] if dims else 0

    def __getitem__(self, token):
        try:
            return self._vectors[token]
        except KeyError:
            raise KeyError(f"category {token!r} missing from embedding table") from None

    def __iter__(self):
        return iter(self._vectors)

    def __len__(self):
        return len(self._vectors)

    def fingerprint(self, tokens=None) -> str:
        """SHA-256 over the vectors of ``tokens`` (default: all, sorted)."""
        h = hashlib.sha256()
        for t in sorted(self._vectors if tokens is None else tokens):
            h.update(t.encode("utf-8") + b"\0" + self[t].astype("<f8").tobytes())
        return h.hexdigest()


@dataclass
class FeatureBundle:
    f_A: np.ndarray
    f_M: np.ndarray
    f_S: np.ndarray

    def concat(self) -> np.ndarray:
        return np.concatenate([self.f_A, self.f_M, self.f_S])


def assign_skeletons(skeletons_per_frame: Mapping[int, Sequence[Skeleton]], humans: Sequence[Trajectory],
                     min_visibility: float = 0.3) -> list[SkeletonTrajectory]:
    """Attach each frame's skeletons to the human trajectory their box overlaps most.

    A skeleton only goes to its best-overlapping trajectory; when two skeletons
    pick the same trajectory on a frame, the higher IoU keeps it.
    """
    out = [SkeletonTrajectory(h) for h in humans]
    for frame in sorted(skeletons_per_frame):
        skels = skeletons_per_frame[frame]
        live = [k for k, h in enumerate(humans) if h.begin <= frame <= h.end]
        if not skels or not live:
            continue
        ious = iou_matrix([s.bbox(min_visibility) for s in skels], [humans[k].box_at(frame) for k in live])
        best_col = ious.argmax(axis=1)
        claims: dict[int, tuple[float, int]] = {}
        for s, col in enumerate(best_col):
            score = ious[s, col]
            if score <= 0:
                continue
            if col not in claims or score > claims[col][0]:
                claims[col] = (score, s)
        for col, (_, s) in claims.items():
            out[live[col]].skeletons[frame] = skels[s]
    return out


def body_part_boxes(sk: Skeleton | None, host_box, r: float = 0.2, min_visibility: float = 0.3,
                    frame_size: tuple[float, float] | None = None, num_parts: int = NUM_JOINTS) -> np.ndarray:
    """Square part boxes of side ``r * max(host w, host h)`` centred on each joint.

    Invisible joints, missing skeletons, and parts clipped away fall back to the host box.
    """
    host = np.asarray(host_box, dtype=np.float64)
    out = np.tile(host, (num_parts, 1))
    if sk is None:
        return out
    side = r * max(host[2], host[3])
    for k in range(num_parts):
        if sk.visibility[k] < min_visibility:
            continue
        px, py = sk.joints[k]
        box = Box(px - side / 2, py - side / 2, side, side)
        if frame_size is not None:
            box = clip_box(box, *frame_size)
            if box is None:
                continue
        out[k] = box
    return out


def roi_align(values: np.ndarray, boxes, frame_w: float, frame_h: float, out: int = 7) -> np.ndarray:
    """Bilinear RoI sampling, one sample at each output bin centre.

    ``values`` is ``(c, h, w)``; ``boxes`` are pixel boxes already clipped to the
    frame. Returns ``(n, c, out, out)``.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    c, gh, gw = values.shape
    steps = (np.arange(out) + 0.5) / out
    # Cell i covers [i, i+1) in grid units with its value at centre i + 0.5.
    u = (boxes[:, :1] + steps * boxes[:, 2:3]) * (gw / frame_w) - 0.5
    v = (boxes[:, 1:2] + steps * boxes[:, 3:4]) * (gh / frame_h) - 0.5
    u = u.clip(0, gw - 1)
    v = v.clip(0, gh - 1)
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    u1 = np.minimum(u0 + 1, gw - 1)
    v1 = np.minimum(v0 + 1, gh - 1)
    au = (u - u0)[:, None, :]
    av = (v - v0)[:, :, None]
    y0, y1 = v0[:, :, None], v1[:, :, None]
    x0, x1 = u0[:, None, :], u1[:, None, :]
    top = values[:, y0, x0] * (1 - au) + values[:, y0, x1] * au
    bottom = values[:, y1, x0] * (1 - au) + values[:, y1, x1] * au
    pooled = top * (1 - av) + bottom * av
    return pooled.transpose(1, 0, 2, 3)


def roi_pool_frame(grid: FeatureGrid, box, out: int = 7) -> np.ndarray:
    clipped = clip_box(box, grid.frame_w, grid.frame_h)
    if clipped is None:
        raise ValueError(f"box {tuple(box)} has no area inside the frame")
    return roi_align(np.asarray(grid.values, dtype=np.float64), [clipped], grid.frame_w, grid.frame_h, out)[0]


def _clip_all(boxes: np.ndarray, frame_w: float, frame_h: float) -> np.ndarray:
    out = np.empty_like(boxes)
    for k, b in enumerate(boxes):
        clipped = clip_box(b, frame_w, frame_h)
        if clipped is None:
            raise ValueError(f"box {tuple(b)} has no area inside the frame")
        out[k] = clipped
    return out


def toi_pool(grids: Sequence[FeatureGrid], boxes, out: int = 7, return_map: bool = False):
    """Element-wise max of the per-frame pooled maps, then global average pooling.

    Returns the length-``c`` vector, or ``(vector, max_map)`` with ``return_map``.
    """
    if len(grids) == 0:
        raise ValueError("ToI pooling needs at least one frame")
    if len(grids) != len(boxes):
        raise ValueError("grids and boxes must be frame-aligned")
    fused = None
    for grid, box in zip(grids, boxes):
        pooled = roi_pool_frame(grid, box, out)
        fused = pooled if fused is None else np.maximum(fused, pooled)
    v = fused.mean(axis=(1, 2))
    return (v, fused) if return_map else v


def behavior_descriptor(seg: CandidateSegment, sk_traj: SkeletonTrajectory | Mapping[int, Skeleton] | None,
                        grids: Sequence[FeatureGrid], cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Concatenate the ToI-pooled vectors of every body-part trajectory, in joint order."""
    if len(grids) != len(seg):
        raise ValueError(f"expected {len(seg)} feature grids, got {len(grids)}")
    skeletons = sk_traj.skeletons if isinstance(sk_traj, SkeletonTrajectory) else (sk_traj or {})
    fused = None
    for i, grid in enumerate(grids):
        frame = seg.span.begin + i
        if grid.frame != frame:
            raise ValueError(f"feature grid for frame {grid.frame} where {frame} was expected")
        size = (grid.frame_w, grid.frame_h)
        parts = body_part_boxes(skeletons.get(frame), seg.human_boxes[i], cfg.part_ratio,
                                cfg.min_visibility, size, cfg.num_parts)
        pooled = roi_align(np.asarray(grid.values, dtype=np.float64), _clip_all(parts, *size),
                           grid.frame_w, grid.frame_h, cfg.roi_size)
        fused = pooled if fused is None else np.maximum(fused, pooled)
    return fused.mean(axis=(2, 3)).reshape(-1)


def f_loc(h, o) -> np.ndarray:
    """Relative location ``(s_x, s_y, s_w, s_h, s_a)`` of human box ``h`` to object box ``o``."""
    x, y, w, hh = (float(t) for t in h)
    x2, y2, w2, h2 = (float(t) for t in o)
    if min(w, hh, w2, h2) <= 0:
        raise ValueError("boxes need positive width and height")
    return np.array([(x - x2) / w, (y - y2) / hh, np.log(w / w2), np.log(hh / h2), np.log(w * hh / (w2 * h2))])


def motion_feature(seg: CandidateSegment) -> np.ndarray:
    if len(seg) < 2:
        raise ValueError("motion feature needs a segment of at least 2 frames")
    first = f_loc(seg.human_boxes[0], seg.object_boxes[0])
    last = f_loc(seg.human_boxes[-1], seg.object_boxes[-1])
    return np.concatenate([first, last, last - first])


def semantic_feature(cat_h: str, cat_o: str, table: EmbeddingTable) -> np.ndarray:
    return np.concatenate([table[cat_h], table[cat_o]])
