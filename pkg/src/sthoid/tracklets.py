"""Greedy confidence-ordered tracklet generation and cross-segment merging.

A video is cut into overlapping fixed-length segments. Inside each segment the
most confident untracked detection seeds a tracklet, which then absorbs every
same-category detection overlapping it by more than ``beta``. Tracklets from
overlapping segments are merged greedily by trajectory overlap ratio.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import Box, Trajectory, TrajectorySpan, iou_many, trajectory_overlap


@dataclass(frozen=True)
class Detection:
    frame: int
    box: Box
    category: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")
        Box(*self.box).validate()


@dataclass(frozen=True)
class SegmentationConfig:
    segment_len: int = 10
    segment_stride: int = 5
    beta: float = 0.5
    merge_threshold: float = 0.5

    def __post_init__(self):
        if self.segment_len < 1:
            raise ValueError("segment_len must be >= 1")
        if not 1 <= self.segment_stride <= self.segment_len:
            raise ValueError("segment_stride must lie in [1, segment_len]")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if not 0.0 < self.merge_threshold <= 1.0:
            raise ValueError("merge_threshold must lie in (0, 1]")


@dataclass
class Tracklet:
    """A segment-bound trajectory plus the detections it consumed."""

    trajectory: Trajectory
    members: list[int] = field(default_factory=list)
    seed: int = -1

    @property
    def score(self) -> float:
        return self.trajectory.score

    @property
    def category(self) -> str:
        return self.trajectory.category


# A propagator turns the resolved boxes of a tracklet ({offset: box}) into one
# box per segment frame.
Propagator = Callable[[int, Mapping[int, np.ndarray]], np.ndarray]


def hold_fill(length: int, resolved: Mapping[int, np.ndarray]) -> np.ndarray:
    """Copy the nearest resolved box into every unresolved frame; the earlier one wins ties."""
    offsets = np.array(sorted(resolved), dtype=np.int64)
    stacked = np.stack([resolved[o] for o in offsets])
    frames = np.arange(length)
    right = np.searchsorted(offsets, frames, side="left").clip(max=len(offsets) - 1)
    left = (right - 1).clip(min=0)
    use_left = np.abs(frames - offsets[left]) <= np.abs(offsets[right] - frames)
    return stacked[np.where(use_left, left, right)]


def split_video_segments(num_frames: int, cfg: SegmentationConfig) -> list[TrajectorySpan]:
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    spans = []
    start = 0
    while start + cfg.segment_len <= num_frames:
        spans.append(TrajectorySpan(start, start + cfg.segment_len - 1))
        start += cfg.segment_stride
    if not spans:
        return [TrajectorySpan(0, num_frames - 1)]
    if spans[-1].end < num_frames - 1:
        spans.append(TrajectorySpan(start, num_frames - 1))
    return spans


def build_segment_tracklets(dets: Sequence[Detection], span: TrajectorySpan, beta: float = 0.5,
                            propagator: Propagator = hold_fill) -> list[Tracklet]:
    """Run the absorption loop over the detections of one segment.

    Frames are absolute; every detection must lie inside ``span``. Returned
    tracklets cover the whole segment, with ``detected`` flags marking frames
    that carry a merged detection.
    """
    if not dets:
        return []
    length = len(span)
    frames = np.array([d.frame for d in dets], dtype=np.int64) - span.begin
    if frames.min() < 0 or frames.max() >= length:
        raise ValueError(f"detections fall outside segment {tuple(span)}")
    boxes = np.array([d.box for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    cats = np.array([d.category for d in dets], dtype=object)

    # Descending confidence; ties by frame then input position.
    order = sorted(range(len(dets)), key=lambda i: (-scores[i], frames[i], i))
    untracked = np.zeros(len(dets), dtype=bool)
    untracked[order] = True
    queue = iter(order)

    tracklets = []
    for seed in queue:
        if not untracked[seed]:
            continue
        untracked[seed] = False
        members = [seed]
        best = {int(frames[seed]): seed}
        traj_boxes = propagator(length, {frames[seed]: boxes[seed]})
        same = np.flatnonzero(untracked & (cats == cats[seed]))
        while len(same):
            overlaps = iou_many(boxes[same], traj_boxes[frames[same]])
            hit = overlaps > beta
            if not hit.any():
                break
            for i in same[hit]:
                members.append(int(i))
                f = int(frames[i])
                if f not in best or scores[i] > scores[best[f]]:
                    best[f] = int(i)
            untracked[same[hit]] = False
            same = same[~hit]
            traj_boxes = propagator(length, {f: boxes[i] for f, i in best.items()})
        detected = np.zeros(length, dtype=bool)
        detected[list(best)] = True
        traj = Trajectory(span.begin, traj_boxes, str(cats[seed]), float(scores[seed]),
                          detected=detected)
        tracklets.append(Tracklet(traj, sorted(members), seed))
    return tracklets


def trim_tracklet(tracklet: Tracklet) -> Tracklet:
    """Cut leading and trailing filled frames."""
    traj = tracklet.trajectory
    hits = np.flatnonzero(traj.detected)
    trimmed = traj.sliced(traj.begin + int(hits[0]), traj.begin + int(hits[-1]))
    return Tracklet(trimmed, tracklet.members, tracklet.seed)


def _merge_pair(a: Trajectory, b: Trajectory) -> Trajectory:
    hi, lo = (a, b) if a.score >= b.score else (b, a)
    begin, end = min(a.begin, b.begin), max(a.end, b.end)
    boxes = np.empty((end - begin + 1, 4))
    detected = np.zeros(end - begin + 1, dtype=bool)
    for t in (lo, hi):
        boxes[t.begin - begin:t.end - begin + 1] = t.boxes
        if t.detected is not None:
            detected[t.begin - begin:t.end - begin + 1] = t.detected
    return Trajectory(begin, boxes, a.category, max(a.score, b.score), detected=detected)


def merge_tracklets(tracklets: Iterable[Trajectory], cfg: SegmentationConfig) -> list[Trajectory]:
    """Greedily merge the same-category pair with the highest overlap ratio until none qualifies."""
    alive: dict[int, Trajectory] = dict(enumerate(tracklets))
    next_id = len(alive)
    heap: list[tuple] = []

    def push_pairs(i: int, candidates):
        ti = alive[i]
        for j in candidates:
            tj = alive[j]
            if j == i or tj.category != ti.category or tj.begin > ti.end or ti.begin > tj.end:
                continue
            theta = trajectory_overlap(ti, tj, cfg.beta)
            if theta >= cfg.merge_threshold:
                heapq.heappush(heap, (-theta, min(i, j), max(i, j)))

    by_cat: dict[str, list[int]] = {}
    for i, t in alive.items():
        by_cat.setdefault(t.category, []).append(i)
    for ids in by_cat.values():
        ids.sort(key=lambda k: alive[k].begin)
        for pos, i in enumerate(ids):
            # Sorted by begin: later candidates starting after i ends cannot overlap.
            later = []
            for j in ids[pos + 1:]:
                if alive[j].begin > alive[i].end:
                    break
                later.append(j)
            push_pairs(i, later)

    while heap:
        _, i, j = heapq.heappop(heap)
        if i not in alive or j not in alive:
            continue
        merged = _merge_pair(alive.pop(i), alive.pop(j))
        k = next_id
        next_id += 1
        alive[k] = merged
        push_pairs(k, [m for m, t in alive.items() if t.category == merged.category])

    order = sorted(alive, key=lambda k: (alive[k].begin, -alive[k].score, alive[k].end, k))
    return [alive[k] for k in order]


def detect_trajectories(dets_per_frame: Mapping[int, Sequence[Detection]], num_frames: int | None = None,
                        cfg: SegmentationConfig | None = None,
                        propagator: Propagator = hold_fill) -> list[Trajectory]:
    """Segment, build tracklets, trim, and merge into long-term trajectories."""
    cfg = cfg or SegmentationConfig()
    frames = [f for f, ds in dets_per_frame.items() if ds]
    if not frames:
        return []
    if num_frames is None:
        num_frames = max(frames) + 1
    pieces = []
    for span in split_video_segments(num_frames, cfg):
        dets = [d for f in range(span.begin, span.end + 1) for d in dets_per_frame.get(f, ())]
        pieces.extend(trim_tracklet(t).trajectory for t in build_segment_tracklets(dets, span, cfg.beta, propagator))
    trajs = merge_tracklets(pieces, cfg)
    for n, t in enumerate(trajs):
        t.track_id = f"t{n}"
    return trajs


class TrajectoryDetector(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``transform`` maps per-video detection streams to trajectories.

    Each sample of ``X`` is a mapping ``frame -> detections`` for one video.
    ``num_frames`` may be passed as a parallel sequence of frame counts.
    After ``transform``, ``fps_`` holds the frame throughput of the last call.
    """

    def __init__(self, segment_len=10, segment_stride=5, beta=0.5, merge_threshold=0.5):
        self.segment_len = segment_len
        self.segment_stride = segment_stride
        self.beta = beta
        self.merge_threshold = merge_threshold

    def _config(self) -> SegmentationConfig:
        return SegmentationConfig(self.segment_len, self.segment_stride, self.beta, self.merge_threshold)

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X, num_frames=None):
        cfg = getattr(self, "config_", None) or self._config()
        num_frames = num_frames if num_frames is not None else [None] * len(X)
        start = time.perf_counter()
        out = [detect_trajectories(dets, n, cfg) for dets, n in zip(X, num_frames)]
        elapsed = time.perf_counter() - start
        total = sum(n if n is not None else max(d, default=-1) + 1 for d, n in zip(X, num_frames))
        self.fps_ = total / elapsed if elapsed > 0 else float("inf")
        return out
