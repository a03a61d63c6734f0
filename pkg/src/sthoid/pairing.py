"""Human-object candidate pairs and fixed-duration candidate segments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import Trajectory, TrajectorySpan

HUMAN = "human"


@dataclass(frozen=True, eq=False)
class CandidatePair:
    human: Trajectory
    object: Trajectory
    span: TrajectorySpan

    def __post_init__(self):
        if self.human is self.object:
            raise ValueError("a trajectory cannot pair with itself")
        if not (self.human.span.contains(self.span) and self.object.span.contains(self.span)):
            raise ValueError("pair span must lie inside both trajectories")


@dataclass(frozen=True, eq=False)
class CandidateSegment:
    pair: CandidatePair
    span: TrajectorySpan
    human_boxes: np.ndarray
    object_boxes: np.ndarray

    def __len__(self) -> int:
        return len(self.span)


def co_occurrent_pairs(trajectories: Sequence[Trajectory], human_categories=(HUMAN,)) -> list[CandidatePair]:
    """Pair every human trajectory with every other co-occurring trajectory.

    Human-human pairs are generated in both directions.
    """
    pairs = []
    for h in trajectories:
        if h.category not in human_categories:
            continue
        for o in trajectories:
            if o is h:
                continue
            span = h.span.intersect(o.span)
            if span is not None:
                pairs.append(CandidatePair(h, o, span))
    return pairs


def split_candidate_segments(pair: CandidatePair, length: int = 10) -> list[CandidateSegment]:
    """Tile the pair span with windows of ``length``; a trailing single frame is dropped."""
    if length < 2:
        raise ValueError("segment length must be >= 2")
    segments = []
    begin = pair.span.begin
    while pair.span.end - begin + 1 >= 2:
        end = min(begin + length - 1, pair.span.end)
        segments.append(CandidateSegment(
            pair, TrajectorySpan(begin, end),
            pair.human.boxes_over(begin, end), pair.object.boxes_over(begin, end)))
        begin = end + 1
    return segments
