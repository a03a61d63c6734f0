"""Spatio-temporal human-object interaction detection in videos."""

__version__ = "0.1.0"

from .geometry import Box, Trajectory, TrajectorySpan, iou, trajectory_overlap, viou
from .tracklets import Detection, SegmentationConfig, TrajectoryDetector, detect_trajectories
from .pairing import CandidatePair, CandidateSegment, co_occurrent_pairs, split_candidate_segments
from .features import EmbeddingTable, FeatureBundle, FeatureConfig, FeatureGrid, Skeleton
from .recognition import FactorizedPredicateClassifier, HoiInstance, LabelSpace, associate_instances
from .evaluation import MatchConfig, evaluate
from .pipeline import STHOIDetector, VideoData, load_videos

__all__ = [
    "Box", "Trajectory", "TrajectorySpan", "iou", "trajectory_overlap", "viou",
    "Detection", "SegmentationConfig", "TrajectoryDetector", "detect_trajectories",
    "CandidatePair", "CandidateSegment", "co_occurrent_pairs", "split_candidate_segments",
    "EmbeddingTable", "FeatureBundle", "FeatureConfig", "FeatureGrid", "Skeleton",
    "FactorizedPredicateClassifier", "HoiInstance", "LabelSpace", "associate_instances",
    "MatchConfig", "evaluate", "STHOIDetector", "VideoData", "load_videos",
]
