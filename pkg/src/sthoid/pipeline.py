"""End-to-end detector: trajectories -> candidate segments -> features -> predicates -> instances."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .features import (MOTION_DIM, EmbeddingTable, FeatureBundle, FeatureConfig, SkeletonTrajectory,
                       assign_skeletons, behavior_descriptor, motion_feature, semantic_feature)
from .geometry import Trajectory
from .io import AnnotationRecord, DatasetManifest, FeatureGridFile, VideoEntry, load_annotation, load_detections, \
    load_keypoints
from .pairing import CandidatePair, CandidateSegment, co_occurrent_pairs, split_candidate_segments
from .recognition import FactorizedPredicateClassifier, HoiInstance, LabelSpace, associate_instances, \
    instance_sort_key
from .tracklets import Detection, SegmentationConfig, detect_trajectories


@dataclass
class VideoData:
    """Everything the pipeline reads for one video. Grids stay on disk."""

    id: str
    frame_count: int
    detections: dict[int, list[Detection]]
    keypoints: dict
    grids: FeatureGridFile
    annotation: AnnotationRecord | None = None

    @classmethod
    def load(cls, entry: VideoEntry, manifest: DatasetManifest) -> "VideoData":
        categories = set(manifest.labels.objects) | set(manifest.human_categories)
        dets = load_detections(entry.detections, categories).get(entry.id, {}) if entry.detections else {}
        kps = load_keypoints(entry.keypoints).get(entry.id, {}) if entry.keypoints else {}
        ann = load_annotation(entry.annotations, manifest.human_categories) if entry.annotations else None
        if entry.grids is None:
            raise ValueError(f"video {entry.id!r} has no feature-grid file")
        return cls(entry.id, entry.frame_count, dets, kps, FeatureGridFile(entry.grids), ann)


def load_videos(manifest: DatasetManifest) -> list[VideoData]:
    return [VideoData.load(e, manifest) for e in manifest.videos]


def segment_targets(seg: CandidateSegment, annotation: AnnotationRecord, labels: LabelSpace) -> np.ndarray:
    """Predicates whose annotated instance on this pair covers at least half of the segment."""
    gamma = np.zeros(len(labels.predicates))
    h, o = seg.pair.human.track_id, seg.pair.object.track_id
    for r in annotation.relations:
        if r.subject_tid != h or r.object_tid != o:
            continue
        covered = min(r.end, seg.span.end) - max(r.begin, seg.span.begin) + 1
        if 2 * covered >= len(seg):
            gamma[labels.predicate_index(r.predicate)] = 1.0
    return gamma


class STHOIDetector(BaseEstimator):
    """Spatio-temporal HOI detector with a scikit-learn style surface.

    ``fit`` takes videos with annotations and trains the predicate classifier
    on ground-truth trajectories. ``predict`` returns scored ``HoiInstance``
    lists, tracking objects from detections unless ``gt_trajectories`` is set.
    """

    def __init__(self, labels: LabelSpace | None = None, embeddings: EmbeddingTable | None = None,
                 human_categories=("human",), segment_len=10, segment_stride=5, beta=0.5, merge_threshold=0.5,
                 candidate_len=10, min_track_len=10, part_ratio=0.2, min_visibility=0.3, roi_size=7, num_parts=17,
                 hidden=64, learning_rate=0.2, epochs=200, batch_size=32, seed=0, use_behavior=True, use_mask=True,
                 late_fusion=True, factorized=True, train_negatives=True, score_threshold=0.2, top_k=10,
                 use_confidence=False):
        self.labels = labels
        self.embeddings = embeddings
        self.human_categories = human_categories
        self.segment_len = segment_len
        self.segment_stride = segment_stride
        self.beta = beta
        self.merge_threshold = merge_threshold
        self.candidate_len = candidate_len
        self.min_track_len = min_track_len
        self.part_ratio = part_ratio
        self.min_visibility = min_visibility
        self.roi_size = roi_size
        self.num_parts = num_parts
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.use_behavior = use_behavior
        self.use_mask = use_mask
        self.late_fusion = late_fusion
        self.factorized = factorized
        self.train_negatives = train_negatives
        self.score_threshold = score_threshold
        self.top_k = top_k
        self.use_confidence = use_confidence

    @classmethod
    def from_config(cls, cfg: dict, labels, embeddings, human_categories=("human",)) -> "STHOIDetector":
        flat = {}
        for section in ("tracking", "pairing", "features", "recognition"):
            flat.update(cfg[section])
        return cls(labels=labels, embeddings=embeddings, human_categories=tuple(human_categories), **flat)

    # stages

    def tracking_config(self) -> SegmentationConfig:
        return SegmentationConfig(self.segment_len, self.segment_stride, self.beta, self.merge_threshold)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.part_ratio, self.min_visibility, self.roi_size, self.num_parts)

    def trajectories(self, video: VideoData, gt: bool = False) -> list[Trajectory]:
        if gt:
            if video.annotation is None:
                raise ValueError(f"video {video.id!r} has no annotation for ground-truth trajectories")
            return list(video.annotation.trajectories.values())
        return detect_trajectories(video.detections, video.frame_count, self.tracking_config())

    def candidate_segments(self, trajs: Sequence[Trajectory]) -> list[tuple[CandidatePair, list[CandidateSegment]]]:
        # Fragments shorter than min_track_len frames are not paired.
        trajs = [t for t in trajs if len(t.span) >= self.min_track_len]
        pairs = co_occurrent_pairs(trajs, tuple(self.human_categories))
        out = []
        for pair in pairs:
            segs = split_candidate_segments(pair, self.candidate_len)
            if segs:
                out.append((pair, segs))
        return out

    def bundles(self, video: VideoData, trajs: Sequence[Trajectory],
                grouped: Sequence[tuple[CandidatePair, list[CandidateSegment]]]) -> list[list[FeatureBundle]]:
        fcfg = self.feature_config()
        humans = [t for t in trajs if t.category in self.human_categories]
        skeletons: dict[int, SkeletonTrajectory] = {
            id(h): s for h, s in zip(humans, assign_skeletons(video.keypoints, humans, fcfg.min_visibility))}
        out = []
        for pair, segs in grouped:
            f_s = semantic_feature(pair.human.category, pair.object.category, self.embeddings)
            rows = []
            for seg in segs:
                grids = video.grids.read(seg.span.begin, seg.span.end)
                f_a = behavior_descriptor(seg, skeletons.get(id(pair.human)), grids, fcfg)
                rows.append(FeatureBundle(f_a, motion_feature(seg), f_s))
            out.append(rows)
        return out

    def block_dims(self) -> tuple[int, int, int]:
        return self.num_parts * self.channels_, MOTION_DIM, 2 * self.embeddings.dim

    # estimator API

    def _classifier(self) -> FactorizedPredicateClassifier:
        return FactorizedPredicateClassifier(
            predicates=self.labels.predicates, objects=self.labels.objects, block_dims=self.block_dims(),
            hidden=self.hidden, learning_rate=self.learning_rate, epochs=self.epochs, batch_size=self.batch_size,
            seed=self.seed, use_behavior=self.use_behavior, use_mask=self.use_mask, late_fusion=self.late_fusion,
            factorized=self.factorized)

    def training_data(self, videos: Sequence[VideoData]):
        X, Y, objects = [], [], []
        for video in videos:
            if video.annotation is None:
                continue
            trajs = list(video.annotation.trajectories.values())
            grouped = self.candidate_segments(trajs)
            for (pair, segs), bundles in zip(grouped, self.bundles(video, trajs, grouped)):
                for seg, b in zip(segs, bundles):
                    gamma = segment_targets(seg, video.annotation, self.labels)
                    if not gamma.any() and not self.train_negatives:
                        continue
                    X.append(b.concat())
                    Y.append(gamma)
                    objects.append(pair.object.category)
        return X, Y, objects

    def fit(self, videos: Sequence[VideoData], y=None):
        if self.labels is None or self.embeddings is None:
            raise ValueError("labels and embeddings must be set before fitting")
        if not videos:
            raise ValueError("no training videos")
        self.channels_ = videos[0].grids.header.channels
        X, Y, objects = self.training_data(videos)
        if not any(np.any(g) for g in Y):
            raise ValueError("no annotated training instances")
        self.classifier_ = self._classifier().fit(np.stack(X), np.stack(Y), objects)
        self.n_training_segments_ = len(X)
        return self

    def use_classifier(self, classifier: FactorizedPredicateClassifier, channels: int) -> "STHOIDetector":
        """Attach a previously trained classifier, checking it fits this detector's features and labels."""
        if tuple(classifier.predicates) != tuple(self.labels.predicates) or \
                tuple(classifier.objects) != tuple(self.labels.objects):
            raise ValueError("model label space differs from the dataset label space")
        self.channels_ = int(channels)
        if tuple(classifier.block_dims) != self.block_dims():
            raise ValueError(f"model expects feature blocks {tuple(classifier.block_dims)}, "
                             f"this configuration produces {self.block_dims()}")
        self.classifier_ = classifier
        return self

    def predict_video(self, video: VideoData, gt_trajectories: bool = False) -> list[HoiInstance]:
        check_is_fitted(self, "classifier_")
        if video.grids.header.channels != self.channels_:
            raise ValueError(f"video {video.id!r} has {video.grids.header.channels} feature channels, "
                             f"model expects {self.channels_}")
        trajs = self.trajectories(video, gt_trajectories)
        grouped = self.candidate_segments(trajs)
        instances = []
        for (pair, segs), bundles in zip(grouped, self.bundles(video, trajs, grouped)):
            X = np.stack([b.concat() for b in bundles])
            scores = self.classifier_.hoi_scores(X, [pair.object.category] * len(X))
            instances += associate_instances(video.id, list(zip(segs, scores)), self.labels, self.score_threshold,
                                             self.top_k, self.use_confidence)
        instances.sort(key=instance_sort_key)
        return instances

    def predict(self, videos: Sequence[VideoData], gt_trajectories: bool = False) -> list[HoiInstance]:
        out = []
        for video in sorted(videos, key=lambda v: v.id):
            out += self.predict_video(video, gt_trajectories)
        return out
