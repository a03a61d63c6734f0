"""Deterministic synthetic scenes: trajectories, noisy detections, keypoints,
feature grids, embeddings and HOI annotations.

Each human walks in its own vertical lane so that no two entities fully
occlude each other. A human may have a partner object that rests beside it
and moves into its hand while an interaction is scripted. Feature grids carry
one channel per predicate, switched on inside the body-part regions that the
predicate involves, so every scripted predicate is recoverable from pooled part
features. That separability is a property of this test fixture only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import NUM_JOINTS, Skeleton
from .geometry import Box, Trajectory
from .io import (AnnotationRecord, DatasetManifest, RelationInstance, VideoEntry, save_annotation,
                 save_detections, save_embeddings, save_keypoints, save_manifest, write_feature_grids)
from .recognition import LabelSpace
from .tracklets import Detection

# Joint positions as fractions of the person box, standard 17-keypoint order.
JOINT_TEMPLATE = np.array([
    (0.50, 0.08), (0.44, 0.06), (0.56, 0.06), (0.38, 0.08), (0.62, 0.08),
    (0.28, 0.24), (0.72, 0.24), (0.18, 0.40), (0.82, 0.40), (0.14, 0.55),
    (0.86, 0.55), (0.36, 0.55), (0.64, 0.55), (0.36, 0.76), (0.64, 0.76),
    (0.36, 0.96), (0.64, 0.96),
])

PREDICATE_PARTS = {
    "hold": (9, 10),
    "ride": (11, 12, 13, 14),
    "push": (7, 8),
    "watch": (0, 1, 2),
    "carry": (5, 6),
    "lean_on": (15, 16),
}

PREDICATE_OBJECTS = {
    "hold": ("cup", "ball"),
    "ride": ("bicycle",),
    "push": ("bicycle", "chair"),
    "watch": ("dog", "ball"),
    "carry": ("cup", "dog", "chair"),
    "lean_on": ("chair",),
}

OBJECT_SIZES = {"bicycle": (44, 30), "cup": (16, 20), "ball": (20, 20), "dog": (34, 24), "chair": (26, 36)}
# Cap on lane motion so an IoU-chaining tracker can follow every entity.
MAX_SPEED = 2.0

HUMAN = "human"
SYNTH_LABELS = LabelSpace((HUMAN,) + tuple(OBJECT_SIZES), tuple(PREDICATE_PARTS))

MOTIONS = ("static", "linear", "sinusoidal")


@dataclass(frozen=True)
class Interaction:
    """Scripted HOI; entity indices count humans first, then objects."""

    human: int
    object: int
    predicate: str
    begin: int
    end: int


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    num_humans: int = 2
    num_objects: int = 2
    num_frames: int = 120
    motion: str = "linear"
    interactions: tuple[Interaction, ...] | None = None
    jitter: float = 0.0
    drop_rate: float = 0.0
    false_positive_rate: float = 0.0
    frame_size: tuple[int, int] = (384, 192)
    grid_stride: int = 12
    object_categories: tuple[str, ...] | None = None
    partner_predicates: tuple[str | None, ...] | None = None

    def __post_init__(self):
        for name in ("drop_rate", "false_positive_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.num_frames < 2:
            raise ValueError("a scene needs at least 2 frames")
        if self.num_humans < 0 or self.num_objects < 0:
            raise ValueError("entity counts must be non-negative")
        if self.motion not in MOTIONS:
            raise ValueError(f"motion must be one of {MOTIONS}")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")


@dataclass
class Scene:
    video: str
    spec: SceneSpec
    annotation: AnnotationRecord
    detections: list[Detection]
    keypoints: dict[int, list[Skeleton]]
    grids: np.ndarray
    partners: dict[int, int] = field(default_factory=dict)

    @property
    def labels(self) -> LabelSpace:
        return SYNTH_LABELS


# Object centre while interacting: x offset from the person's right edge as
# (fraction of person width, fraction of object width), y as fraction of person height.
PREDICATE_ANCHORS = {
    "hold": (-0.14, 0.0, 0.55),
    "ride": (-0.5, 0.0, 0.80),
    "push": (0.0, 0.5, 0.45),
    "watch": (0.0, 1.0, 0.12),
    "carry": (-0.28, 0.0, 0.24),
    "lean_on": (0.0, 0.3, 0.85),
}


def _anchor(predicate: str, hb: np.ndarray, ow: float, oh: float) -> np.ndarray:
    fx, fo, fy = PREDICATE_ANCHORS[predicate]
    cx = hb[:, 0] + hb[:, 2] * (1 + fx) + fo * ow
    cy = hb[:, 1] + fy * hb[:, 3]
    return np.stack([cx - ow / 2, cy - oh / 2], axis=1)


def _near_weight(intervals, n: int, ramp: int = 10) -> np.ndarray:
    """1 inside any interval, ramping linearly to 0 over ``ramp`` frames on either side."""
    f = np.arange(n, dtype=np.float64)
    w = np.zeros(n)
    for b, e in intervals:
        before = np.clip((f - (b - ramp)) / ramp, 0, 1)
        after = np.clip(((e + ramp) - f) / ramp, 0, 1)
        w = np.maximum(w, np.minimum(before, after))
    return w


def _auto_script(rng, n_frames: int, partners: dict[int, int], categories: list[str],
                 forced: dict[int, str]) -> list[Interaction]:
    """One or two predicates per partner on disjoint 10-frame-aligned spans with a gap between them."""
    n_seg = n_frames // 10
    out = []
    if n_seg < 5:
        return out
    for h, o in partners.items():
        allowed = [p for p, objs in PREDICATE_OBJECTS.items() if categories[o] in objs]
        first = forced.get(h) or str(allowed[int(rng.integers(0, len(allowed)))])
        preds = [first]
        others = [p for p in allowed if p != first]
        if others and rng.random() < 0.4:
            preds.append(str(others[int(rng.integers(0, len(others)))]))
        lengths = [int(rng.integers(2, 5)) for _ in preds]
        while sum(lengths) + len(lengths) - 1 > n_seg - 2:
            lengths.pop()
            preds.pop()
        seg = int(rng.integers(1, n_seg - 1 - (sum(lengths) + len(lengths) - 1) + 1))
        for p, length in zip(preds, lengths):
            out.append(Interaction(h, o, p, 10 * seg, 10 * (seg + length) - 1))
            seg += length + 1
    return out


def generate_scene(spec: SceneSpec, video: str | None = None) -> Scene:
    """Build one scene; everything is a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    video = video or f"scene_{spec.seed}"
    W, H = spec.frame_size
    n = spec.num_frames
    object_names = list(OBJECT_SIZES)
    obj_cats = [object_names[int(k)] for k in rng.integers(0, len(object_names), spec.num_objects)]
    if spec.object_categories is not None:
        if len(spec.object_categories) != spec.num_objects:
            raise ValueError("object_categories must name every object")
        obj_cats = list(spec.object_categories)
    categories = [HUMAN] * spec.num_humans + obj_cats
    partners = {h: spec.num_humans + h for h in range(min(spec.num_humans, spec.num_objects))}
    loners = list(range(spec.num_humans + len(partners), len(categories)))
    lanes = spec.num_humans + len(loners)
    if lanes == 0:
        raise ValueError("scene has no entities")
    lane_w = W / lanes

    sizes = np.zeros((len(categories), 2))
    for k, c in enumerate(categories):
        sizes[k] = (rng.uniform(30, 38), rng.uniform(70, 84)) if c == HUMAN else OBJECT_SIZES[c]
    far_gap = 18.0
    need = max([sizes[h, 0] + far_gap + sizes[partners[h], 0] if h in partners else sizes[h, 0]
                for h in range(spec.num_humans)] + [sizes[k, 0] for k in loners] + [0])
    if need + 8 > lane_w or sizes[:, 1].max(initial=0) + 8 > H:
        raise ValueError(f"infeasible scene: {lanes} lanes of {lane_w:.0f}px cannot hold entities {need:.0f}px wide")

    if spec.interactions is None:
        forced = dict(zip(partners, spec.partner_predicates or ()))
        script = _auto_script(rng, n, partners, categories, {h: p for h, p in forced.items() if p})
    else:
        script = list(spec.interactions)
    for it in script:
        if categories[it.human] != HUMAN or it.human == it.object or not 0 <= it.begin <= it.end < n:
            raise ValueError(f"invalid scripted interaction {it}")
        if it.predicate not in PREDICATE_PARTS:
            raise ValueError(f"unknown predicate {it.predicate!r}")

    t = np.arange(n, dtype=np.float64)
    boxes = np.zeros((len(categories), n, 4))
    lane_of = {h: h for h in range(spec.num_humans)}
    lane_of.update({k: spec.num_humans + i for i, k in enumerate(loners)})
    for k, lane in lane_of.items():
        w, h = sizes[k]
        group_w = w + (far_gap + sizes[partners[k], 0] if k in partners else 0)
        slack = max(lane_w - group_w - 8, 0.0)
        x0 = lane * lane_w + 4 + rng.uniform(0, slack)
        y0 = rng.uniform(4, H - h - 4)
        if spec.motion == "static":
            dx = np.zeros(n)
        elif spec.motion == "linear":
            room = min(x0 - lane * lane_w - 4, lane * lane_w + lane_w - 4 - group_w - x0)
            room = min(room, MAX_SPEED * (n - 1) / 2)
            dx = np.linspace(-1, 1, n) * room if rng.random() < 0.5 else np.linspace(1, -1, n) * room
        else:
            room = min(x0 - lane * lane_w - 4, lane * lane_w + lane_w - 4 - group_w - x0)
            period = rng.uniform(40, 90)
            room = min(room, MAX_SPEED * period / (2 * np.pi))
            dx = room * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
        boxes[k] = np.stack([x0 + dx, np.full(n, y0), np.full(n, w), np.full(n, h)], axis=1)

    for hum, obj in partners.items():
        hb = boxes[hum]
        ow, oh = sizes[obj]
        far = np.stack([hb[:, 0] + hb[:, 2] + far_gap, hb[:, 1] + hb[:, 3] - oh], axis=1)
        pos = far.copy()
        weights = np.zeros(n)
        mine = [it for it in script if it.human == hum and it.object == obj]
        for p in sorted({it.predicate for it in mine}):
            w = _near_weight([(it.begin, it.end) for it in mine if it.predicate == p], n)
            pos += w[:, None] * (_anchor(p, hb, ow, oh) - far)
            weights += w
        pos = far + (pos - far) / np.maximum(weights, 1.0)[:, None]
        pos[:, 1] = pos[:, 1].clip(0, H - oh)
        boxes[obj] = np.column_stack([pos, np.full(n, ow), np.full(n, oh)])

    tids = [f"{k}" for k in range(len(categories))]
    trajectories = {tids[k]: Trajectory(0, boxes[k], categories[k], 1.0, track_id=tids[k])
                    for k in range(len(categories))}
    relations = [RelationInstance(tids[it.human], tids[it.object], it.predicate, it.begin, it.end) for it in script]
    annotation = AnnotationRecord(video, n, float(W), float(H), 30.0, trajectories, relations)

    detections = []
    for f in range(n):
        for k, cat in enumerate(categories):
            drop = rng.random() < spec.drop_rate
            noise = rng.normal(0, spec.jitter, 4) if spec.jitter > 0 else np.zeros(4)
            score = float(rng.uniform(0.6, 1.0))
            if drop:
                continue
            b = boxes[k, f] + noise
            b[2:] = np.maximum(b[2:], 2.0)
            detections.append(Detection(f, Box(*map(float, b)), cat, round(score, 6)))
        if rng.random() < spec.false_positive_rate:
            w, h = rng.uniform(10, 40, 2)
            cat = object_names[int(rng.integers(0, len(object_names)))]
            detections.append(Detection(f, Box(float(rng.uniform(0, W - w)), float(rng.uniform(0, H - h)),
                                               float(w), float(h)), cat, round(float(rng.uniform(0.05, 0.4)), 6)))

    keypoints: dict[int, list[Skeleton]] = {}
    for f in range(n):
        for k in range(spec.num_humans):
            if rng.random() < spec.drop_rate:
                continue
            x, y, w, h = boxes[k, f]
            joints = np.column_stack([x + JOINT_TEMPLATE[:, 0] * w, y + JOINT_TEMPLATE[:, 1] * h])
            if spec.jitter > 0:
                joints = joints + rng.normal(0, spec.jitter, joints.shape)
            keypoints.setdefault(f, []).append(Skeleton(joints, np.ones(NUM_JOINTS)))

    grids = _render_grids(spec, boxes, categories, script)
    return Scene(video, spec, annotation, detections, keypoints, grids, partners)


def _render_grids(spec: SceneSpec, boxes, categories, script) -> np.ndarray:
    W, H = spec.frame_size
    stride = spec.grid_stride
    gh, gw = int(np.ceil(H / stride)), int(np.ceil(W / stride))
    preds = list(PREDICATE_PARTS)
    c = len(preds) + 1
    grids = np.zeros((spec.num_frames, c, gh, gw), dtype=np.float32)
    cx = (np.arange(gw) + 0.5) * stride
    cy = (np.arange(gh) + 0.5) * stride

    def paint(frame, channel, x1, y1, x2, y2, value):
        # Every cell whose extent touches the rectangle.
        cols = (cx + stride / 2 > x1) & (cx - stride / 2 < x2)
        rows = (cy + stride / 2 > y1) & (cy - stride / 2 < y2)
        grids[frame, channel][np.ix_(rows, cols)] = value

    for k, cat in enumerate(categories):
        if cat != HUMAN:
            continue
        for f in range(spec.num_frames):
            x, y, w, h = boxes[k, f]
            paint(f, c - 1, x, y, x + w, y + h, 0.5)
    for it in script:
        channel = preds.index(it.predicate)
        for f in range(it.begin, it.end + 1):
            x, y, w, h = boxes[it.human, f]
            half = 0.75 * 0.2 * max(w, h)
            for j in PREDICATE_PARTS[it.predicate]:
                px, py = x + JOINT_TEMPLATE[j, 0] * w, y + JOINT_TEMPLATE[j, 1] * h
                paint(f, channel, px - half, py - half, px + half, py + half, 1.0)
    return grids


def make_embeddings(labels: LabelSpace = SYNTH_LABELS, dim: int = 16, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {tok: np.round(rng.normal(0, 1, dim), 6) for tok in labels.objects}


def write_scene(scene: Scene, out_dir) -> VideoEntry:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    v = scene.video
    paths = {k: out / f"{v}.{ext}" for k, ext in
             (("detections", "dets.jsonl"), ("keypoints", "kps.jsonl"), ("grids", "grids.bin"),
              ("annotations", "ann.json"))}
    save_detections(paths["detections"], ((v, d) for d in scene.detections))
    save_keypoints(paths["keypoints"], ((v, f, sk) for f in sorted(scene.keypoints) for sk in scene.keypoints[f]))
    W, H = scene.spec.frame_size
    write_feature_grids(paths["grids"], scene.grids, 0, W, H)
    save_annotation(paths["annotations"], scene.annotation)
    return VideoEntry(v, scene.spec.num_frames, float(W), float(H), 30.0, **paths)


def generate_suite(out_dir, num_scenes: int = 20, seed: int = 0, *, num_frames: int = 120, jitter: float = 0.0,
                   drop_rate: float = 0.0, false_positive_rate: float = 0.0, motion: str | None = None,
                   embedding_dim: int = 16) -> Path:
    """Write ``num_scenes`` scenes plus embeddings and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(num_scenes)
    # Cycle through every allowed (predicate, object) combination so a suite covers them all.
    combos = [(p, o) for p, objs in PREDICATE_OBJECTS.items() for o in objs]
    offset = int(np.random.default_rng(seed).integers(0, len(combos)))
    cursor = 0
    entries = []
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(int(s))
        num_humans = int(rng.integers(1, 3))
        num_objects = int(rng.integers(1, 4))
        n_partners = min(num_humans, num_objects)
        picked = [combos[(offset + cursor + k) % len(combos)] for k in range(n_partners)]
        cursor += n_partners
        extras = [str(o) for o in rng.choice(list(OBJECT_SIZES), num_objects - n_partners)]
        spec = SceneSpec(seed=int(s), num_humans=num_humans, num_objects=num_objects, num_frames=num_frames,
                         motion=motion or MOTIONS[int(rng.integers(0, 3))], jitter=jitter, drop_rate=drop_rate,
                         false_positive_rate=false_positive_rate,
                         object_categories=tuple(o for _, o in picked) + tuple(extras),
                         partner_predicates=tuple(p for p, _ in picked))
        entries.append(write_scene(generate_scene(spec, f"scene_{i:03d}"), out))
    emb_path = out / "embeddings.txt"
    # Word vectors are a fixed resource shared by every suite, not drawn per suite.
    save_embeddings(emb_path, make_embeddings(SYNTH_LABELS, embedding_dim))
    manifest = DatasetManifest(SYNTH_LABELS, emb_path, entries, (HUMAN,), out)
    save_manifest(out / "manifest.json", manifest)
    return out / "manifest.json"
