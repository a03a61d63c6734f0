"""On-disk formats: detections, keypoints, feature grids, embeddings, annotations,
predictions, manifests, and model checkpoints.

Text formats are JSON lines (one record per line) except embeddings, which use
the usual ``token v1 v2 ...`` word-vector layout. Feature grids live in a
little-endian binary container with random access by frame::

    offset  size  field
    0       4     magic b"STFG"
    4       2     version (uint16, 1)
    6       2     header size in bytes (uint16, 36)
    8       4     channels c (uint32)
    12      4     grid height h (uint32)
    16      4     grid width w (uint32)
    20      4     first frame (int32)
    24      4     frame count (uint32)
    28      4     frame width in pixels (float32)
    32      4     frame height in pixels (float32)
    36      ...   count * c * h * w float32 values, frame-major, C order

Model checkpoints are ``b"STHOIDM\\0"``, a uint32 format version, a uint32
header length, a UTF-8 JSON header, then the raw little-endian array payload
whose SHA-256 is recorded in the header.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .features import NUM_JOINTS, EmbeddingTable, FeatureGrid, Skeleton
from .geometry import Box, Trajectory
from .recognition import FactorizedPredicateClassifier, Head, HoiInstance, LabelSpace
from .tracklets import Detection


class DataError(ValueError):
    """Malformed or out-of-range input data, located by file and position."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


def _jsonl(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed record ({exc.msg} at column {exc.colno})", path, n) from None
            if not isinstance(rec, dict):
                raise DataError("record must be a JSON object", path, n)
            yield n, rec


def _write_jsonl(path, records: Iterable[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def _field(rec, key, path, line):
    try:
        return rec[key]
    except KeyError:
        raise DataError(f"missing field {key!r}", path, line) from None


# detections

def iter_detections(path, categories=None) -> Iterator[tuple[str, Detection]]:
    for line, rec in _jsonl(path):
        try:
            box = Box(*(float(v) for v in _field(rec, "box", path, line))).validate()
            frame = int(_field(rec, "frame", path, line))
            score = float(_field(rec, "score", path, line))
            cat = str(_field(rec, "category", path, line))
            video = str(_field(rec, "video", path, line))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"bad detection: {exc}", path, line) from None
        if frame < 0:
            raise DataError(f"negative frame index {frame}", path, line)
        if not 0.0 <= score <= 1.0:
            raise DataError(f"score {score} outside [0, 1]", path, line)
        if categories is not None and cat not in categories:
            raise DataError(f"unknown category {cat!r}", path, line)
        yield video, Detection(frame, box, cat, score)


def load_detections(path, categories=None) -> dict[str, dict[int, list[Detection]]]:
    """``video -> frame -> detections``."""
    out: dict[str, dict[int, list[Detection]]] = defaultdict(lambda: defaultdict(list))
    for video, det in iter_detections(path, categories):
        out[video][det.frame].append(det)
    return {v: dict(frames) for v, frames in out.items()}


def save_detections(path, records: Iterable[tuple[str, Detection]]):
    _write_jsonl(path, ({"video": v, "frame": d.frame, "box": [float(x) for x in d.box],
                         "category": d.category, "score": float(d.score)} for v, d in records))


# keypoints

def load_keypoints(path) -> dict[str, dict[int, list[Skeleton]]]:
    """``video -> frame -> skeletons``; each record holds 17 ``[x, y, visibility]`` triples."""
    out: dict[str, dict[int, list[Skeleton]]] = defaultdict(lambda: defaultdict(list))
    for line, rec in _jsonl(path):
        kps = np.asarray(_field(rec, "keypoints", path, line), dtype=np.float64)
        if kps.ndim != 2 or kps.shape[1] != 3:
            raise DataError("keypoints must be [x, y, visibility] triples", path, line)
        if len(kps) != NUM_JOINTS:
            raise DataError(f"expected {NUM_JOINTS} joints, got {len(kps)}", path, line)
        if np.any((kps[:, 2] < 0) | (kps[:, 2] > 1)):
            raise DataError("joint visibility outside [0, 1]", path, line)
        frame = int(_field(rec, "frame", path, line))
        out[str(_field(rec, "video", path, line))][frame].append(Skeleton(kps[:, :2], kps[:, 2]))
    return {v: dict(frames) for v, frames in out.items()}


def save_keypoints(path, records: Iterable[tuple[str, int, Skeleton]]):
    _write_jsonl(path, ({"video": v, "frame": int(f),
                         "keypoints": [[float(x), float(y), float(s)] for (x, y), s in zip(sk.joints, sk.visibility)]}
                        for v, f, sk in records))


# feature grids

GRID_MAGIC = b"STFG"
GRID_VERSION = 1
_GRID_HEADER = struct.Struct("<4sHHIIIiIff")


@dataclass(frozen=True)
class GridHeader:
    channels: int
    height: int
    width: int
    first_frame: int
    count: int
    frame_w: float
    frame_h: float


def write_feature_grids(path, values: np.ndarray, first_frame: int, frame_w: float, frame_h: float):
    """Write ``(count, c, h, w)`` values; stored as float32."""
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 4:
        raise ValueError("grid values must have shape (count, c, h, w)")
    count, c, h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(_GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION, _GRID_HEADER.size, c, h, w,
                                   first_frame, count, frame_w, frame_h))
        fh.write(np.ascontiguousarray(values).tobytes())


class FeatureGridFile:
    """Random-access reader; frames are memory-mapped, never loaded whole."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            raw = fh.read(_GRID_HEADER.size)
        if len(raw) < _GRID_HEADER.size:
            raise DataError("truncated feature-grid header", self.path)
        magic, version, hsize, c, h, w, first, count, fw, fh_ = _GRID_HEADER.unpack(raw)
        if magic != GRID_MAGIC:
            raise DataError(f"bad magic {magic!r}", self.path)
        if version != GRID_VERSION:
            raise DataError(f"unsupported feature-grid version {version}", self.path)
        if min(c, h, w) < 1:
            raise DataError("grid dimensions must be >= 1", self.path)
        self.header = GridHeader(c, h, w, first, count, float(fw), float(fh_))
        expected = hsize + count * c * h * w * 4
        if self.path.stat().st_size != expected:
            raise DataError(f"file size {self.path.stat().st_size} does not match header ({expected})", self.path)
        self._data = None
        if count:
            self._data = np.memmap(self.path, dtype="<f4", mode="r", offset=hsize, shape=(count, c, h, w))

    @property
    def frames(self) -> range:
        return range(self.header.first_frame, self.header.first_frame + self.header.count)

    def read(self, begin: int, end: int) -> list[FeatureGrid]:
        """Grids for absolute frames ``begin..end`` inclusive."""
        if end < begin:
            return []
        if begin not in self.frames or end not in self.frames:
            raise DataError(f"frames [{begin}, {end}] outside stored range "
                            f"[{self.frames.start}, {self.frames.stop - 1}]", self.path)
        lo = begin - self.header.first_frame
        block = np.array(self._data[lo:lo + end - begin + 1])
        return [FeatureGrid(begin + i, block[i], self.header.frame_w, self.header.frame_h)
                for i in range(len(block))]


def load_feature_grids(path, begin: int | None = None, end: int | None = None) -> list[FeatureGrid]:
    f = FeatureGridFile(path)
    if f.header.count == 0:
        if begin is None:
            return []
        raise DataError(f"frames [{begin}, {end}] requested from an empty grid file", path)
    begin = f.frames.start if begin is None else begin
    end = f.frames.stop - 1 if end is None else end
    return f.read(begin, end)


# embeddings

def load_embeddings(path) -> EmbeddingTable:
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            token = parts[0]
            try:
                vec = [float(x) for x in parts[1:]]
            except ValueError:
                raise DataError("non-numeric vector entry", path, n) from None
            if not vec:
                raise DataError(f"token {token!r} has no vector", path, n)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DataError(f"dimension {len(vec)} differs from {dim}", path, n)
            if token in vectors:
                raise DataError(f"duplicate token {token!r}", path, n)
            vectors[token] = vec
    if not vectors:
        raise DataError("embedding file is empty", path)
    return EmbeddingTable(vectors)


def save_embeddings(path, table):
    with open(path, "w", encoding="utf-8") as fh:
        for token in table:
            fh.write(token + " " + " ".join(repr(float(x)) for x in table[token]) + "\n")


# annotations

@dataclass
class RelationInstance:
    subject_tid: str
    object_tid: str
    predicate: str
    begin: int
    end: int


@dataclass
class AnnotationRecord:
    """Ground-truth trajectories and HOI instances of one video (frame spans inclusive)."""

    video: str
    frame_count: int
    width: float
    height: float
    fps: float = 30.0
    trajectories: dict[str, Trajectory] = field(default_factory=dict)
    relations: list[RelationInstance] = field(default_factory=list)

    def hoi_instances(self) -> list[HoiInstance]:
        out = []
        for r in self.relations:
            s, o = self.trajectories[r.subject_tid], self.trajectories[r.object_tid]
            out.append(HoiInstance(self.video, r.predicate, o.category, s.sliced(r.begin, r.end),
                                   o.sliced(r.begin, r.end), 1.0))
        return out


def _corners(box) -> dict:
    x, y, w, h = (float(v) for v in box)
    return {"xmin": x, "ymin": y, "xmax": x + w, "ymax": y + h}


def save_annotation(path, ann: AnnotationRecord):
    """VidOR-style JSON: per-frame box lists keyed by ``tid``; relation ``end_fid`` is exclusive."""
    frames = [[] for _ in range(ann.frame_count)]
    for tid, t in ann.trajectories.items():
        for f in range(t.begin, t.end + 1):
            frames[f].append({"tid": tid, "bbox": _corners(t.box_at(f))})
    doc = {
        "video_id": ann.video, "frame_count": ann.frame_count, "fps": ann.fps,
        "width": ann.width, "height": ann.height,
        "subject/objects": [{"tid": tid, "category": t.category} for tid, t in ann.trajectories.items()],
        "trajectories": frames,
        "relation_instances": [{"subject_tid": r.subject_tid, "object_tid": r.object_tid, "predicate": r.predicate,
                                "begin_fid": r.begin, "end_fid": r.end + 1} for r in ann.relations],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_annotation(path, human_categories=("human",)) -> AnnotationRecord:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON ({exc.msg})", path, exc.lineno) from None
    try:
        cats = {str(e["tid"]): e["category"] for e in doc["subject/objects"]}
        per_tid: dict[str, dict[int, np.ndarray]] = defaultdict(dict)
        for f, entries in enumerate(doc["trajectories"]):
            for e in entries:
                b = e["bbox"]
                x1, y1 = b["xmin"], b["ymin"]
                per_tid[str(e["tid"])][f] = np.array([x1, y1, b["xmax"] - x1, b["ymax"] - y1])
        trajectories = {}
        for tid, cat in cats.items():
            frames = per_tid.get(tid)
            if not frames:
                raise DataError(f"trajectory {tid!r} has no boxes", path)
            begin, end = min(frames), max(frames)
            if len(frames) != end - begin + 1:
                raise DataError(f"trajectory {tid!r} is not temporally contiguous", path)
            trajectories[tid] = Trajectory(begin, np.stack([frames[f] for f in range(begin, end + 1)]), cat,
                                           1.0, track_id=tid)
        relations = []
        for r in doc["relation_instances"]:
            rel = RelationInstance(str(r["subject_tid"]), str(r["object_tid"]), r["predicate"],
                                   int(r["begin_fid"]), int(r["end_fid"]) - 1)
            for tid in (rel.subject_tid, rel.object_tid):
                if tid not in trajectories:
                    raise DataError(f"relation references unknown trajectory {tid!r}", path)
                t = trajectories[tid]
                if not (t.begin <= rel.begin <= rel.end <= t.end):
                    raise DataError(f"relation span [{rel.begin}, {rel.end}] outside trajectory {tid!r}", path)
            if trajectories[rel.subject_tid].category not in human_categories:
                raise DataError(f"relation subject {rel.subject_tid!r} is not human", path)
            relations.append(rel)
        return AnnotationRecord(str(doc["video_id"]), int(doc["frame_count"]), float(doc["width"]),
                                float(doc["height"]), float(doc.get("fps", 30.0)), trajectories, relations)
    except (KeyError, TypeError) as exc:
        raise DataError(f"missing or malformed annotation field: {exc}", path) from None


# trajectories and predictions

def _traj_record(t: Trajectory) -> dict:
    return {"begin": t.begin, "end": t.end, "category": t.category, "score": float(t.score),
            "boxes": [[float(v) for v in b] for b in t.boxes]}


def _traj_from(rec, path, line) -> Trajectory:
    boxes = rec["boxes"]
    begin, end = int(rec["begin"]), int(rec["end"])
    if len(boxes) != end - begin + 1:
        raise DataError(f"span [{begin}, {end}] holds {end - begin + 1} frames but {len(boxes)} boxes", path, line)
    return Trajectory(begin, np.array(boxes, dtype=np.float64), rec["category"], float(rec.get("score", 1.0)))


def save_trajectories(path, trajs_by_video):
    _write_jsonl(path, ({"video": v, "id": t.track_id, **_traj_record(t)}
                        for v in sorted(trajs_by_video) for t in trajs_by_video[v]))


def load_trajectories(path) -> dict[str, list[Trajectory]]:
    out = defaultdict(list)
    for line, rec in _jsonl(path):
        try:
            t = _traj_from(rec, path, line)
            video = str(rec["video"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"bad trajectory record: {exc}", path, line) from None
        t.track_id = rec.get("id")
        out[video].append(t)
    return dict(out)


def save_predictions(path, instances: Sequence[HoiInstance]):
    _write_jsonl(path, ({"video": i.video, "predicate": i.predicate, "object_category": i.object_category,
                         "score": float(i.score), "subject": _traj_record(i.subject), "object": _traj_record(i.object)}
                        for i in instances))


def load_predictions(path) -> list[HoiInstance]:
    out = []
    for line, rec in _jsonl(path):
        try:
            out.append(HoiInstance(rec["video"], rec["predicate"], rec["object_category"],
                                   _traj_from(rec["subject"], path, line), _traj_from(rec["object"], path, line),
                                   float(rec["score"])))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"bad prediction record: {exc}", path, line) from None
    return out


# manifest

@dataclass
class VideoEntry:
    id: str
    frame_count: int
    width: float
    height: float
    fps: float = 30.0
    detections: Path | None = None
    keypoints: Path | None = None
    grids: Path | None = None
    annotations: Path | None = None


@dataclass
class DatasetManifest:
    labels: LabelSpace
    embeddings: Path
    videos: list[VideoEntry]
    human_categories: tuple[str, ...] = ("human",)
    root: Path = Path(".")


_VIDEO_FILES = ("detections", "keypoints", "grids", "annotations")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError("manifest not found", path) from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON ({exc.msg})", path, exc.lineno) from None
    root = path.parent

    def resolve(rel):
        if rel is None:
            return None
        p = root / rel
        if not p.exists():
            raise DataError(f"referenced file {rel!r} does not exist", path)
        return p

    try:
        labels = LabelSpace(doc["labels"]["objects"], doc["labels"]["predicates"])
        videos = []
        for v in doc["videos"]:
            entry = VideoEntry(str(v["id"]), int(v["frame_count"]), float(v["width"]), float(v["height"]),
                               float(v.get("fps", 30.0)), *(resolve(v.get(k)) for k in _VIDEO_FILES))
            if entry.frame_count < 1:
                raise DataError(f"video {entry.id!r} has frame_count < 1", path)
            videos.append(entry)
        return DatasetManifest(labels, resolve(doc["embeddings"]), videos,
                               tuple(doc.get("human_categories", ["human"])), root)
    except (KeyError, TypeError) as exc:
        raise DataError(f"missing or malformed manifest field: {exc}", path) from None


def save_manifest(path, manifest: DatasetManifest):
    path = Path(path)

    def rel(p):
        return None if p is None else Path(p).relative_to(path.parent).as_posix()

    doc = {
        "format": "sthoid-manifest", "version": 1,
        "labels": {"objects": list(manifest.labels.objects), "predicates": list(manifest.labels.predicates)},
        "human_categories": list(manifest.human_categories),
        "embeddings": rel(manifest.embeddings),
        "videos": [{"id": v.id, "frame_count": v.frame_count, "width": v.width, "height": v.height, "fps": v.fps,
                    **{k: rel(getattr(v, k)) for k in _VIDEO_FILES if getattr(v, k) is not None}}
                   for v in manifest.videos],
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# model checkpoints

MODEL_MAGIC = b"STHOIDM\0"
MODEL_VERSION = 1
_HEAD_FIELDS = ("W1", "b1", "W2", "b2", "mean", "scale")


def save_model(path, model: FactorizedPredicateClassifier, extra: dict | None = None):
    arrays = [("mask", np.asarray(model.mask_, dtype="<u1")),
              ("loss_curve", np.asarray(model.loss_curve_, dtype="<f8"))]
    for t, head in model.heads_.items():
        arrays += [(f"{t}.{name}", np.asarray(getattr(head, name), dtype="<f8")) for name in _HEAD_FIELDS]
    index, chunks, offset = [], [], 0
    for name, arr in arrays:
        data = np.ascontiguousarray(arr).tobytes()
        index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    params = model.get_params()
    params = {k: list(v) if isinstance(v, (tuple, list)) else v for k, v in params.items()}
    header = {"params": params, "heads": list(model.heads_), "arrays": index,
              "payload_sha256": hashlib.sha256(payload).hexdigest(), "extra": extra or {}}
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(raw)) + raw + payload)


def load_model(path) -> tuple[FactorizedPredicateClassifier, dict]:
    """Returns the fitted classifier and the ``extra`` metadata stored with it."""
    blob = Path(path).read_bytes()
    if blob[:8] != MODEL_MAGIC:
        raise DataError("not a model checkpoint (bad magic)", path)
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != MODEL_VERSION:
        raise DataError(f"unsupported model version {version}", path)
    try:
        header = json.loads(blob[16:16 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise DataError("corrupted model header", path) from None
    payload = blob[16 + hlen:]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise DataError("model payload checksum mismatch", path)
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        n = int(np.prod(entry["shape"], dtype=np.int64)) * dtype.itemsize
        arrays[entry["name"]] = np.frombuffer(payload[entry["offset"]:entry["offset"] + n],
                                              dtype=dtype).reshape(entry["shape"]).copy()
    params = dict(header["params"])
    for key in ("predicates", "objects", "block_dims"):
        params[key] = tuple(params[key])
    model = FactorizedPredicateClassifier(**params)
    if arrays["mask"].shape != (len(model.objects), len(model.predicates)):
        raise DataError(f"mask shape {arrays['mask'].shape} does not match the label space", path)
    model.mask_ = arrays["mask"]
    model.loss_curve_ = arrays["loss_curve"].tolist()
    model.groups_ = model._groups()
    model.heads_ = {t: Head(*(arrays[f"{t}.{name}"] for name in _HEAD_FIELDS)) for t in header["heads"]}
    model.classes_ = np.array(model.predicates)
    return model, header.get("extra", {})
