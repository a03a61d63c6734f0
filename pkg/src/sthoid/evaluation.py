"""ST-HOID metrics: class mAP, video mAP, recall@K, tagging precision@N."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .geometry import Trajectory, iou, viou
from .recognition import HoiInstance, instance_sort_key


@dataclass(frozen=True)
class MatchConfig:
    viou_threshold: float = 0.5
    k_values: tuple[int, ...] = (50, 100)
    n_values: tuple[int, ...] = (1, 5, 10)

    def __post_init__(self):
        if not 0.0 < self.viou_threshold <= 1.0:
            raise ValueError("viou_threshold must lie in (0, 1]")
        if any(k < 1 for k in self.k_values) or any(n < 1 for n in self.n_values):
            raise ValueError("K and N values must be positive")


def match_instance(pred: HoiInstance, gts: Sequence[HoiInstance], used: list[bool],
                   cfg: MatchConfig = MatchConfig()) -> int | None:
    """Match ``pred`` to the unused gt of its label whose weaker trajectory vIoU is largest."""
    best, best_overlap = None, -1.0
    for k, gt in enumerate(gts):
        if used[k] or gt.label != pred.label or gt.video != pred.video:
            continue
        vs = viou(pred.subject, gt.subject)
        if vs <= cfg.viou_threshold:
            continue
        vo = viou(pred.object, gt.object)
        if vo <= cfg.viou_threshold:
            continue
        if min(vs, vo) > best_overlap:
            best, best_overlap = k, min(vs, vo)
    if best is not None:
        used[best] = True
    return best


def average_precision(flags: Sequence[int], num_gt: int) -> float:
    """Non-interpolated AP: mean over gts of the precision at each hit rank; 0 when ``num_gt`` is 0."""
    if num_gt <= 0:
        return 0.0
    flags = np.asarray(flags, dtype=np.float64)
    if flags.size == 0:
        return 0.0
    hits = np.cumsum(flags)
    precision = hits / np.arange(1, len(flags) + 1)
    return float(np.sum(precision * flags) / num_gt)


def _ranked(preds: Sequence[HoiInstance]) -> list[HoiInstance]:
    return sorted(preds, key=lambda p: (*instance_sort_key(p), p.video))


def _match_flags(preds: Sequence[HoiInstance], gts: Sequence[HoiInstance], cfg: MatchConfig) -> list[int]:
    """Greedy one-to-one matching of score-ranked predictions; gts may span several videos."""
    by_video: dict[str, list[HoiInstance]] = defaultdict(list)
    for g in gts:
        by_video[g.video].append(g)
    used = {v: [False] * len(g) for v, g in by_video.items()}
    flags = []
    for p in _ranked(preds):
        pool = by_video.get(p.video)
        flags.append(0 if pool is None else int(match_instance(p, pool, used[p.video], cfg) is not None))
    return flags


def _by(items, key):
    out = defaultdict(list)
    for it in items:
        out[key(it)].append(it)
    return out


def class_map(preds: Sequence[HoiInstance], gts: Sequence[HoiInstance],
              cfg: MatchConfig = MatchConfig()) -> tuple[float, dict[tuple[str, str], float]]:
    """Mean AP over ⟨predicate, object⟩ categories that have ground truth, plus the per-class table."""
    gt_by = _by(gts, lambda i: i.label)
    pred_by = _by(preds, lambda i: i.label)
    table = {}
    for label in sorted(gt_by):
        flags = _match_flags(pred_by.get(label, []), gt_by[label], cfg)
        table[label] = average_precision(flags, len(gt_by[label]))
    return (float(np.mean(list(table.values()))) if table else 0.0), table


def video_map(preds: Sequence[HoiInstance], gts: Sequence[HoiInstance], cfg: MatchConfig = MatchConfig()) -> float:
    gt_by = _by(gts, lambda i: i.video)
    pred_by = _by(preds, lambda i: i.video)
    aps = [average_precision(_match_flags(pred_by.get(v, []), gt_by[v], cfg), len(gt_by[v])) for v in sorted(gt_by)]
    return float(np.mean(aps)) if aps else 0.0


def recall_at_k(preds: Sequence[HoiInstance], gts: Sequence[HoiInstance],
                cfg: MatchConfig = MatchConfig()) -> dict[int, float]:
    gt_by = _by(gts, lambda i: i.video)
    pred_by = _by(preds, lambda i: i.video)
    out = {}
    for k in cfg.k_values:
        recalls = []
        for v in sorted(gt_by):
            top = _ranked(pred_by.get(v, []))[:k]
            recalls.append(sum(_match_flags(top, gt_by[v], cfg)) / len(gt_by[v]))
        out[k] = float(np.mean(recalls)) if recalls else 0.0
    return out


def video_tags(preds: Sequence[HoiInstance]) -> dict[str, list[tuple[tuple[str, str], float]]]:
    """Per video, deduplicated labels with their best score, ranked by score then label."""
    out = {}
    for v, items in _by(preds, lambda i: i.video).items():
        best: dict[tuple[str, str], float] = {}
        for it in items:
            best[it.label] = max(best.get(it.label, -np.inf), it.score)
        out[v] = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return out


def tagging_precision(pred_tags: Mapping[str, Sequence[tuple[str, str]]], gt_labels: Mapping[str, set],
                      cfg: MatchConfig = MatchConfig()) -> dict[int, float]:
    """P@N over videos with ground-truth labels; the denominator is ``min(N, predicted labels)``."""
    out = {}
    for n in cfg.n_values:
        values = []
        for v in sorted(gt_labels):
            if not gt_labels[v]:
                continue
            top = list(pred_tags.get(v, []))[:n]
            values.append(len(set(top) & set(gt_labels[v])) / len(top) if top else 0.0)
        out[n] = float(np.mean(values)) if values else 0.0
    return out


def evaluate(preds: Sequence[HoiInstance], gts: Sequence[HoiInstance], cfg: MatchConfig = MatchConfig()) -> dict:
    """All ST-HOID and tagging metrics in report order."""
    report = {}
    report["class_mAP"], _ = class_map(preds, gts, cfg)
    report["video_mAP"] = video_map(preds, gts, cfg)
    for k, r in recall_at_k(preds, gts, cfg).items():
        report[f"R@{k}"] = r
    tags = {v: [label for label, _ in ranked] for v, ranked in video_tags(preds).items()}
    gt_labels = {v: {i.label for i in items} for v, items in _by(gts, lambda i: i.video).items()}
    for n, p in tagging_precision(tags, gt_labels, cfg).items():
        report[f"P@{n}"] = p
    return report


def frame_detection_map(preds: Mapping[str, Sequence[Trajectory]], gts: Mapping[str, Sequence[Trajectory]],
                        iou_threshold: float = 0.5) -> float:
    """Frame-level detection mAP of trajectory boxes, scored by trajectory confidence."""
    gt_boxes: dict[tuple, list] = defaultdict(list)
    for v, trajs in gts.items():
        for t in trajs:
            for f in range(t.begin, t.end + 1):
                gt_boxes[(t.category, v, f)].append(t.box_at(f))
    categories = sorted({key[0] for key in gt_boxes})
    aps = []
    for cat in categories:
        dets = [(-t.score, v, f, n, t.box_at(f)) for v, trajs in preds.items()
                for n, t in enumerate(trajs) if t.category == cat for f in range(t.begin, t.end + 1)]
        dets.sort(key=lambda d: d[:4])
        used = {key: [False] * len(b) for key, b in gt_boxes.items() if key[0] == cat}
        flags = []
        for _, v, f, _, box in dets:
            pool = gt_boxes.get((cat, v, f), [])
            best, best_iou = None, iou_threshold
            for k, g in enumerate(pool):
                if not used[(cat, v, f)][k]:
                    o = iou(box, g)
                    if o >= best_iou:
                        best, best_iou = k, o
            if best is not None:
                used[(cat, v, f)][best] = True
            flags.append(int(best is not None))
        num_gt = sum(len(b) for key, b in gt_boxes.items() if key[0] == cat)
        aps.append(average_precision(flags, num_gt))
    return float(np.mean(aps)) if aps else 0.0
