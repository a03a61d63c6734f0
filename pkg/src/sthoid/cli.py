"""Command-line interface: ``sthoid <command> [options]``.

Exit codes: 0 on success, 1 on invalid configuration or arguments, 2 on bad
or missing data.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import ConfigError, dump_config, load_config, worker_count
from .evaluation import MatchConfig, class_map, evaluate, frame_detection_map, video_tags
from .io import (DataError, DatasetManifest, VideoEntry, load_embeddings, load_manifest, load_model,
                 load_predictions, save_model, save_predictions, save_trajectories)
from .pipeline import STHOIDetector, VideoData, load_videos
from .recognition import instance_sort_key
from .synth import MOTIONS, generate_suite

ABLATIONS = {
    "full": {},
    "no_BP": {"use_behavior": False},
    "no_OC": {"use_mask": False},
    "no_LF": {"late_fusion": False},
    "no_CF": {"factorized": False},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                   help="override one config field (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sthoid", description="Spatio-temporal human-object interaction detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic scene suite with a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--jitter", type=float, default=0.0, help="box jitter sigma in pixels")
    p.add_argument("--drop-rate", type=float, default=0.0)
    p.add_argument("--fp-rate", type=float, default=0.0, help="false-positive detections per frame")
    p.add_argument("--motion", choices=MOTIONS, help="one motion model for every scene (default: mixed)")
    p.add_argument("--embedding-dim", type=int, default=16)

    p = sub.add_parser("config", help="print the effective configuration")
    _add_config(p)
    p.add_argument("--dump", action="store_true", help="print every field with its value")

    p = sub.add_parser("track", help="link detections into trajectories")
    _add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="trajectory JSONL file")

    p = sub.add_parser("train", help="train the predicate classifier on annotated trajectories")
    _add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="model checkpoint")
    p.add_argument("--loss-curve", help="loss curve file (default: <out>.loss.tsv)")

    p = sub.add_parser("detect", help="run the full pipeline and write predictions")
    _add_config(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="prediction JSONL file")
    p.add_argument("--gt-trajectories", action="store_true", help="use annotated instead of tracked trajectories")

    p = sub.add_parser("evaluate", help="score predictions against the manifest annotations")
    _add_config(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--per-class", help="write per-category AP as CSV")

    p = sub.add_parser("tag", help="rank deduplicated HOI labels per video")
    _add_config(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--top", type=int, help="labels per video (default: largest N in evaluation.n_values)")
    p.add_argument("--out", help="write tags as JSON lines")

    p = sub.add_parser("ablate", help="train and evaluate each ablation on the same data")
    _add_config(p)
    p.add_argument("--train", required=True, help="training manifest")
    p.add_argument("--test", required=True, help="evaluation manifest")
    p.add_argument("--gt-trajectories", action="store_true")
    p.add_argument("--variants", nargs="+", choices=list(ABLATIONS), default=list(ABLATIONS))
    p.add_argument("--out", help="write the table as JSON")
    return parser


# helpers

def _match_config(cfg) -> MatchConfig:
    ev = cfg["evaluation"]
    return MatchConfig(ev["viou_threshold"], tuple(ev["k_values"]), tuple(ev["n_values"]))


def _detector(cfg, manifest: DatasetManifest) -> STHOIDetector:
    return STHOIDetector.from_config(cfg, manifest.labels, load_embeddings(manifest.embeddings),
                                     manifest.human_categories)


def _embedding_fingerprint(detector: STHOIDetector) -> str:
    tokens = set(detector.labels.objects) | set(detector.human_categories)
    return detector.embeddings.fingerprint(tokens)


def _map_videos(fn, manifest: DatasetManifest, extra, workers: int):
    """Apply ``fn(entry, manifest, *extra)`` to every video, ordered by video id."""
    entries = sorted(manifest.videos, key=lambda e: e.id)
    if workers <= 1 or len(entries) <= 1:
        return [fn(e, manifest, *extra) for e in entries]
    with ProcessPoolExecutor(max_workers=min(workers, len(entries))) as pool:
        futures = [pool.submit(fn, e, manifest, *extra) for e in entries]
        return [f.result() for f in futures]


def _track_one(entry: VideoEntry, manifest: DatasetManifest, detector: STHOIDetector):
    video = VideoData.load(entry, manifest)
    return entry.id, video.frame_count, detector.trajectories(video), video.annotation


def _detect_one(entry: VideoEntry, manifest: DatasetManifest, detector: STHOIDetector, gt: bool):
    return detector.predict_video(VideoData.load(entry, manifest), gt)


def _write_report(report: dict, out):
    text = json.dumps(report, indent=1) + "\n"
    sys.stdout.write("".join(f"{k}\t{v:.6f}\n" for k, v in report.items()))
    if out:
        Path(out).write_text(text, encoding="utf-8")


# commands

def cmd_synth(args) -> int:
    if args.scenes < 1 or args.frames < 2:
        raise ConfigError("--scenes must be >= 1 and --frames >= 2")
    if not 0 <= args.drop_rate <= 1 or not 0 <= args.fp_rate <= 1 or args.jitter < 0:
        raise ConfigError("rates must lie in [0, 1] and jitter must be >= 0")
    try:
        path = generate_suite(args.out, args.scenes, args.seed, num_frames=args.frames, jitter=args.jitter,
                              drop_rate=args.drop_rate, false_positive_rate=args.fp_rate, motion=args.motion,
                              embedding_dim=args.embedding_dim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(path)
    return 0


def cmd_config(args) -> int:
    cfg = load_config(args.config, args.overrides)
    print(dump_config(cfg) if args.dump else json.dumps(cfg, sort_keys=True))
    return 0


def cmd_track(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    detector = _detector(cfg, manifest)
    start = time.perf_counter()
    results = _map_videos(_track_one, manifest, (detector,), worker_count(cfg))
    elapsed = time.perf_counter() - start
    trajs = {vid: t for vid, _, t, _ in results}
    save_trajectories(args.out, trajs)
    frames = sum(n for _, n, _, _ in results)
    print(f"videos\t{len(results)}")
    print(f"trajectories\t{sum(len(t) for t in trajs.values())}")
    print(f"fps\t{frames / elapsed if elapsed > 0 else 0.0:.1f}")
    gts = {vid: list(ann.trajectories.values()) for vid, _, _, ann in results if ann is not None}
    if gts:
        print(f"detection_mAP\t{frame_detection_map({v: trajs[v] for v in gts}, gts):.6f}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    detector = _detector(cfg, manifest)
    videos = load_videos(manifest)
    if not any(v.annotation is not None for v in videos):
        raise DataError("no annotated videos to train on", args.manifest)
    try:
        detector.fit(videos)
    except ValueError as exc:
        raise DataError(str(exc), args.manifest) from None
    clf = detector.classifier_
    save_model(args.out, clf, {"channels": detector.channels_, "embedding_dim": detector.embeddings.dim,
                               "embeddings_sha256": _embedding_fingerprint(detector),
                               "config": cfg, "training_segments": detector.n_training_segments_})
    curve = Path(args.loss_curve) if args.loss_curve else Path(str(args.out) + ".loss.tsv")
    curve.write_text("epoch\tloss\n" + "".join(f"{i + 1}\t{v:.8f}\n" for i, v in enumerate(clf.loss_curve_)),
                     encoding="utf-8")
    print(f"segments\t{detector.n_training_segments_}")
    if clf.loss_curve_:
        print(f"final_loss\t{clf.loss_curve_[-1]:.6f}")
    return 0


def cmd_detect(args) -> int:
    cfg = load_config(args.config, args.overrides)
    manifest = load_manifest(args.manifest)
    clf, extra = load_model(args.model)
    detector = _detector(cfg, manifest)
    try:
        detector.use_classifier(clf, extra["channels"])
    except KeyError:
        raise DataError("model checkpoint lacks the feature channel count", args.model) from None
    except ValueError as exc:
        raise DataError(str(exc), args.model) from None
    if extra.get("embeddings_sha256", _embedding_fingerprint(detector)) != _embedding_fingerprint(detector):
        raise DataError("word vectors differ from the ones the model was trained with", manifest.embeddings)
    per_video = _map_videos(_detect_one, manifest, (detector, args.gt_trajectories), worker_count(cfg))
    preds = [p for items in per_video for p in items]
    save_predictions(args.out, preds)
    print(f"instances\t{len(preds)}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.overrides)
    match = _match_config(cfg)
    manifest = load_manifest(args.manifest)
    preds = load_predictions(args.predictions)
    known = {v.id for v in manifest.videos}
    orphans = sorted({p.video for p in preds} - known)
    if orphans:
        raise DataError(f"predictions name videos missing from the manifest: {', '.join(orphans)}",
                        args.predictions)
    gts = []
    for video in load_videos(manifest):
        if video.annotation is None:
            raise DataError(f"video {video.id!r} has no annotation file", args.manifest)
        gts += video.annotation.hoi_instances()
    _write_report(evaluate(preds, gts, match), args.out)
    if args.per_class:
        _, table = class_map(preds, gts, match)
        counts = {}
        for g in gts:
            counts[g.label] = counts.get(g.label, 0) + 1
        with open(args.per_class, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["predicate", "object", "num_gt", "ap"])
            for (pred, obj), ap in table.items():
                writer.writerow([pred, obj, counts[(pred, obj)], f"{ap:.6f}"])
    return 0


def cmd_tag(args) -> int:
    cfg = load_config(args.config, args.overrides)
    top = args.top if args.top is not None else max(cfg["evaluation"]["n_values"])
    if top < 1:
        raise ConfigError("--top must be >= 1")
    tags = video_tags(load_predictions(args.predictions))
    lines = []
    for video in sorted(tags):
        ranked = [{"predicate": p, "object": o, "score": s} for (p, o), s in tags[video][:top]]
        lines.append(json.dumps({"video": video, "tags": ranked}))
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.overrides)
    match = _match_config(cfg)
    train_manifest, test_manifest = load_manifest(args.train), load_manifest(args.test)
    train_videos, test_videos = load_videos(train_manifest), load_videos(test_manifest)
    gts = [i for v in test_videos if v.annotation is not None for i in v.annotation.hoi_instances()]
    table = {}
    for name in args.variants:
        detector = _detector(cfg, train_manifest).set_params(**ABLATIONS[name])
        try:
            detector.fit(train_videos)
        except ValueError as exc:
            raise DataError(str(exc), args.train) from None
        preds = sorted(detector.predict(test_videos, args.gt_trajectories), key=instance_sort_key)
        table[name] = evaluate(preds, gts, match)
    columns = list(next(iter(table.values())))
    print("variant\t" + "\t".join(columns))
    for name, row in table.items():
        print(name + "\t" + "\t".join(f"{row[c]:.4f}" for c in columns))
    if args.out:
        Path(args.out).write_text(json.dumps(table, indent=1) + "\n", encoding="utf-8")
    return 0


COMMANDS = {"synth": cmd_synth, "config": cmd_config, "track": cmd_track, "train": cmd_train,
            "detect": cmd_detect, "evaluate": cmd_evaluate, "tag": cmd_tag, "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"sthoid: configuration error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OSError) as exc:
        print(f"sthoid: data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
