"""``padkit`` command line: prepare, train, evaluate, protocols, embed, plot.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import cv2
import yaml

from .config import build_train_config
from .data import (
    ATTACK,
    BONA_FIDE,
    FrameDecoder,
    Manifest,
    ManifestError,
    OpenCVDecoder,
    Sample,
    load_manifest,
    load_sample_image,
    sample_frame_indices,
    write_manifest,
)
from .metrics import MetricsError, parse_threshold_policy, read_report, write_report, write_scores
from .models import load_checkpoint, save_checkpoint
from .training import (
    STANDARD_PROTOCOLS,
    ConfigError,
    ImageSource,
    ProtocolSpec,
    TrainingDiverged,
    evaluate_model,
    run_protocols,
    train,
)

log = logging.getLogger("padkit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

LISTING_HEADER = ("media_path", "media_kind", "label", "attack_type", "dataset_id", "source")
_LISTING_LABELS = {"bonafide": BONA_FIDE, "bona_fide": BONA_FIDE, "attack": ATTACK}


class UsageError(Exception):
    pass


def prepare_manifest(listing, frames_per_video: int = 25, decoder: Optional[FrameDecoder] = None,
                     root=None) -> Manifest:
    """Turn a media listing into a frame-level manifest.

    Listing columns: ``media_path, media_kind, label, attack_type, dataset_id,
    source`` plus optional ``video_id``, ``total_frames`` and ``box_x..box_h``.
    Authentic videos contribute ``frames_per_video`` evenly spaced frames,
    synthetic videos their middle frame, images a single row.
    """
    listing = Path(listing)
    decoder = decoder or OpenCVDecoder()
    rows = []
    with listing.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in LISTING_HEADER if c not in (reader.fieldnames or ())]
        if missing:
            raise ManifestError(f"{listing}: missing columns {missing}")
        for rec in reader:
            line = reader.line_num
            label = _LISTING_LABELS.get((rec["label"] or "").strip())
            if label is None:
                raise ManifestError(f"{listing} line {line}: unknown label {rec['label']!r}")
            source = (rec["source"] or "").strip()
            if source not in ("authentic", "synthetic"):
                raise ManifestError(f"{listing} line {line}: source must be authentic or synthetic")
            kind = rec["media_kind"].strip()
            path = rec["media_path"].strip()
            box = None
            box_vals = [(rec.get(k) or "").strip() for k in ("box_x", "box_y", "box_w", "box_h")]
            if all(box_vals):
                box = tuple(int(round(float(v))) for v in box_vals)
            video_id = (rec.get("video_id") or "").strip() or Path(path).stem
            if kind == "video":
                total = (rec.get("total_frames") or "").strip()
                if total:
                    n = int(total)
                else:
                    full = Path(root) / path if root is not None and not Path(path).is_absolute() else Path(path)
                    try:
                        n = decoder.frame_count(str(full))
                    except OSError as e:
                        raise ManifestError(f"{listing} line {line}: {e}") from e
                k = 1 if source == "synthetic" else min(frames_per_video, n)
                frames = sample_frame_indices(n, k)
            elif kind == "image":
                frames = [0]
            else:
                raise ManifestError(f"{listing} line {line}: unknown media_kind {kind!r}")
            try:
                for f in frames:
                    rows.append(Sample(path, kind, label, rec["attack_type"].strip(), rec["dataset_id"].strip(),
                                       video_id, f, box))
            except ValueError as e:
                raise ManifestError(f"{listing} line {line}: {e}") from e
    return Manifest(rows)


def materialize_crops(manifest: Manifest, out_dir, size: int = 224, margin: float = 0.0, root=None) -> Manifest:
    """Write every row's face crop as PNG and return a manifest pointing at the crops."""
    out_dir = Path(out_dir)
    rows = []
    for s in manifest.rows:
        img = load_sample_image(s, margin, size, root)
        rel = Path("crops") / s.dataset_id / f"{s.video_id}_{s.frame_index:05d}.png"
        (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
        cv2.imwrite(str(out_dir / rel), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
        rows.append(Sample(str(rel), "image", s.label, s.attack_type, s.dataset_id, s.video_id, s.frame_index))
    return Manifest(rows)


def _config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="YAML or JSON config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key by dotted path (repeatable)")
    p.add_argument("--seed", type=int)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="padkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="build a frame-level manifest from a media listing")
    p.add_argument("listing", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames-per-video", type=int, default=25)
    p.add_argument("--root", type=Path, help="directory media paths are relative to")
    p.add_argument("--crops", action="store_true", help="write face crops to disk")
    p.add_argument("--margin", type=float, default=0.0)

    p = sub.add_parser("train", help="train one model")
    _config_args(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="score a manifest and compute metrics")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threshold-policy", default="eer", help="eer or fixed:<value>")
    p.add_argument("--root", type=Path)
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--batch-size", type=int, default=64)

    p = sub.add_parser("protocols", help="run cross-dataset scenarios")
    _config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threshold-policy", default="eer")

    p = sub.add_parser("embed", help="t-SNE of penultimate features")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, action="append", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--samples-per-dataset", type=int, default=500)
    p.add_argument("--color-key", choices=("class", "attack_type", "dataset"), default="attack_type")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--root", type=Path)

    p = sub.add_parser("plot", help="ROC curves from saved reports")
    p.add_argument("--report", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--out", type=Path, required=True)
    return parser


def _train_config(args, extra_keys=()):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return build_train_config(args.config, overrides, extra_keys=extra_keys)


def cmd_prepare(args) -> int:
    manifest = prepare_manifest(args.listing, args.frames_per_video, root=args.root)
    if args.crops:
        manifest = materialize_crops(manifest, args.out, margin=args.margin, root=args.root)
    path = write_manifest(manifest, args.out / "manifest.csv")
    log.info("wrote %d rows to %s", len(manifest), path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, _ = _train_config(args)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    model, _ = train(cfg, out_dir=args.out)
    save_checkpoint(model, args.out / "model.pt")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    policy = parse_threshold_policy(args.threshold_policy)
    try:
        model = load_checkpoint(args.checkpoint)
    except (RuntimeError, KeyError) as e:
        raise ConfigError(f"checkpoint {args.checkpoint} does not match its architecture: {e}") from e
    manifest = load_manifest(args.manifest)
    frames, videos, report = evaluate_model(model, manifest, policy, args.batch_size, args.margin, args.root)
    write_scores(frames, args.out / "scores.csv")
    write_scores(videos, args.out / "video_scores.csv")
    write_report(report, args.out / "report.txt")
    print(f"HTER {100 * report.hter:.2f}%  AUC {100 * report.auc:.2f}%  "
          f"threshold {report.threshold:.6g} ({report.threshold_policy})")
    return EXIT_OK


def cmd_protocols(args) -> int:
    from .reporting import render_results_table

    cfg, extras = _train_config(args, extra_keys=("datasets", "protocols", "supplement"))
    datasets = extras.get("datasets") or {}
    names = extras.get("protocols") or "standard"
    supplement = extras.get("supplement") or ()
    if names == "standard":
        specs = [ProtocolSpec(s.name, s.train_dataset_ids, s.test_dataset_id, tuple(supplement))
                 for s in STANDARD_PROTOCOLS]
    else:
        try:
            specs = [ProtocolSpec.parse(n, supplement) for n in names]
        except ValueError as e:
            raise ConfigError(str(e)) from e
    table = run_protocols(specs, cfg, datasets, parse_threshold_policy(args.threshold_policy), out_dir=args.out)
    text = render_results_table(table.rows)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "results.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    for r in table.rows:
        if r.status != "ok":
            log.error("%s failed: %s", r.name, r.error)
    return EXIT_DATA if table.failed else EXIT_OK


def cmd_embed(args) -> int:
    from .reporting import extract_features, plot_embedding, project_2d, sample_per_dataset, write_embedding

    model = load_checkpoint(args.checkpoint)
    manifests = [load_manifest(m) for m in args.manifest]
    samples = sample_per_dataset(manifests, args.samples_per_dataset, args.seed)
    feats = extract_features(model, samples, ImageSource(model.cfg.input_size, 0.0, args.root))
    points = project_2d([f for _, f in feats], seed=args.seed)
    write_embedding(samples, points, args.out / "embedding.csv")
    plot_embedding(samples, points, args.out / "embedding.png", color_key=args.color_key)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .reporting import plot_roc

    reports = []
    for item in args.report:
        name, sep, path = item.partition("=")
        if not sep:
            raise UsageError(f"--report expects NAME=PATH, got {item!r}")
        reports.append((name, read_report(path)))
    plot_roc(reports, args.out / "roc.png")
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "protocols": cmd_protocols,
    "embed": cmd_embed,
    "plot": cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"padkit: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (UsageError, ConfigError) as e:
        print(f"padkit: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as e:
        print(f"padkit: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ManifestError, MetricsError, FileNotFoundError, OSError, ValueError) as e:
        print(f"padkit: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
