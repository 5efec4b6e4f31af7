"""Command-line entry points.

Exit status: 0 success, 2 usage or configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .data import ManifestError, generate_toy_dataset, held_out_outfit_split, load_manifest, load_sample, write_split_manifests
from .evaluator import SETTINGS, normalize_setting, write_rankings, write_report

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("ccreid")


class UsageError(Exception):
    pass


def _config(args) -> dict:
    try:
        cfg = config_mod.load_config(args.config)
        if getattr(args, "seed", None) is not None:
            cfg["seed"] = args.seed
        if getattr(args, "out", None):
            cfg["out_dir"] = args.out
    except config_mod.ConfigError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _manifest(cfg, key, split):
    if not cfg[key]:
        raise UsageError(f"{key} is not set in the config")
    try:
        return load_manifest(cfg[key], split)
    except ManifestError as exc:
        raise UsageError(str(exc)) from None


def _write_eval_outputs(results, out_dir: Path, stem: str):
    from .plotting import plot_cmc

    write_report(results, out_dir / f"{stem}.tsv")
    for r in results:
        write_rankings(r, out_dir / f"{stem}_{r.setting}_rankings.tsv")
    plot_cmc(results, out_dir / f"{stem}_cmc.png")
    for r in results:
        print(f"{r.setting}: Rank-1 {100 * r.rank1:.2f}  mAP {100 * r.mAP:.2f}  "
              f"(queries {r.retained} retained, {r.dropped} dropped)")


def cmd_train(args) -> int:
    from .plotting import plot_loss_curve
    from .trainer import Trainer, evaluate

    cfg = _config(args)
    train = _manifest(cfg, "data.train", "train")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(config_mod.dump_config(cfg), encoding="utf-8")
    trainer = Trainer(cfg, train)
    if args.resume:
        try:
            trainer.load(args.resume)
        except (FileNotFoundError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        log.info("resumed at epoch %d, step %d", trainer.state.epoch, trainer.state.step)
    log_path = out / "train_log.tsv"
    try:
        trainer.train(log_path=log_path, out_dir=out)
    except FloatingPointError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    trainer.save(out / "checkpoint.pt")
    plot_loss_curve(log_path, out / "train_loss.png")
    if cfg["data.query"] and cfg["data.gallery"]:
        query = _manifest(cfg, "data.query", "query")
        gallery = _manifest(cfg, "data.gallery", "gallery")
        results = evaluate(trainer.model, query, gallery, trainer.size, cfg["eval.settings"])
        _write_eval_outputs(results, out, "report")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .trainer import evaluate, load_model

    try:
        setting = normalize_setting(args.setting)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = _config(args)
    ckpt_path = Path(args.checkpoint or Path(cfg["out_dir"]) / "checkpoint.pt")
    if not ckpt_path.is_file():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    try:
        model, _ = load_model(ckpt_path)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    query = _manifest(cfg, "data.query", "query")
    gallery = _manifest(cfg, "data.gallery", "gallery")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    size = (cfg["input.height"], cfg["input.width"])
    results = evaluate(model, query, gallery, size, [setting])
    _write_eval_outputs(results, out, f"eval_{setting}")
    return EXIT_OK


def cmd_augment_preview(args) -> int:
    from .augment import preview_grid
    from .plotting import save_image

    cfg = _config(args)
    if args.n < 0:
        raise UsageError("-n must be >= 0")
    if args.n == 0:
        return EXIT_OK
    train = _manifest(cfg, "data.train", "train")
    out = Path(cfg["out_dir"]) / "preview"
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.n):
        idx = i % len(train)
        sample = load_sample(train, idx, cfg["data.clothing_labels"])
        save_image(preview_grid(sample), out / f"preview_{i:03d}.png")
    print(f"wrote {args.n} preview grid(s) to {out}")
    return EXIT_OK


def cmd_toy_data(args) -> int:
    try:
        manifest, _ = generate_toy_dataset(args.out, args.ids, args.outfits, args.images,
                                           (args.height, args.width), args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_split_manifests(held_out_outfit_split(manifest), args.out)
    cfg_path = Path(args.out) / "toy.cfg"
    cfg_path.write_text(
        "preset = toy\n"
        f"seed = {args.seed}\n"
        "out_dir = 'run'\n"
        "data.train = 'train.tsv'\n"
        "data.query = 'query.tsv'\n"
        "data.gallery = 'gallery.tsv'\n"
        f"input.height = {args.height}\n"
        f"input.width = {args.width}\n",
        encoding="utf-8",
    )
    print(f"toy dataset: {len(manifest)} samples, config at {cfg_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccreid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", help="override out_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under one protocol setting")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", help="default: <out_dir>/checkpoint.pt")
    p.add_argument("--setting", required=True,
                   help="one of: " + ", ".join(s.replace("_", "-") for s in SETTINGS))
    p.add_argument("--out", help="override out_dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("augment", help="augmentation utilities")
    aug = p.add_subparsers(dest="augment_command", required=True)
    pp = aug.add_parser("preview", help="write raw / CDA / erased preview grids")
    pp.add_argument("--config", required=True)
    pp.add_argument("-n", type=int, default=4)
    pp.add_argument("--out", help="override out_dir")
    pp.add_argument("--seed", type=int)
    pp.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("toy-data", help="render the procedural toy dataset and a toy config")
    p.add_argument("--out", required=True)
    p.add_argument("--ids", type=int, default=8)
    p.add_argument("--outfits", type=int, default=2)
    p.add_argument("--images", type=int, default=8)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
