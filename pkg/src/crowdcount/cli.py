"""Command line entry points for dataset synthesis, training and evaluation.

Heavy imports (numpy and everything built on it) happen inside the command
handlers so that --threads can pin the BLAS thread pools first.

Exit codes: 0 on success, 1 on runtime failures (bad data, divergence,
missing files), 2 on usage errors including malformed config files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__

ARCH_CHOICES = ("csrnet_lite", "mcnn")


class UsageError(Exception):
    """Bad invocation or malformed configuration; maps to exit code 2."""


def _load_config(path: Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return obj


def _require_out(args) -> Path:
    out = getattr(args, "out", None)
    if out is None:
        raise UsageError("this command requires --out")
    return Path(out)


def _seed(args, default: int = 0) -> int:
    seed = getattr(args, "seed", None)
    return default if seed is None else seed


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the global flags appear before or after the subcommand
    # without the subparser default clobbering an earlier value
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, metavar="N",
                   help="master seed; all stage randomness derives from it (default 0)")
    g.add_argument("--out", type=Path, default=argparse.SUPPRESS, metavar="DIR",
                   help="output directory")
    g.add_argument("--config", type=Path, default=argparse.SUPPRESS, metavar="JSON",
                   help="JSON config file")
    g.add_argument("--threads", type=int, default=argparse.SUPPRESS, metavar="N",
                   help="pin BLAS/OpenMP thread pools to N threads")
    g.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                   help="suppress progress output")

    parser = argparse.ArgumentParser(
        prog="crowdcount", parents=[common],
        description="Two-stage crowd counting on density maps: train a deep "
                    "annotator, label a dataset with it, train light models "
                    "on perfect, imperfect or missing labels, and compare.",
    )
    parser.add_argument("--version", action="store_true",
                        help="print package and file format versions, then exit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", parents=[common],
                       help="synthesize a seeded blob-scene dataset")
    p.add_argument("--n-images", type=int, default=None, metavar="N")
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--count-min", type=int, default=None)
    p.add_argument("--count-max", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None,
                   help="Gaussian kernel width for ground-truth density maps")

    p = sub.add_parser("make-labels", parents=[common],
                       help="derive a label set from a dataset")
    p.add_argument("--dataset", type=Path, required=True, metavar="MANIFEST")
    p.add_argument("--kind", choices=("missing", "annotator"), default="missing")
    p.add_argument("--fraction", type=float, default=0.3,
                   help="fraction of dots to delete (kind=missing)")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="annotator checkpoint (kind=annotator)")
    p.add_argument("--sigma", type=float, default=None)

    p = sub.add_parser("train", parents=[common],
                       help="train one model on a dataset")
    p.add_argument("--dataset", type=Path, required=True, metavar="MANIFEST")
    p.add_argument("--labels", type=Path, default=None, metavar="MANIFEST",
                   help="label manifest to train on (default: dataset ground truth)")
    p.add_argument("--arch", choices=ARCH_CHOICES, required=True)
    p.add_argument("--width", type=float, default=1.0,
                   help="channel width multiplier")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--no-augment", action="store_true")

    p = sub.add_parser("annotate", parents=[common],
                       help="write predicted density maps for a dataset")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--dataset", type=Path, required=True, metavar="MANIFEST")

    p = sub.add_parser("eval", parents=[common],
                       help="score predictions against ground truth")
    p.add_argument("--dataset", type=Path, required=True, metavar="MANIFEST")
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--pred-manifest", type=Path, default=None,
                   help="score stored density maps instead of a model")
    p.add_argument("--game-grid", type=int, default=4)

    p = sub.add_parser("experiment", parents=[common],
                       help="run the full two-stage comparison from a config")

    return parser


# --- handlers --------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .density import DEFAULT_SIGMA
    from .scenes import SceneConfig, generate_dataset

    out = _require_out(args)
    obj = {}
    if getattr(args, "config", None) is not None:
        obj = _load_config(args.config)
    n_images = obj.pop("n_images", None)
    sigma = obj.pop("sigma", None)
    scene_dict = dict(obj)
    for key in ("height", "width", "count_min", "count_max", "noise"):
        value = getattr(args, key)
        if value is not None:
            scene_dict[key] = value
    scene_dict["seed"] = _seed(args, scene_dict.get("seed", 0))
    try:
        scene = SceneConfig.from_dict(scene_dict)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if args.n_images is not None:
        n_images = args.n_images
    if args.sigma is not None:
        sigma = args.sigma
    manifest = generate_dataset(scene, n_images or 200, out,
                                DEFAULT_SIGMA if sigma is None else sigma)
    if not getattr(args, "quiet", False):
        print(f"wrote {len(manifest)} images to {out}")
    return 0


def cmd_make_labels(args) -> int:
    from . import dataio
    from .density import DEFAULT_SIGMA
    from .nn import load_checkpoint
    from .pipeline import annotate, make_missing_labels

    out = _require_out(args)
    manifest = dataio.read_manifest(args.dataset)
    if args.kind == "annotator":
        if args.checkpoint is None:
            raise UsageError("--kind annotator requires --checkpoint")
        model = load_checkpoint(args.checkpoint)
        labeled = annotate(model, manifest, out)
    else:
        sigma = DEFAULT_SIGMA if args.sigma is None else args.sigma
        labeled = make_missing_labels(manifest, args.fraction, _seed(args),
                                      out, sigma)
    if not getattr(args, "quiet", False):
        print(f"wrote {len(labeled)} {labeled.regime} labels to {out}")
    return 0


def cmd_train(args) -> int:
    from . import dataio
    from .models import build_model
    from .nn import save_checkpoint
    from .pipeline import TrainConfig, load_samples, split_dataset, train
    from .seeding import derive_seed

    out = _require_out(args)
    seed = _seed(args)
    manifest = dataio.read_manifest(args.dataset)
    label_manifest = None
    if args.labels is not None:
        label_manifest = dataio.read_manifest(args.labels)
    train_m, val_m = split_dataset(manifest, args.train_fraction,
                                   derive_seed(seed, "split"))
    model = build_model(args.arch, args.width, in_channels=1,
                        seed=derive_seed(seed, "init", args.arch))
    kwargs = {}
    if args.lr is not None:
        kwargs["lr"] = args.lr
    if args.batch_size is not None:
        kwargs["batch_size"] = args.batch_size
    if args.epochs is not None:
        kwargs["max_epochs"] = args.epochs
    if args.patience is not None:
        kwargs["patience"] = args.patience
    aug = not args.no_augment
    config = TrainConfig(seed=derive_seed(seed, "train", args.arch),
                         augment_brightness=aug, augment_contrast=aug,
                         augment_flip=aug, **kwargs)
    train_samples = load_samples(train_m, label_manifest)
    val_samples = load_samples(val_m)
    model, curves = train(model, train_samples, val_samples, config)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.nnck")
    lines = ["epoch,train_loss,val_mae"]
    for epoch, (loss, vm) in enumerate(zip(curves.train_loss, curves.val_mae)):
        lines.append(f"{epoch},{loss!r},{vm!r}")
    (out / "curves.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if not getattr(args, "quiet", False):
        best = min(curves.val_mae) if curves.val_mae else float("nan")
        print(f"trained {model.name} for {len(curves.val_mae)} epochs, "
              f"best val MAE {best:.3f}; checkpoint in {out}")
    return 0


def cmd_annotate(args) -> int:
    from . import dataio
    from .nn import load_checkpoint
    from .pipeline import annotate

    out = _require_out(args)
    model = load_checkpoint(args.checkpoint)
    manifest = dataio.read_manifest(args.dataset)
    labeled = annotate(model, manifest, out)
    if not getattr(args, "quiet", False):
        print(f"wrote {len(labeled)} predicted density maps to {out}")
    return 0


def cmd_eval(args) -> int:
    from . import dataio
    from .metrics import GameConfig, evaluate, render_table
    from .models import predict_density
    from .nn import load_checkpoint

    if (args.checkpoint is None) == (args.pred_manifest is None):
        raise UsageError("eval needs exactly one of --checkpoint or --pred-manifest")
    manifest = dataio.read_manifest(args.dataset)
    gts = [dataio.read_dmap(manifest.resolve(e.density_q_path))
           for e in manifest.images]
    if args.checkpoint is not None:
        model = load_checkpoint(args.checkpoint)
        preds = [predict_density(model, dataio.read_pgm(manifest.resolve(e.image_path)))
                 for e in manifest.images]
        model_name = model.name
    else:
        pm = dataio.read_manifest(args.pred_manifest)
        by_id = {e.id: e for e in pm.images}
        missing = [e.id for e in manifest.images if e.id not in by_id]
        if missing:
            raise ValueError(f"prediction manifest lacks entries for {missing[:3]}"
                             + ("..." if len(missing) > 3 else ""))
        preds = [dataio.read_dmap(pm.resolve(by_id[e.id].density_q_path))
                 for e in manifest.images]
        model_name = pm.regime
    report = evaluate(preds, gts, GameConfig(grid=args.game_grid),
                      model=model_name, regime=manifest.regime,
                      dataset=Path(args.dataset).resolve().parent.name)
    print(render_table([report]))
    out = getattr(args, "out", None)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        dataio.dump_json(report.to_dict(), Path(out) / "metrics.json")
    return 0


def cmd_experiment(args) -> int:
    from dataclasses import replace

    from .pipeline import ExperimentConfig, run_experiment

    out = _require_out(args)
    config_path = getattr(args, "config", None)
    if config_path is None:
        raise UsageError("experiment requires --config")
    raw = _load_config(config_path)
    try:
        cfg = ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{config_path}: {exc}") from exc
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    quiet = getattr(args, "quiet", False)
    report = run_experiment(cfg, out, config_echo=raw, quiet=quiet)
    if not quiet:
        print(f"report written to {out / 'report.json'} "
              f"({report.wall_clock_seconds:.1f}s)")
    return 0


HANDLERS = {
    "gen-data": cmd_gen_data,
    "make-labels": cmd_make_labels,
    "train": cmd_train,
    "annotate": cmd_annotate,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
}


def _apply_threads(args) -> None:
    threads = getattr(args, "threads", None)
    if threads is None:
        return
    if threads < 1:
        raise UsageError(f"--threads must be >= 1, got {threads}")
    import os

    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args)
        if args.version:
            from .dataio import DMAP_VERSION
            from .nn import NNCK_VERSION

            print(f"crowdcount {__version__} "
                  f"(dmap format {DMAP_VERSION}, checkpoint format {NNCK_VERSION})")
            return 0
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        return HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
