"""Batch command-line entry point: ``synth | train | eval | explain | ablate``.

Exit codes: 0 success, 2 usage or config error, 3 I/O error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .config import (ConfigError, build_model_config, build_synth_spec, build_train_config, known_keys,
                     load_config_file, resolve, synth_only_keys)
from .data_synth import export_cohort, generate, load_cohort, split_stratified
from .errors import CorruptCheckpointError, NumericalError, ShapeError, SpecError, StateError
from .model import load_checkpoint, relevance_scores
from .nn.serialization import checkpoint_exists
from .train_eval import (AblationPlan, evaluate, format_ablation_table, run_ablation, train)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("brainnet_moe")


class UsageError(Exception):
    pass


def _flag_type(default):
    if isinstance(default, bool):
        return lambda s: s.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    return str


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    """One ``--some-key`` flag per config key; ``None`` means "not given"."""
    grp = p.add_argument_group("config overrides")
    for key, default in known_keys().items():
        if key in skip or isinstance(default, (list, dict)) or default is None:
            continue
        grp.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, type=_flag_type(default),
                         default=None, metavar=type(default).__name__.upper())


def _overrides(args) -> dict:
    return {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}


def _values(args) -> tuple[dict, dict]:
    file_values = load_config_file(args.config) if getattr(args, "config", None) else {}
    over = _overrides(args)
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return file_values, over


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_cohort(path):
    if not Path(path).is_dir():
        raise FileNotFoundError(f"cohort directory {path} does not exist")
    return load_cohort(path)


def _load_model(path, cohort):
    if not checkpoint_exists(path):
        raise FileNotFoundError(f"no checkpoint at {path}")
    model = load_checkpoint(path)
    if model.config.n_regions != cohort.n_regions or model.config.n_classes != len(cohort.class_names):
        raise ShapeError(f"checkpoint expects {model.config.n_regions} regions / {model.config.n_classes} classes, "
                         f"cohort has {cohort.n_regions} / {len(cohort.class_names)}")
    return model


# -- commands ------------------------------------------------------------

def cmd_synth(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    spec_values = dict(file_values)
    flags = {"n_regions": args.regions, "n_classes": args.classes, "subjects_per_class": args.per_class,
             "effect_size": args.effect_size, "dispersion": args.dispersion, "base_scale": args.base_scale,
             "seed": args.seed}
    spec_values.update({k: v for k, v in flags.items() if v is not None})
    test_fraction = args.test_fraction if args.test_fraction is not None else spec_values.pop("test_fraction", 0.2)
    spec_values.pop("test_fraction", None)
    spec = build_synth_spec(spec_values)
    cohort = split_stratified(generate(spec), test_fraction, seed=spec.seed)
    export_cohort(cohort, args.out, spec)
    print(f"wrote {len(cohort.subjects)} subjects ({spec.n_regions} regions, {spec.n_classes} classes; "
          f"train {len(cohort.split['train'])} / test {len(cohort.split['test'])}) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    file_values, over = _values(args)
    values = resolve(file_values, over)
    cohort = _load_cohort(args.cohort)
    model_cfg = build_model_config(values, n_regions=cohort.n_regions, n_classes=len(cohort.class_names))
    train_cfg = build_train_config(values)
    from .model import BrainNetMoE

    out = Path(args.out)
    model = BrainNetMoE(model_cfg)
    result = train(model, cohort, train_cfg, out_dir=out)
    if result.history:
        print(result.final.format_text(cohort.class_names), end="")
    manifest = {
        "tool": "brainnet-moe", "version": __version__, "command": "train",
        "seed": values["seed"], "cohort": str(args.cohort),
        "config": {"model": model_cfg.to_dict(), "train": asdict(train_cfg)},
        "artifacts": {"checkpoint": str(out / "checkpoint"), "metrics_log": str(out / "metrics.jsonl")},
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }
    _write_json(out / "manifest.json", manifest)
    return EXIT_OK


def cmd_eval(args) -> int:
    cohort = _load_cohort(args.cohort)
    model = _load_model(args.checkpoint, cohort)
    report = evaluate(model, cohort, args.split)
    print(f"split: {args.split}")
    print(report.format_text(cohort.class_names), end="")
    if args.out:
        _write_json(Path(args.out), {"split": args.split, **report.to_dict()})
    return EXIT_OK


def cmd_explain(args) -> int:
    cohort = _load_cohort(args.cohort)
    model = _load_model(args.checkpoint, cohort)
    x, y = cohort.normalized(args.split)
    if len(y) == 0:
        raise StateError(f"split {args.split!r} is empty")
    report = relevance_scores(model, x, y, cohort.region_labels, cohort.class_names, top=args.top)
    out = Path(args.out)
    _write_json(out, {"split": args.split, **report.to_dict()})
    out.with_suffix(".txt").write_text(report.format_text(), encoding="utf-8")
    print(report.format_text(), end="")
    manifest_path = Path(args.checkpoint).parent / "manifest.json"
    if manifest_path.is_file():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        manifest.setdefault("artifacts", {})["relevance_report"] = str(out)
        _write_json(manifest_path, manifest)
    return EXIT_OK


def cmd_ablate(args) -> int:
    file_values, over = _values(args)
    values = resolve(file_values, over)
    cohort = _load_cohort(args.cohort)
    base = build_model_config(values, n_regions=cohort.n_regions, n_classes=len(cohort.class_names))
    train_cfg = build_train_config(values)
    try:
        experts = [int(e) for e in args.experts.split(",") if e.strip()]
    except ValueError as exc:
        raise UsageError(f"--experts must be a comma-separated list of integers: {exc}") from exc
    plan = AblationPlan.default(base, experts=experts, loss_toggles=not args.no_loss_toggles)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows_path = out / "ablation_rows.jsonl"
    rows_path.write_text("", encoding="utf-8")
    done = []

    def flush(row):
        done.append(row)
        with open(rows_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(row.to_dict(), sort_keys=True) + "\n")
        (out / "ablation_table.txt").write_text(format_ablation_table(done), encoding="utf-8")

    rows = run_ablation(plan, base, cohort, train_cfg, on_row=flush, jobs=args.jobs)
    table = format_ablation_table(rows)
    (out / "ablation_table.txt").write_text(table, encoding="utf-8")
    _write_json(out / "ablation.json", {"rows": [r.to_dict() for r in rows]})
    print(table, end="")
    return EXIT_OK


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brainnet-moe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--regions", type=int)
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", type=int)
    p.add_argument("--effect-size", type=float)
    p.add_argument("--dispersion", type=float)
    p.add_argument("--base-scale", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a cohort")
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    _add_config_flags(p, skip={"seed", "test_fraction"} | synth_only_keys())
    p.set_defaults(func=cmd_train)

    for name, helptext, func in (("eval", "print metrics for a checkpoint", cmd_eval),
                                 ("explain", "write the relevance report", cmd_explain)):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--cohort", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--split", choices=("train", "test", "all"), default="test")
        if name == "explain":
            p.add_argument("--top", type=int, default=3)
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("ablate", help="run the ablation plan")
    p.add_argument("--cohort", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--experts", default="2,4")
    p.add_argument("--no-loss-toggles", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p, skip={"seed", "test_fraction"} | synth_only_keys())
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "top", 1) < 1:
        print("error: --top must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SpecError, ShapeError, CorruptCheckpointError, StateError, UsageError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
