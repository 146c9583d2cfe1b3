"""Command line interface.

Subcommands: gen-data, train, sweep, appendix-c, diagnose. A run is
configured by an optional JSON document (--config) whose fields are all
overridable by flags; the resolved configuration lands in the output
summary/manifest.

Exit codes: 0 success, 2 configuration error, 3 every sweep run
diverged, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, synth_data
from .diagnostics import DEFAULT_COSINE_SAMPLES, build_report, stratified_sample_ids, write_report
from .dp_core import DpConfig
from .errors import AllRunsDivergedError, ConfigError, DatasetIOError, DpOptLabError
from .harness import OptimizerConfig, RunConfig
from .linear_model import grad_factors, logits
from .synth_data import GeneratorSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ALL_DIVERGED = 3
EXIT_IO = 4


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run config; flags override its fields")
    p.add_argument("--data", help="dataset file produced by gen-data")
    p.add_argument("--groups", type=int, help="generator: number of frequency groups G")
    p.add_argument("--scale", type=int, help="generator: scale exponent S")
    p.add_argument("--min-class-size", type=int, help="generator: minimum class size")
    p.add_argument("--data-seed", type=int, help="generator: dataset seed")
    p.add_argument("--optimizer", help="dp-gd | dp-gdm | dp-adam | dp-adambc")
    p.add_argument("--eta", type=float, help="learning rate")
    p.add_argument("--mu", type=float, help="momentum (dp-gdm)")
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--gamma", type=float, help="dp-adam stability constant")
    p.add_argument("--gamma-prime", type=float, help="dp-adambc denominator floor")
    p.add_argument("--clip-norm", type=float, help="l2 clipping norm C")
    p.add_argument("--sigma", type=float, help="noise multiplier")
    p.add_argument("--delta", type=float, help="privacy failure probability")
    p.add_argument("--seed", type=int, help="run seed (init/noise/diagnostics streams)")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--plateau-window", type=int)
    p.add_argument("--plateau-tol", type=float)
    p.add_argument("--no-plateau", action="store_true", help="disable plateau stopping")
    p.add_argument("--metrics-every", type=int)
    p.add_argument("--diagnostics-every", type=int)
    p.add_argument("--init", choices=["zeros", "normal"])
    p.add_argument("--init-scale", type=float)
    p.add_argument("--lr-grid", type=_float_list, help="comma-separated learning rates")
    p.add_argument("--gamma-grid", type=_float_list, help="comma-separated stability constants")
    p.add_argument("--out", help="output directory")


def _resolve_config(args: argparse.Namespace, require_out: bool = False) -> RunConfig:
    doc: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)

    opt = dict(doc.get("optimizer") or {})
    for flag, key in [("optimizer", "kind"), ("eta", "eta"), ("mu", "mu"),
                      ("beta1", "beta1"), ("beta2", "beta2"), ("gamma", "gamma"),
                      ("gamma_prime", "gamma_prime")]:
        v = getattr(args, flag)
        if v is not None:
            opt[key] = v
    if "kind" not in opt:
        raise ConfigError("an optimizer kind is required (--optimizer or config file)")
    opt.setdefault("eta", 0.05)

    spec = dict(doc.get("dataset_spec") or {})
    for flag, key in [("groups", "num_groups"), ("scale", "scale_exponent"),
                      ("min_class_size", "min_class_size"), ("data_seed", "seed")]:
        v = getattr(args, flag)
        if v is not None:
            spec[key] = v

    top = {k: v for k, v in doc.items() if k not in ("optimizer", "dataset_spec")}
    for flag, key in [("data", "dataset_path"), ("clip_norm", "clip_norm"),
                      ("sigma", "noise_multiplier"), ("delta", "delta"),
                      ("seed", "seed"), ("max_steps", "max_steps"),
                      ("plateau_window", "plateau_window"), ("plateau_tol", "plateau_tol"),
                      ("metrics_every", "metrics_every"),
                      ("diagnostics_every", "diagnostics_every"),
                      ("init", "init"), ("init_scale", "init_scale"),
                      ("lr_grid", "lr_grid"), ("gamma_grid", "gamma_grid"),
                      ("out", "out_dir")]:
        v = getattr(args, flag)
        if v is not None:
            top[key] = v
    if args.no_plateau:
        top["plateau_enabled"] = False

    if top.get("dataset_path"):
        top.pop("dataset_spec", None)
        spec = {}
    top["optimizer"] = opt
    if spec:
        top["dataset_spec"] = spec
        top.pop("dataset_path", None)
    if require_out and not top.get("out_dir"):
        raise ConfigError("--out is required for this subcommand")
    return RunConfig.from_json_dict(top)


def cmd_gen_data(args) -> int:
    spec = GeneratorSpec(
        num_groups=args.groups,
        scale_exponent=args.scale,
        min_class_size=args.min_class_size,
        seed=args.seed,
    )
    kwargs = {}
    if args.budget_bytes is not None:
        kwargs["memory_budget_bytes"] = args.budget_bytes
    dataset, stats, groups = synth_data.generate(spec, **kwargs)
    synth_data.save(dataset, stats, groups, args.out, spec=spec)
    table = ", ".join(f"{g.num_classes}x{g.samples_per_class}" for g in groups)
    print(f"wrote {args.out}: n={dataset.n} d={dataset.d} c={dataset.c} groups [{table}]")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _resolve_config(args)
    result = harness.train(config)
    s = result.summary_dict()
    if result.diverged:
        print(f"DIVERGED at step {result.diverged_at}", file=sys.stderr)
    print(json.dumps({k: s[k] for k in (
        "steps_taken", "stop_reason", "diverged", "final_epsilon",
        "final_loss_overall", "final_acc_overall")}, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _resolve_config(args, require_out=True)
    result = harness.sweep(config, out_dir=config.out_dir, jobs=args.jobs)
    best = next(r for r in result.runs if r["run_id"] == result.best_run_id)
    print(json.dumps({"best": best}, indent=2))
    return EXIT_OK


def cmd_appendix_c(args) -> int:
    config = _resolve_config(args, require_out=True)
    comparison = harness.appendix_c_suite(
        config, config.out_dir, jobs=args.jobs, target_epsilon=args.target_epsilon
    )
    print(json.dumps(comparison, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    dataset, stats, _groups = synth_data.load(args.data)
    if args.weights:
        W = np.load(args.weights)
    else:
        W = np.zeros((dataset.c, dataset.d))
    Z = logits(W, dataset)
    factors = grad_factors(Z, dataset)
    cfg = DpConfig(clip_norm=args.clip_norm, noise_multiplier=args.sigma,
                   sample_size=dataset.n, delta=args.delta)
    rng = np.random.default_rng(args.seed)
    ids = stratified_sample_ids(dataset.labels, stats,
                                min(args.samples, dataset.n), rng)
    report = build_report(args.step, Z, factors, ids, cfg)
    report = write_report(report, args.out)
    print(json.dumps({
        "within_class_mean": report.cosine.within_class_mean,
        "cross_class_mean": report.cosine.cross_class_mean,
        "p_hat": report.p_hat,
        "matrix_path": str(Path(args.out) / report.matrix_path),
    }, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpoptlab",
        description="DP optimizers on heavy-tail class-imbalanced softmax regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and save a synthetic dataset")
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--scale", type=int, required=True)
    p.add_argument("--min-class-size", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget-bytes", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run one training configuration")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="LR (x gamma) grid search, keep best run")
    _add_run_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("appendix-c", help="the three (C, sigma) configs at equal epsilon")
    _add_run_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--target-epsilon", type=float, default=harness.APPENDIX_C_TARGET_EPSILON)
    p.set_defaults(func=cmd_appendix_c)

    p = sub.add_parser("diagnose", help="cosine/block-norm probe of a dataset + weights")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", help="model .npy; zeros if omitted")
    p.add_argument("--samples", type=int, default=DEFAULT_COSINE_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=int, default=0, help="step label for the report")
    p.add_argument("--sigma", type=float, default=10.0)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AllRunsDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALL_DIVERGED
    except (DatasetIOError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DpOptLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
