"""Training loop, plateau stopping, LR/gamma sweeps, and the C/sigma suite.

A run is fully described by a RunConfig (JSON-serializable, every field
has a CLI flag). All randomness derives from config.seed through
numpy SeedSequence spawning, in fixed order:

    SeedSequence(seed).spawn(3) -> (init stream, noise stream, diagnostics stream)

so the DP noise draws never depend on whether diagnostics run. Dataset
randomness is separate: it comes from the generator spec's own seed.

Within a run, steps are strictly sequential; independent sweep runs are
embarrassingly parallel (separate output directories, separate
generators) and can be fanned out over processes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from . import linear_model as lm
from . import synth_data
from .diagnostics import (
    DEFAULT_COSINE_SAMPLES,
    build_report,
    stratified_sample_ids,
    write_report,
)
from .dp_core import (
    AccountantState,
    DpConfig,
    clip_factors,
    calibrate_steps,
    epsilon,
    privatize,
)
from .errors import AllRunsDivergedError, ConfigError
from .optimizers import make_optimizer, normalize_kind, step as opt_step
from .synth_data import GeneratorSpec

# Half-power grid extending the tuning ladder to a closed range.
DEFAULT_LR_GRID = (1e-4, 5e-4, 1e-3, 5e-3, 1e-2, 5e-2, 1e-1, 5e-1, 1.0)
# Stability-constant grid for the adaptive kinds.
DEFAULT_GAMMA_GRID = (1e-10, 1e-8, 1e-6, 1e-4)

APPENDIX_C_CONFIGS = (
    ("c1_s10", 1.0, 10.0),
    ("c10_s10", 10.0, 10.0),
    ("c1_s5", 1.0, 5.0),
)
APPENDIX_C_TARGET_EPSILON = 28.0


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str
    eta: float
    mu: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    gamma: float = 1e-8
    gamma_prime: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if not self.eta > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.eta}")


@dataclass(frozen=True)
class RunConfig:
    optimizer: OptimizerConfig
    dataset_path: str | None = None
    dataset_spec: GeneratorSpec | None = None
    clip_norm: float = 1.0
    noise_multiplier: float = 10.0
    delta: float = 1e-5
    seed: int = 0
    max_steps: int = 2000
    plateau_window: int = 200
    plateau_tol: float = 1e-4
    plateau_enabled: bool = True
    metrics_every: int = 10
    diagnostics_every: int = 0
    diagnostics_samples: int = DEFAULT_COSINE_SAMPLES
    init: str = "zeros"
    init_scale: float = 0.01
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    out_dir: str | None = None

    def __post_init__(self):
        if (self.dataset_path is None) == (self.dataset_spec is None):
            raise ConfigError("exactly one of dataset_path / dataset_spec must be set")
        if not self.lr_grid:
            raise ConfigError("lr_grid must be nonempty")
        if self.plateau_window < 1:
            raise ConfigError(f"plateau_window must be >= 1, got {self.plateau_window}")
        if not self.plateau_tol > 0:
            raise ConfigError(f"plateau_tol must be > 0, got {self.plateau_tol}")
        if self.max_steps < 0:
            raise ConfigError(f"max_steps must be >= 0, got {self.max_steps}")
        if self.metrics_every < 1:
            raise ConfigError(f"metrics_every must be >= 1, got {self.metrics_every}")
        if self.init not in ("zeros", "normal"):
            raise ConfigError(f"init must be 'zeros' or 'normal', got {self.init!r}")

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["lr_grid"] = list(self.lr_grid)
        d["gamma_grid"] = list(self.gamma_grid)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        try:
            opt = OptimizerConfig(**d.pop("optimizer"))
            spec = d.pop("dataset_spec", None)
            if spec is not None:
                spec = GeneratorSpec(**spec)
            for key in ("lr_grid", "gamma_grid"):
                if key in d and d[key] is not None:
                    d[key] = tuple(d[key])
            return cls(optimizer=opt, dataset_spec=spec, **d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad run config: {exc}") from exc


def config_hash(config: RunConfig) -> str:
    """Hash of the scientific content of a config (output paths excluded)."""
    d = config.to_json_dict()
    d.pop("out_dir", None)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class MetricsRow:
    step: int
    epsilon: float
    loss_overall: float
    acc_overall: float
    loss_groups: tuple[float, ...]
    acc_groups: tuple[float, ...]
    clipped_frac: float
    wall_ms: float


def csv_header(num_groups: int) -> list[str]:
    return (
        ["step", "epsilon", "loss_overall", "acc_overall"]
        + [f"loss_g{g}" for g in range(num_groups)]
        + [f"acc_g{g}" for g in range(num_groups)]
        + ["clipped_frac", "wall_ms"]
    )


def write_metrics_csv(rows: list[MetricsRow], num_groups: int, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(num_groups))
        for r in rows:
            writer.writerow(
                [r.step, repr(r.epsilon), repr(r.loss_overall), repr(r.acc_overall)]
                + [repr(v) for v in r.loss_groups]
                + [repr(v) for v in r.acc_groups]
                + [repr(r.clipped_frac), repr(r.wall_ms)]
            )


@dataclass
class RunResult:
    config: RunConfig
    rows: list[MetricsRow]
    final_weights: np.ndarray
    steps_taken: int
    diverged: bool
    diverged_at: int | None
    final_epsilon: float
    stop_reason: str
    wall_seconds: float
    num_groups: int

    @property
    def final_loss(self) -> float:
        return self.rows[-1].loss_overall

    def summary_dict(self) -> dict:
        last = self.rows[-1]
        return {
            "config": self.config.to_json_dict(),
            "config_hash": config_hash(self.config),
            "steps_taken": self.steps_taken,
            "stop_reason": self.stop_reason,
            "diverged": self.diverged,
            "diverged_at": self.diverged_at,
            "final_epsilon": self.final_epsilon,
            "final_loss_overall": last.loss_overall,
            "final_acc_overall": last.acc_overall,
            "final_loss_groups": list(last.loss_groups),
            "final_acc_groups": list(last.acc_groups),
            "final_clipped_frac": last.clipped_frac,
            "wall_seconds": self.wall_seconds,
        }


def resolve_dataset(config: RunConfig):
    if config.dataset_path is not None:
        return synth_data.load(config.dataset_path)
    return synth_data.generate(config.dataset_spec)


def train(config: RunConfig, data=None) -> RunResult:
    """Run one training loop to max_steps, plateau, or divergence.

    data, if given, is a (dataset, stats, groups) triple already in
    memory; otherwise it is loaded/generated from the config.
    """
    t_start = time.perf_counter()
    dataset, stats, _groups = data if data is not None else resolve_dataset(config)
    n = dataset.n
    G = stats.num_groups

    cfg = DpConfig(
        clip_norm=config.clip_norm,
        noise_multiplier=config.noise_multiplier,
        sample_size=n,  # full batch: L = n
        delta=config.delta,
    )
    acct = AccountantState(noise_multiplier=config.noise_multiplier)

    init_ss, noise_ss, diag_ss = np.random.SeedSequence(config.seed).spawn(3)
    if config.init == "zeros":
        W = np.zeros((dataset.c, dataset.d))
    else:
        W = config.init_scale * np.random.default_rng(init_ss).standard_normal(
            (dataset.c, dataset.d)
        )
    noise_rng = np.random.default_rng(noise_ss)

    opt = make_optimizer(
        config.optimizer.kind, W.shape, config.optimizer.eta,
        mu=config.optimizer.mu, beta1=config.optimizer.beta1,
        beta2=config.optimizer.beta2, gamma=config.optimizer.gamma,
        gamma_prime=config.optimizer.gamma_prime,
    )

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    diag_ids = None
    if config.diagnostics_every > 0:
        diag_rng = np.random.default_rng(diag_ss)
        diag_ids = stratified_sample_ids(
            dataset.labels, stats, min(config.diagnostics_samples, n), diag_rng
        )
        if out_dir:  # a re-run must not append to a stale record stream
            (out_dir / "diagnostics.jsonl").unlink(missing_ok=True)

    rows: list[MetricsRow] = []

    def record(step_idx: int, Z: np.ndarray, factors: lm.GradFactors, losses: np.ndarray):
        eps = epsilon(acct, step_idx, config.delta).epsilon
        acc_overall, acc_groups = lm.accuracy(Z, dataset.labels, stats)
        loss_groups = lm.group_means(losses, dataset.labels, stats)
        frac = float(np.mean(factors.row_norms > cfg.clip_norm))
        rows.append(MetricsRow(
            step=step_idx,
            epsilon=eps,
            loss_overall=float(losses.mean()),
            acc_overall=acc_overall,
            loss_groups=tuple(float(v) for v in loss_groups),
            acc_groups=tuple(float(v) for v in acc_groups),
            clipped_frac=frac,
            wall_ms=(time.perf_counter() - t_start) * 1000.0,
        ))

    def diagnose(step_idx: int, Z: np.ndarray, factors: lm.GradFactors):
        if diag_ids is None or out_dir is None:
            return
        report = build_report(step_idx, Z, factors, diag_ids, cfg, state=opt)
        write_report(report, out_dir)

    Z = lm.logits(W, dataset)
    losses = lm.per_sample_losses(Z, dataset.labels)
    factors = lm.grad_factors(Z, dataset)
    record(0, Z, factors, losses)
    diagnose(0, Z, factors)

    best_loss = float(losses.mean())
    last_improvement = 0
    diverged = False
    diverged_at = None
    stop_reason = "max_steps"
    steps_taken = 0

    for t in range(1, config.max_steps + 1):
        # overflow here is a legal run outcome (marked diverged below),
        # not a warning-worthy event
        with np.errstate(over="ignore", invalid="ignore"):
            clipped, _clip_stats = clip_factors(factors, cfg.clip_norm)
            gtilde = privatize(clipped, cfg, noise_rng, step=t)
            W = opt_step(opt, W, gtilde.matrix, cfg)
            acct.steps = t
            steps_taken = t

            Z = lm.logits(W, dataset)
            losses = lm.per_sample_losses(Z, dataset.labels)
            factors = lm.grad_factors(Z, dataset)
            loss_t = float(losses.mean())

        if not math.isfinite(loss_t):
            diverged = True
            diverged_at = t
            stop_reason = "diverged"
            break

        is_last = t == config.max_steps
        if loss_t < best_loss * (1.0 - config.plateau_tol):
            best_loss = loss_t
            last_improvement = t
        plateaued = (
            config.plateau_enabled and t - last_improvement >= config.plateau_window
        )
        if plateaued:
            stop_reason = "plateau"

        if t % config.metrics_every == 0 or is_last or plateaued:
            record(t, Z, factors, losses)
        if config.diagnostics_every > 0 and (t % config.diagnostics_every == 0
                                              or is_last or plateaued):
            diagnose(t, Z, factors)
        if plateaued:
            break

    result = RunResult(
        config=config,
        rows=rows,
        final_weights=W,
        steps_taken=steps_taken,
        diverged=diverged,
        diverged_at=diverged_at,
        final_epsilon=epsilon(acct, steps_taken, config.delta).epsilon,
        stop_reason=stop_reason,
        wall_seconds=time.perf_counter() - t_start,
        num_groups=G,
    )

    if out_dir:
        write_metrics_csv(rows, G, out_dir / "metrics.csv")
        np.save(out_dir / "model.npy", W)
        with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(result.summary_dict(), fh, indent=2, sort_keys=True)
    return result


def _grid_points(config: RunConfig) -> list[tuple[float, float | None]]:
    """(eta, gamma-or-gamma_prime) combinations for the config's kind."""
    kind = config.optimizer.kind
    if kind in ("dp-adam", "dp-adambc"):
        return [(eta, g) for eta in config.lr_grid for g in config.gamma_grid]
    return [(eta, None) for eta in config.lr_grid]


def _run_id(eta: float, gamma: float | None) -> str:
    return f"eta{eta:g}" + (f"_gamma{gamma:g}" if gamma is not None else "")


def _apply_point(config: RunConfig, eta: float, gamma: float | None,
                 out_dir: Path | None) -> RunConfig:
    opt = replace(config.optimizer, eta=eta)
    if gamma is not None:
        key = "gamma" if config.optimizer.kind == "dp-adam" else "gamma_prime"
        opt = replace(opt, **{key: gamma})
    return replace(
        config, optimizer=opt,
        out_dir=str(out_dir / _run_id(eta, gamma)) if out_dir else None,
    )


def _train_from_json(config_json: dict) -> dict:
    """Process-pool entry point: run one grid point, return its summary."""
    result = train(RunConfig.from_json_dict(config_json))
    return result.summary_dict()


@dataclass
class SweepResult:
    runs: list[dict]
    best_run_id: str
    best_result: RunResult | None
    manifest: dict


def sweep(base: RunConfig, out_dir=None, jobs: int = 1) -> SweepResult:
    """Run the LR (x gamma) grid and keep the lowest final training loss.

    Diverged runs are legal outcomes and simply excluded from selection;
    ties break toward the smaller learning rate, then smaller gamma. If
    every run diverged the sweep itself fails.
    """
    out_path = Path(out_dir) if out_dir else None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
    points = _grid_points(base)
    configs = [_apply_point(base, eta, gamma, out_path) for eta, gamma in points]

    summaries: list[dict] = []
    best_key = None
    best_result: RunResult | None = None
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(
                _train_from_json, [c.to_json_dict() for c in configs]
            ))
    else:
        data = resolve_dataset(base)
        for (eta, gamma), cfg in zip(points, configs):
            result = train(cfg, data=data)
            summaries.append(result.summary_dict())
            # Keep only the best result object in memory; full-scale
            # sweeps hold 90 weight matrices otherwise.
            if not result.diverged:
                key = (result.final_loss, eta, gamma if gamma is not None else 0.0)
                if best_key is None or key < best_key:
                    best_key = key
                    best_result = result
                else:
                    del result

    runs = []
    for (eta, gamma), cfg, summary in zip(points, configs, summaries):
        runs.append({
            "run_id": _run_id(eta, gamma),
            "eta": eta,
            "gamma": gamma,
            "config_hash": summary["config_hash"],
            "metrics_path": (str(Path(cfg.out_dir) / "metrics.csv")
                             if cfg.out_dir else None),
            "final_loss": summary["final_loss_overall"],
            "final_epsilon": summary["final_epsilon"],
            "final_loss_groups": summary["final_loss_groups"],
            "final_acc_groups": summary["final_acc_groups"],
            "steps_taken": summary["steps_taken"],
            "diverged": summary["diverged"],
        })

    alive = [i for i, r in enumerate(runs) if not r["diverged"]]
    if not alive:
        raise AllRunsDivergedError(
            f"kind={base.optimizer.kind} lr_grid={list(base.lr_grid)} "
            f"gamma_grid={list(base.gamma_grid)}"
        )
    best_i = min(alive, key=lambda i: (runs[i]["final_loss"], points[i][0],
                                       points[i][1] if points[i][1] is not None else 0.0))
    manifest = {
        "optimizer": base.optimizer.kind,
        "lr_grid": list(base.lr_grid),
        "gamma_grid": list(base.gamma_grid) if base.optimizer.kind in ("dp-adam", "dp-adambc") else None,
        "base_config": base.to_json_dict(),
        "runs": runs,
        "best": runs[best_i]["run_id"],
    }
    if out_path:
        with open(out_path / "sweep_manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    return SweepResult(
        runs=runs,
        best_run_id=runs[best_i]["run_id"],
        best_result=best_result,
        manifest=manifest,
    )


def four_optimizer_experiment(base: RunConfig, out_dir,
                              grids: dict[str, dict] | None = None,
                              jobs: int = 1) -> dict:
    """Tune and run all four optimizers on one dataset configuration.

    grids maps an optimizer kind to {"lr_grid": ..., "gamma_grid": ...}
    overrides; kinds without an entry use the base config's grids. The
    per-kind best runs (lowest final overall training loss) land in
    experiment.json.
    """
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    grids = grids or {}
    best_by_kind: dict[str, dict] = {}
    for kind in ("dp-gd", "dp-gdm", "dp-adam", "dp-adambc"):
        overrides = grids.get(kind, {})
        cfg = replace(
            base,
            optimizer=replace(base.optimizer, kind=kind),
            lr_grid=tuple(overrides.get("lr_grid", base.lr_grid)),
            gamma_grid=tuple(overrides.get("gamma_grid", base.gamma_grid)),
            out_dir=None,
        )
        result = sweep(cfg, out_dir=out_path / kind, jobs=jobs)
        best_by_kind[kind] = next(
            r for r in result.runs if r["run_id"] == result.best_run_id
        )
    with open(out_path / "experiment.json", "w", encoding="utf-8") as fh:
        json.dump({"base_config": base.to_json_dict(), "best": best_by_kind},
                  fh, indent=2, sort_keys=True)
    return best_by_kind


def appendix_c_suite(base: RunConfig, out_dir, jobs: int = 1,
                     target_epsilon: float = APPENDIX_C_TARGET_EPSILON) -> dict:
    """The three (C, sigma) configurations at a matched privacy budget.

    Step counts come from the accountant so every configuration lands on
    the same final epsilon; plateau stopping is disabled so the budget
    is actually spent.
    """
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    comparison = {"target_epsilon": target_epsilon, "configs": {}}
    for name, clip_norm, sigma in APPENDIX_C_CONFIGS:
        T = calibrate_steps(sigma, base.delta, target_epsilon)
        cfg = replace(
            base,
            clip_norm=clip_norm,
            noise_multiplier=sigma,
            max_steps=T,
            plateau_enabled=False,
            out_dir=None,
        )
        result = sweep(cfg, out_dir=out_path / name, jobs=jobs)
        best = next(r for r in result.runs if r["run_id"] == result.best_run_id)
        comparison["configs"][name] = {
            "clip_norm": clip_norm,
            "noise_multiplier": sigma,
            "calibrated_steps": T,
            "best_run": best,
        }
    with open(out_path / "comparison.json", "w", encoding="utf-8") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
    return comparison
