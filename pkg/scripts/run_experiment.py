#!/usr/bin/env python3
"""Four-optimizer training-curve experiment, paper scale or scaled-down.

Presets:
  paper   n=8192, d=9216, c=255, sigma=10, C=1; the privacy budget caps
          steps at epsilon=28; full half-power LR grid and stability-
          constant grid. Expect hours of wall time.
  scaled  n=1536, d=1792, c=63 with sigma scaled by the batch-size ratio
          (1.875) so the per-coordinate noise floor (sigma*C/L)^2 matches
          the paper-scale run; trimmed grids. Runs in minutes; this is
          the configuration the acceptance suite checks.

Outputs land in --out: one sweep directory per optimizer plus
experiment.json with the per-optimizer best runs. Render with:
  plotkit fig2 --inputs <best metrics.csv per optimizer> --out <dir>
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dpoptlab.dp_core import calibrate_steps
from dpoptlab.harness import (
    DEFAULT_GAMMA_GRID,
    DEFAULT_LR_GRID,
    OptimizerConfig,
    RunConfig,
    four_optimizer_experiment,
)
from dpoptlab.synth_data import GeneratorSpec

PRESETS = {
    "paper": dict(
        spec=GeneratorSpec(num_groups=8, scale_exponent=10, seed=0),
        sigma=10.0,
        max_steps=None,  # filled from the epsilon=28 budget
        grids={
            "dp-gd": {"lr_grid": DEFAULT_LR_GRID},
            "dp-gdm": {"lr_grid": DEFAULT_LR_GRID},
            "dp-adam": {"lr_grid": DEFAULT_LR_GRID, "gamma_grid": DEFAULT_GAMMA_GRID},
            "dp-adambc": {"lr_grid": DEFAULT_LR_GRID, "gamma_grid": DEFAULT_GAMMA_GRID},
        },
    ),
    "scaled": dict(
        spec=GeneratorSpec(num_groups=6, scale_exponent=8, seed=0),
        sigma=10.0 * 1536 / 8192,
        max_steps=800,
        grids={
            "dp-gd": {"lr_grid": (0.05, 0.1, 0.5, 1.0)},
            "dp-gdm": {"lr_grid": (0.005, 0.01, 0.05, 0.1)},
            "dp-adam": {"lr_grid": (0.002, 0.005, 0.01, 0.02), "gamma_grid": (1e-8,)},
            "dp-adambc": {"lr_grid": (0.002, 0.005, 0.01), "gamma_grid": (1e-8, 1e-6)},
        },
    ),
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--preset", choices=sorted(PRESETS), default="scaled")
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    preset = PRESETS[args.preset]
    max_steps = preset["max_steps"]
    if max_steps is None:
        max_steps = calibrate_steps(preset["sigma"], 1e-5, 28.0)
    base = RunConfig(
        optimizer=OptimizerConfig(kind="dp-gd", eta=0.1),
        dataset_spec=preset["spec"],
        clip_norm=1.0,
        noise_multiplier=preset["sigma"],
        max_steps=max_steps,
        metrics_every=10,
        seed=args.seed,
    )
    best = four_optimizer_experiment(base, args.out, grids=preset["grids"],
                                     jobs=args.jobs)
    print(json.dumps(best, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
