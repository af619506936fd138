#!/usr/bin/env python3
"""Run the fixed ablation sweeps (representation, dictionary size, alpha,
augmentation) around one base objective and print the merged table."""

import argparse
import dataclasses

from orientgeo import harness, losses


def small_data() -> harness.DataConfig:
    return harness.DataConfig(
        categories=2, train_samples=420, val_samples=60, test_samples=80
    )


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--family", default="M_G")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="artifact directory")
    parser.add_argument(
        "--small", action="store_true", help="reduced dataset for a quick pass"
    )
    args = parser.parse_args()

    cfg = harness.ExperimentConfig(
        objective=losses.ObjectiveSpec(args.family), seed=args.seed
    )
    if args.small:
        cfg = dataclasses.replace(
            cfg,
            data=small_data(),
            optimizer=harness.OptimizerConfig(learning_rate=1e-3, epochs=2),
        )
    result = harness.ablation_suite(cfg, out_dir=args.out)
    print(result.table(), end="")
    print(f"best alpha by validation MedErr: {result.best_alpha!r}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
