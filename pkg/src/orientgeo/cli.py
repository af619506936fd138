"""Command-line entry points: experiment runs, ablations, record-file
evaluation, gradient checking, and jitter-manifest generation."""

import argparse
import json
import math
import sys

import numpy as np

from . import gradcheck, harness, jitter, losses, metrics, so3

EVAL_METRICS = ("med", "acc", "arp", "avp")


def _cmd_run(args) -> int:
    cfg = harness.load_config(args.config) if args.config else harness.apply_seed_override(
        harness.ExperimentConfig()
    )
    trials = args.trials if args.trials is not None else 1
    if trials > 1:
        summary = harness.run_trials(cfg, out_dir=args.out, trials=trials)
        for metric in sorted(summary.metric_means):
            print(
                f"{metric} mean {summary.metric_means[metric]!r} "
                f"std {summary.metric_stds[metric]!r}"
            )
    else:
        result = harness.run_experiment(cfg, out_dir=args.out)
        for metric in result.report.metrics:
            print(f"{metric} {result.report.mean[metric]!r}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = harness.load_config(args.config) if args.config else harness.apply_seed_override(
        harness.ExperimentConfig()
    )
    result = harness.ablation_suite(cfg, out_dir=args.out)
    print(result.table(), end="")
    print(f"best alpha by validation MedErr: {result.best_alpha!r}")
    return 0


def _cmd_eval(args) -> int:
    detections, ground_truths = metrics.read_records(args.records)
    wanted = [m.strip() for m in args.metric.split(",") if m.strip()]
    for m in wanted:
        if m not in EVAL_METRICS:
            print(f"unknown metric {m!r}; choose from {','.join(EVAL_METRICS)}",
                  file=sys.stderr)
            return 2
    for m in wanted:
        if m == "med":
            _, mean = metrics.med_err(metrics.paired_records(detections, ground_truths))
            print(f"med {mean!r}")
        elif m == "acc":
            _, mean = metrics.acc_pi6(metrics.paired_records(detections, ground_truths))
            print(f"acc {mean!r}")
        elif m == "arp":
            print(f"arp {metrics.arp(detections, ground_truths)!r}")
        else:
            print(f"avp {metrics.avp(detections, ground_truths, args.bins)!r}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.family == "all":
        specs = gradcheck.default_specs()
    else:
        if args.family not in losses.FAMILIES:
            print(f"unknown family {args.family!r}", file=sys.stderr)
            return 2
        specs = [losses.ObjectiveSpec(args.family)]
    failed = False
    for spec in specs:
        report = gradcheck.check_family(spec, instances=args.trials)
        status = "ok" if report.passed else "FAIL"
        print(
            f"{spec.family}/{spec.representation} {status} "
            f"max_rel_error {report.max_rel_error:.3e}"
        )
        failed = failed or not report.passed
    return 1 if failed else 0


def _cmd_jitter(args) -> int:
    spec_doc = {}
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec_doc = json.load(fh)
    jspec = jitter.JitterSpec(
        d_az=tuple(spec_doc.get("d_az", jitter.JitterSpec().d_az)),
        d_el=tuple(spec_doc.get("d_el", jitter.JitterSpec().d_el)),
        d_ct=tuple(spec_doc.get("d_ct", jitter.JitterSpec().d_ct)),
        flip=bool(spec_doc.get("flip", True)),
    )
    euler_deg = spec_doc.get("euler_deg", (5.0, 88.0, 2.0))
    euler = so3.EulerZXZ(*(math.radians(float(a)) for a in euler_deg))
    if args.shape == "sphere":
        points = jitter.sphere_points()
    else:
        points = jitter.cuboid_points()
    camera = jitter.default_camera()
    samples = jitter.jitter_sample((points, camera, euler), jspec)
    jitter.write_manifest(args.manifest, [(0, item) for item in samples])
    print(f"wrote {len(samples)} jittered cells to {args.manifest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orient-geo",
        description="orientation-estimation experiments on synthetic data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment (or several trials)")
    p.add_argument("--config", help="JSON experiment config (defaults used if omitted)")
    p.add_argument("--out", help="artifact directory")
    p.add_argument("--trials", type=int, help="repeat on consecutive seeds")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("ablate", help="run the fixed ablation sweeps")
    p.add_argument("--config", help="JSON base config (defaults used if omitted)")
    p.add_argument("--out", help="artifact directory")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("eval", help="recompute metrics from a records file")
    p.add_argument("--records", required=True)
    p.add_argument("--metric", default="med", help=f"comma list of {','.join(EVAL_METRICS)}")
    p.add_argument("--bins", type=int, default=8, help="azimuth bins for avp")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("--family", default="all")
    p.add_argument("--trials", type=int, default=100, help="instances per family")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("jitter", help="write a jittered-homography manifest")
    p.add_argument("--manifest", required=True, help="output manifest path")
    p.add_argument("--spec", help="JSON with d_az/d_el/d_ct/flip/euler_deg")
    p.add_argument("--shape", choices=("cuboid", "sphere"), default="cuboid")
    p.set_defaults(func=_cmd_jitter)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
