"""Experiment command line: run, gridsearch, make-moons, export-boundary,
selfcheck.

Output directory layout (stable):
    <out>/config.cfg                 resolved configuration
    <out>/trial_<seed>/metrics.csv   iteration,loss,reg,val_err,test_err
    <out>/trial_<seed>/snapshot.rat  selected parameters (W1,b1,W2,b2,W3,b3)
    <out>/trial_<seed>/boundary.csv  decision boundary (2-D models only)
    <out>/summary.txt                key = value summary over trials

All randomness flows from the configured seed list; reruns with the same
configuration produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import (
    ConfigError,
    expand_sweep,
    parse_config,
    serialize_config,
    set_config_value,
)
from .data import make_moons, moons_to_csv
from .models import MlpModel
from .selfcheck import run_selfcheck
from .tensor_io import read_tensors, write_tensors
from .training import TrainingDiverged, export_boundary, run_trials, trial_summary

BOUNDARY_DEFAULT = "-1.5:2.5:-1.0:1.5"


def _apply_overrides(config, args):
    if getattr(args, "seed_list", None):
        seeds = tuple(int(s) for s in args.seed_list.split(","))
        config = dataclasses.replace(config, seeds=seeds)
    if getattr(args, "trials", None):
        base = config.seeds[0]
        config = dataclasses.replace(
            config, seeds=tuple(base + k for k in range(args.trials))
        )
    if getattr(args, "out", None):
        config = dataclasses.replace(config, out_dir=args.out)
    return config


def _prepare_out_dir(path, force):
    if os.path.isdir(path) and os.listdir(path):
        if not force:
            raise SystemExit(
                f"error: output directory '{path}' exists and is not empty "
                "(use --force to overwrite)"
            )
    os.makedirs(path, exist_ok=True)


def _write_metrics_csv(path, metrics):
    with open(path, "w") as fh:
        fh.write("iteration,loss,reg,val_err,test_err\n")
        for p in metrics.points:
            fh.write(
                f"{p.iteration},{p.train_loss!r},{p.reg_value!r},"
                f"{p.val_error!r},{p.test_error!r}\n"
            )


def _write_boundary_csv(path, rows):
    with open(path, "w") as fh:
        fh.write("x1,x2,class,confidence\n")
        for x1, x2, cls, conf in rows:
            fh.write(f"{float(x1)!r},{float(x2)!r},{int(cls)},{float(conf)!r}\n")


def _parse_bounds(text):
    parts = text.split(":")
    if len(parts) != 4:
        raise SystemExit("error: --bounds expects x_min:x_max:y_min:y_max")
    return tuple(float(p) for p in parts)


def _emit_trial_outputs(config, out_dir, runs, bounds, resolution):
    for metrics in runs:
        trial_dir = os.path.join(out_dir, f"trial_{metrics.seed}")
        os.makedirs(trial_dir, exist_ok=True)
        _write_metrics_csv(os.path.join(trial_dir, "metrics.csv"), metrics)
        write_tensors(os.path.join(trial_dir, "snapshot.rat"),
                      metrics.selected_params)
        model = MlpModel.from_arrays(metrics.selected_params)
        if model.in_dim == 2:
            rows = export_boundary(model, bounds, resolution)
            _write_boundary_csv(os.path.join(trial_dir, "boundary.csv"), rows)


def _write_summary(path, lines):
    with open(path, "w") as fh:
        for key, value in lines:
            fh.write(f"{key} = {value}\n")


def _print_summary_table(lines):
    width = max(len(k) for k, _ in lines)
    for key, value in lines:
        print(f"{key:<{width}}  {value}")


def cmd_run(args):
    config = _apply_overrides(parse_config(args.config), args)
    _prepare_out_dir(config.out_dir, args.force)
    with open(os.path.join(config.out_dir, "config.cfg"), "w") as fh:
        fh.write(serialize_config(config))
    try:
        runs = run_trials(config)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    bounds = _parse_bounds(args.bounds)
    _emit_trial_outputs(config, config.out_dir, runs, bounds, args.resolution)
    lines = trial_summary(config, runs)
    _write_summary(os.path.join(config.out_dir, "summary.txt"), lines)
    _print_summary_table(lines)
    return 0


def cmd_gridsearch(args):
    config = _apply_overrides(parse_config(args.config), args)
    values = expand_sweep(args.values)
    _prepare_out_dir(config.out_dir, args.force)
    results = []
    for index, value in enumerate(values):
        sub = set_config_value(config, args.param, value)
        sub = dataclasses.replace(
            sub, out_dir=os.path.join(config.out_dir, f"value_{index}")
        )
        _prepare_out_dir(sub.out_dir, True)
        with open(os.path.join(sub.out_dir, "config.cfg"), "w") as fh:
            fh.write(serialize_config(sub))
        try:
            runs = run_trials(sub)
        except TrainingDiverged as exc:
            print(f"error at {args.param}={value}: {exc}", file=sys.stderr)
            return 1
        errors = np.array([r.selected_test_error for r in runs])
        _write_summary(os.path.join(sub.out_dir, "summary.txt"),
                       trial_summary(sub, runs))
        results.append((value, float(errors.mean()), float(errors.std())))
    best_index = int(np.argmin([mean for _, mean, _ in results]))
    csv_path = os.path.join(config.out_dir, "gridsearch.csv")
    with open(csv_path, "w") as fh:
        fh.write(f"{args.param},mean_test_error,std_test_error,is_best\n")
        for i, (value, mean, std) in enumerate(results):
            fh.write(f"{value!r},{mean!r},{std!r},{int(i == best_index)}\n")
    for i, (value, mean, std) in enumerate(results):
        marker = " *" if i == best_index else ""
        print(f"{args.param} = {value!r}: {mean:.4f} +- {std:.4f}{marker}")
    return 0


def cmd_make_moons(args):
    config = _apply_overrides(parse_config(args.config), args)
    d = config.dataset
    if d.kind != "moons":
        print("error: make-moons needs a moons dataset config", file=sys.stderr)
        return 1
    split = make_moons(
        d.n_labeled_per_class, d.n_unlabeled_per_class, geometry=d.geometry(),
        seed=config.seeds[0], n_validation_per_class=d.n_validation_per_class,
        n_test_per_class=d.n_test_per_class,
    )
    moons_to_csv(split, args.out_file)
    print(f"wrote {args.out_file}")
    return 0


def cmd_export_boundary(args):
    arrays = read_tensors(args.snapshot)
    model = MlpModel.from_arrays(arrays)
    if model.in_dim != 2:
        print("error: snapshot is not a 2-D input model", file=sys.stderr)
        return 1
    rows = export_boundary(model, _parse_bounds(args.bounds), args.resolution)
    _write_boundary_csv(args.out_file, rows)
    print(f"wrote {args.out_file}")
    return 0


def cmd_selfcheck(_args):
    failures = run_selfcheck()
    return 1 if failures else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ratlab",
        description="Semi-supervised training with adversarial transformations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed-list", help="comma-separated seeds (overrides config)")
        p.add_argument("--trials", type=int,
                       help="run N trials seeded base..base+N-1")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty output directory")

    p = sub.add_parser("run", help="run the configured trial battery")
    add_common(p)
    p.add_argument("--bounds", default=BOUNDARY_DEFAULT,
                   help="boundary export bounds x_min:x_max:y_min:y_max")
    p.add_argument("--resolution", type=int, default=100)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gridsearch", help="sweep one numeric config value")
    add_common(p)
    p.add_argument("--param", required=True,
                   help="dotted path, e.g. transform.1.epsilon")
    p.add_argument("--values", required=True,
                   help="comma list or start:stop:step (inclusive)")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("make-moons", help="export the configured moons dataset")
    add_common(p)
    p.add_argument("--out-file", required=True, help="CSV destination")
    p.set_defaults(func=cmd_make_moons)

    p = sub.add_parser("export-boundary",
                       help="decision boundary from a parameter snapshot")
    p.add_argument("--snapshot", required=True, help="snapshot.rat path")
    p.add_argument("--out-file", required=True, help="CSV destination")
    p.add_argument("--bounds", default=BOUNDARY_DEFAULT)
    p.add_argument("--resolution", type=int, default=100)
    p.set_defaults(func=cmd_export_boundary)

    p = sub.add_parser("selfcheck", help="run the built-in invariant suites")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
