"""Command-line interface.

Commands:
    train      fit one model from a config, write checkpoint + report
    eval       score a checkpoint, write risk-coverage and histogram CSVs
    gradcheck  finite-difference verification of every objective family
    grid       train and evaluate the full method comparison
    make-data  materialize the configured dataset splits as CSV files

Exit codes: 0 success, 1 check/grid-cell failure, 2 configuration error,
3 numeric fault.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .calibration import fit_threshold, apply_selector
from .config import GridConfig, RunConfig, load_run_config
from .datasets import generate_mixture, load_csv_dataset, save_csv_dataset, split_dataset
from .errors import ConfigurationError, NumericFault, SelclsError
from .evaluation import curve_to_csv, histogram_to_csv, mean_sd, risk_coverage_curve, score_histogram, selective_risk
from .gradcheck import TOLERANCE, run_suite
from .nn import build_network, load_checkpoint, network_forward, save_checkpoint
from .objectives import ObjectiveConfig
from .selection import (
    ProbOutput,
    SelectionMechanism,
    mechanism_compatible,
    predict_classes,
    score_batch,
    scores_to_csv,
)
from .training import TrainConfig, train, train_method_grid
from .util import derive_seed, fmt

OUTPUT_ROOT_ENV = "SELCLS_OUTPUT_ROOT"


def resolve_outdir(cfg_dir: str, override: str | None) -> Path:
    path = Path(override) if override else Path(cfg_dir)
    if not path.is_absolute():
        path = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_splits(cfg: RunConfig, seed: int | None = None):
    """(train, val, test, n_classes) per the dataset section.

    ``seed`` overrides training.seed as the root for dataset derivation;
    the grid runner uses it to give every seed row its own draw.
    """
    root = cfg.training.seed if seed is None else seed
    if cfg.dataset.kind == "mixture":
        spec = cfg.dataset.mixture_spec(root)
        train_ds, val_ds, test_ds = generate_mixture(spec)
        return train_ds, val_ds, test_ds, spec.n_classes
    data = load_csv_dataset(cfg.dataset.path,
                            standardize=cfg.dataset.standardize, tag="csv")
    fractions = cfg.dataset.fractions
    if len(fractions) != 3:
        raise ConfigurationError(
            "csv datasets need three split fractions (train, val, test)")
    split_seed = cfg.dataset.seed if cfg.dataset.seed is not None \
        else derive_seed(root, "dataset")
    train_ds, val_ds, test_ds = split_dataset(
        data, fractions, split_seed, tags=("train", "val", "test"))
    return train_ds, val_ds, test_ds, int(data.labels.max()) + 1


def model_outputs(net, dataset) -> ProbOutput:
    return ProbOutput.from_trace(net, network_forward(net, dataset.features))


def write_manifest(outdir: Path, payload: dict) -> None:
    with open(outdir / "manifest.json", "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    outdir = resolve_outdir(cfg.output_dir, args.output)
    h = cfg.hash()
    with open(outdir / "run_config.json", "w") as f:
        json.dump({"hash": h, "config": cfg.normalized()}, f, indent=2,
                  sort_keys=True)
    train_ds, val_ds, _, n_classes = build_splits(cfg)
    net = build_network(train_ds.dim, tuple(cfg.model.hidden_dims), n_classes,
                        cfg.head, seed=cfg.training.seed,
                        numeric_mode=cfg.training.numeric_mode)
    report, _ = train(net, train_ds, val_ds, cfg.training)
    ckpt = outdir / "checkpoint.json"
    save_checkpoint(net, ckpt, config_hash=h)
    report.to_csv(outdir / "train_report.csv", header_comment=f"config={h}")
    write_manifest(outdir, {
        "config_hash": h, "status": "ok",
        "artifacts": ["run_config.json", "checkpoint.json",
                      "train_report.csv"]})
    print(f"trained {cfg.objective.kind} for {cfg.training.epochs} epochs; "
          f"checkpoint at {ckpt}")
    return 0


def evaluate_mechanisms(net, cfg: RunConfig, val_ds, test_ds, outdir: Path,
                        config_hash: str) -> None:
    test_out = model_outputs(net, test_ds)
    val_out = model_outputs(net, val_ds)
    predicted = predict_classes(test_out)
    for kind in cfg.evaluation.mechanisms:
        if not mechanism_compatible(kind, net.head):
            raise ConfigurationError(
                f"mechanism {kind!r} is incompatible with a {net.head!r} "
                "head checkpoint")
        mech = SelectionMechanism(kind)
        scores = score_batch(mech, test_out)
        if cfg.evaluation.calibration_split == "val":
            calibration_scores = score_batch(mech, val_out)
        else:
            calibration_scores = None  # self-calibration on the test scores
        points = risk_coverage_curve(scores, predicted, test_ds.labels,
                                     cfg.evaluation.coverage_grid,
                                     calibration_scores=calibration_scores)
        comment = f"config={config_hash} mechanism={kind}"
        curve_to_csv(outdir / f"curve_{kind}.csv", points,
                     seed=cfg.training.seed, header_comment=comment)
        finite = np.isfinite(scores)
        hist = score_histogram(scores[finite], predicted[finite],
                               test_ds.labels[finite],
                               cfg.evaluation.histogram_bins, mechanism=kind)
        histogram_to_csv(outdir / f"histogram_{kind}.csv", hist,
                         header_comment=f"{comment} "
                                        f"dropped={int((~finite).sum())}")
        scores_to_csv(outdir / f"scores_{kind}.csv", scores, predicted,
                      test_ds.labels, header_comment=comment)


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    net, stored_hash = load_checkpoint(args.checkpoint)
    h = cfg.hash()
    if stored_hash and stored_hash != h and not args.force:
        raise ConfigurationError(
            f"checkpoint was produced by config {stored_hash}, supplied "
            f"config hashes to {h}; pass --force to evaluate anyway")
    outdir = resolve_outdir(cfg.output_dir, args.output) / "eval"
    outdir.mkdir(parents=True, exist_ok=True)
    _, val_ds, test_ds, _ = build_splits(cfg)
    evaluate_mechanisms(net, cfg, val_ds, test_ds, outdir, h)
    print(f"wrote {len(cfg.evaluation.mechanisms)} curve/histogram pairs "
          f"to {outdir}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_suite(n_cases=args.cases, seed=args.seed,
                        corrupt=args.inject_fault)
    failed = []
    for name, err in results.items():
        ok = err < TOLERANCE
        print(f"{'PASS' if ok else 'FAIL'} {name}: max_rel_err={err:.3e} "
              f"(tolerance {TOLERANCE:g})")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}")
        return 1
    print(f"gradient check passed for all {len(results)} objective variants")
    return 0


def grid_objective(base: ObjectiveConfig, method: str, coverage) -> ObjectiveConfig:
    from dataclasses import replace

    obj = replace(base, kind=method)
    if coverage is not None:
        obj = replace(obj, c_target=float(coverage))
    obj.validate()
    return obj


def cmd_grid(args) -> int:
    from dataclasses import replace

    cfg = load_run_config(args.config)
    if cfg.grid is None:
        raise ConfigurationError("grid command needs a grid section")
    grid: GridConfig = cfg.grid
    outdir = resolve_outdir(cfg.output_dir, args.output)
    cells_dir = outdir / "cells"
    h = cfg.hash()

    data_cache = {}

    def get_data(seed):
        if seed not in data_cache:
            data_cache[seed] = build_splits(cfg, seed=seed)
        return data_cache[seed]

    def make_data(seed):
        train_ds, val_ds, test_ds, _ = get_data(seed)
        return train_ds, val_ds, test_ds

    def make_net(objective, seed):
        train_ds, _, _, n_classes = get_data(seed)
        return build_network(train_ds.dim, tuple(cfg.model.hidden_dims),
                             n_classes, objective.required_head(), seed=seed,
                             numeric_mode=cfg.training.numeric_mode)

    def make_train_cfg(method, coverage, seed):
        return replace(cfg.training, seed=seed,
                       objective=grid_objective(cfg.objective, method,
                                                coverage))

    cells = train_method_grid(grid.methods, grid.coverages, grid.seeds,
                              make_data, make_net, make_train_cfg, cells_dir)

    # evaluate every healthy cell at its coverages with every compatible
    # mechanism, then aggregate over seeds
    rows = {}
    for cell in cells:
        if cell["status"] != "ok":
            continue
        net, _ = load_checkpoint(cell["checkpoint"])
        _, val_ds, test_ds = make_data(cell["seed"])
        test_out = model_outputs(net, test_ds)
        val_out = model_outputs(net, val_ds)
        predicted = predict_classes(test_out)
        covs = grid.coverages if cell["coverage"] is None \
            else [cell["coverage"]]
        for kind in grid.mechanisms:
            if not mechanism_compatible(kind, net.head):
                continue
            mech = SelectionMechanism(kind)
            scores = score_batch(mech, test_out)
            if cfg.evaluation.calibration_split == "val":
                cal = score_batch(mech, val_out)
            else:
                cal = None
            points = risk_coverage_curve(scores, predicted, test_ds.labels,
                                         covs, calibration_scores=cal)
            for c, point in zip(covs, points):
                key = (cell["method"], kind, float(c))
                rows.setdefault(key, []).append(point.selective_risk)

    results_path = outdir / "results.csv"
    with open(results_path, "w", newline="") as f:
        f.write(f"# config={h}\n")
        w = csv.writer(f)
        w.writerow(["method", "mechanism", "coverage", "mean_risk", "sd_risk",
                    "n_seeds"])
        for (method, kind, c) in sorted(rows):
            mean, sd = mean_sd(rows[(method, kind, c)])
            w.writerow([method, kind, fmt(c), fmt(mean), fmt(sd),
                        len(rows[(method, kind, c)])])

    write_manifest(outdir, {"config_hash": h, "cells": cells,
                            "results": "results.csv"})
    n_failed = sum(1 for c in cells if c["status"] != "ok")
    print(f"grid: {len(cells)} cells trained, {n_failed} failed; results "
          f"at {results_path}")
    return 1 if n_failed else 0


def cmd_make_data(args) -> int:
    cfg = load_run_config(args.config)
    outdir = resolve_outdir(cfg.output_dir, args.output) / "data"
    outdir.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds, test_ds, _ = build_splits(cfg)
    for ds, name in ((train_ds, "train"), (val_ds, "val"), (test_ds, "test")):
        save_csv_dataset(outdir / f"{name}.csv", ds)
        print(f"{name}: n={len(ds)} fingerprint={ds.fingerprint}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selcls",
        description="selective classification: train, calibrate, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("-c", "--config", required=True,
                       help="path to the run config JSON")
        p.add_argument("-o", "--output", default=None,
                       help="output directory (overrides config; relative "
                            f"paths resolve under ${OUTPUT_ROOT_ENV})")

    p_train = sub.add_parser("train", help="train one model")
    add_common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--force", action="store_true",
                        help="evaluate despite a config hash mismatch")
    p_eval.set_defaults(fn=cmd_eval)

    p_grad = sub.add_parser("gradcheck",
                            help="finite-difference gradient verification")
    p_grad.add_argument("--cases", type=int, default=20)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    p_grad.set_defaults(fn=cmd_gradcheck)

    p_grid = sub.add_parser("grid", help="run the method-comparison grid")
    add_common(p_grid)
    p_grid.set_defaults(fn=cmd_grid)

    p_data = sub.add_parser("make-data", help="write dataset splits as CSV")
    add_common(p_data)
    p_data.set_defaults(fn=cmd_make_data)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return 3
    except (ConfigurationError, SelclsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
