"""The ``dasloc`` command: gen / train / select / eval / report.

Every command is deterministic given its config and seeds; rerunning with
identical inputs reproduces output files byte for byte.  Human diagnostics go
to stderr, result rows and digests to stdout, machine-readable data only to
files.  No environment variables are consulted.
"""

from __future__ import annotations

import argparse
import logging
import secrets
import sys
from pathlib import Path

import numpy as np

from . import evaluation, io, selection, training
from .channels import generate_dataset, generate_scenario
from .config import ExperimentConfig, override_seeds, read_config
from .errors import DaslocError, EmptyInput, WrongFeatureMode
from .selection import TemperatureSchedule

logger = logging.getLogger(__name__)


def _load_config(args) -> ExperimentConfig:
    cfg = read_config(args.config)
    if getattr(args, "deterministic", "on") == "off":
        entropy_seed = secrets.randbits(32)
        print(f"deterministic mode off: drew seed {entropy_seed}", file=sys.stderr)
        cfg = override_seeds(cfg, entropy_seed)
    if getattr(args, "seed", None) is not None:
        cfg = override_seeds(cfg, args.seed)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    scenario = generate_scenario(cfg.scenario, cfg.scenario_seed)
    dataset = generate_dataset(scenario, cfg.dataset_r, cfg.feature_mode,
                               cfg.dataset_seed, workers=cfg.dataset_workers)
    dataset_path = out / "dataset.dasl"
    meta_path = io.sidecar_path(dataset_path)
    io.write_dataset(dataset_path, dataset)
    io.write_sidecar(meta_path, scenario, extra={
        "r": cfg.dataset_r,
        "feature_mode": cfg.feature_mode,
        "dataset_seed": cfg.dataset_seed,
        "layout": cfg.scenario.layout,
        "cluster_means": ";".join(f"{x!r},{y!r}" for x, y in cfg.scenario.cluster_means),
        "cluster_spreads": ";".join(f"{x!r},{y!r}" for x, y in cfg.scenario.cluster_spreads),
        "spread_is_variance": cfg.scenario.spread_is_variance,
        "min_scatter_rrh_dist": repr(cfg.scenario.min_scatter_rrh_dist),
    })
    for path in (dataset_path, meta_path):
        print(f"{path}  {io.sha256_file(path)}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    dataset = io.read_dataset(args.dataset)
    if args.stage == "rsd":
        trained = training.train_rsd(dataset, cfg.training)
        schedule = TemperatureSchedule(cfg.training.tau_start, cfg.training.tau_end,
                                       cfg.training.epochs)
        indices = training.run_selection(trained)
        io.write_model(out / "rsd.dasm", trained, schedule=schedule)
        io.write_history_csv(out / "rsd_history.csv", trained.history)
        io.write_indices(out / "rsd_selection.txt", indices)
        dupes = indices.size - selection.unique_count(indices)
        if dupes:
            print(f"warning: {dupes} duplicate selection slot(s)", file=sys.stderr)
        print(f"{out / 'rsd.dasm'}  {io.sha256_file(out / 'rsd.dasm')}")
        return 0
    # localization stage
    if args.selection is not None:
        indices = io.read_indices(args.selection)
        if indices.size != cfg.training.m:
            raise DaslocError(
                f"selection file has {indices.size} indices but training.m is "
                f"{cfg.training.m}"
            )
    else:
        indices = np.arange(dataset.feature_dim)
        print(f"no selection file: training on all {indices.size} features",
              file=sys.stderr)
    trained = training.train_lud(dataset, indices, cfg.training)
    io.write_model(out / "lud.dasm", trained)
    io.write_history_csv(out / "lud_history.csv", trained.history)
    print(f"{out / 'lud.dasm'}  {io.sha256_file(out / 'lud.dasm')}")
    return 0


def cmd_select(args) -> int:
    dataset = io.read_dataset(args.dataset)
    if args.m is not None and args.m > dataset.n:
        raise DaslocError(f"cannot select {args.m} of {dataset.n} antennas")
    if args.method == "rsd" and args.model is None:
        raise DaslocError("--method rsd needs --model (a trained selection stage)")
    if args.model is not None:
        model, _ = io.read_model(args.model)
        if not isinstance(model, training.TrainedRsd):
            raise DaslocError("--model must point at a selection-stage model")
        if args.m is not None and args.m != model.selector.m:
            raise DaslocError(
                f"--m {args.m} does not match the model's {model.selector.m} slots"
            )
        indices = training.run_selection(model)
    elif args.method == "full":
        if args.m is not None and args.m != dataset.n:
            raise DaslocError(f"--method full selects all {dataset.n} antennas")
        indices = np.arange(dataset.n)
    elif args.method == "cg":
        if args.m is None:
            raise DaslocError("--m is required with --method cg")
        indices = selection.select_cg(dataset, args.m)
    elif args.method == "random":
        if args.m is None:
            raise DaslocError("--m is required with --method random")
        indices = selection.select_random(dataset.n, args.m, args.seed or 0)
    else:
        raise DaslocError("pass either --model or --method {rsd,cg,random,full}")
    dupes = indices.size - selection.unique_count(indices)
    if dupes:
        print(f"warning: {dupes} duplicate selection slot(s) retained", file=sys.stderr)
    io.write_indices(args.out, indices)
    print(f"{args.out}  {io.sha256_file(args.out)}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    model, _ = io.read_model(args.model)
    if not isinstance(model, training.TrainedLud):
        raise DaslocError("eval needs a localization-stage model")
    dataset = io.read_dataset(args.dataset)
    if model.feature_mode != dataset.feature_mode:
        raise WrongFeatureMode(
            f"model expects {model.feature_mode} features, dataset holds "
            f"{dataset.feature_mode}"
        )
    report = evaluation.build_report(model, dataset, cfg.training,
                                     percentiles=cfg.evaluation.percentiles)
    errors = report.ecdf[:, 0]
    row = evaluation.MethodResult(
        method="lud", m=int(model.selected_indices.size), seed_count=1,
        rmse_mean=report.rmse, ci95=0.0,
        unique_selected=float(report.unique_selected),
        p50=report.percentiles[0.5], p90=report.percentiles[0.9],
        runtime=report.runtime,
    )
    evaluation.write_ecdf_csv(out / "ecdf.csv", errors)
    evaluation.write_summary_csv(out / "summary.csv", [row])

    meta = io.sidecar_path(args.dataset)
    if meta.exists():
        scenario, _ = io.read_sidecar(meta)
        emap = evaluation.error_map(model, scenario, cfg.evaluation.grid_step)
        evaluation.write_error_map_csv(out / "error_map.csv", emap)
        if args.svg == "on":
            evaluation.render_error_map_svg(out / "error_map.svg", emap)
    else:
        print(f"no sidecar at {meta}: skipping the error map", file=sys.stderr)
    if args.svg == "on":
        evaluation.render_ecdf_svg(out / "ecdf.svg", errors)

    tail = " ".join(f"p{p * 100:g}={v:.6f}" for p, v in report.percentiles.items())
    print(f"samples={errors.size} rmse={report.rmse:.6f} {tail}")
    return 0


def cmd_report(args) -> int:
    out = _outdir(args)
    selections = [io.read_indices(p) for p in args.selections]
    if not selections:
        raise EmptyInput("no selection files given")
    ranked = evaluation.selection_frequency(selections, args.top_k)
    evaluation.write_selection_freq_csv(out / "selection_freq.csv", ranked)
    if args.svg == "on":
        evaluation.render_selection_freq_svg(out / "selection_freq.svg", ranked)
    for index, count in ranked:
        print(f"{index}\t{count}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dasloc",
        description="Antenna-subset selection and fingerprint localization experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the config")
        p.add_argument("--deterministic", choices=("on", "off"), default="on",
                       help="'off' draws a fresh master seed from OS entropy")

    p = sub.add_parser("gen", help="generate a scenario and dataset")
    add_common(p)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the selection or localization stage")
    add_common(p)
    p.add_argument("--stage", choices=("rsd", "lud"), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--selection", default=None,
                   help="index list for the localization stage (default: all features)")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="emit an antenna index list")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", default=None, help="trained selection-stage model")
    p.add_argument("--method", choices=("rsd", "cg", "random", "full"), default=None)
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output index-list file")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("eval", help="evaluate a localization model on the test split")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--svg", choices=("on", "off"), default="off")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="aggregate selection lists into frequencies")
    p.add_argument("--selections", nargs="+", required=True)
    p.add_argument("--top-k", type=int, default=15)
    p.add_argument("--out", default=".")
    p.add_argument("--svg", choices=("on", "off"), default="off")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DaslocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
