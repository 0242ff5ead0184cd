"""Metrics, method comparisons, and figure data for localization runs.

All metrics are pure folds over error samples; the heavier drivers
(`compare_methods`, `error_map`) re-run the training pipeline or simulate
fresh probe channels and reduce to the same primitives.
"""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from . import selection, training
from .channels import Dataset, Position2D, Scenario, channel_rows, features_from_channels
from .errors import EmptyInput

logger = logging.getLogger(__name__)

METHODS = ("rsd", "cg", "random", "full")


@dataclass(frozen=True)
class ErrorSample:
    """One test point: ground truth, estimate, and their Euclidean distance."""

    true_position: Position2D
    estimated_position: Position2D
    error: float

    @classmethod
    def from_positions(cls, true_pos, est_pos) -> "ErrorSample":
        t = np.asarray(true_pos, dtype=np.float64)
        e = np.asarray(est_pos, dtype=np.float64)
        return cls(
            true_position=Position2D(float(t[0]), float(t[1])),
            estimated_position=Position2D(float(e[0]), float(e[1])),
            error=float(np.hypot(t[0] - e[0], t[1] - e[1])),
        )


def error_samples(true_positions: np.ndarray, estimated: np.ndarray) -> list[ErrorSample]:
    return [ErrorSample.from_positions(t, e) for t, e in zip(true_positions, estimated)]


def rmse(samples) -> float:
    """Root mean squared Euclidean error over the samples.

    The sum of squares uses exactly-rounded accumulation, so the result is
    independent of sample order.
    """
    errs = _errors_array(samples)
    return math.sqrt(math.fsum(float(e) * float(e) for e in errs) / errs.size)


def _errors_array(samples) -> np.ndarray:
    if len(samples) == 0:
        raise EmptyInput("no error samples")
    if isinstance(samples[0], ErrorSample):
        return np.array([s.error for s in samples], dtype=np.float64)
    return np.asarray(samples, dtype=np.float64)


def ecdf(errors) -> np.ndarray:
    """Empirical CDF as sorted (value, k/n) pairs, ending exactly at 1."""
    errs = _errors_array(errors)
    n = errs.size
    values = np.sort(errs)
    fractions = np.arange(1, n + 1) / n
    return np.stack([values, fractions], axis=1)


def ecdf_at(errors, x: float) -> float:
    """Fraction of errors <= x (right-continuous step convention)."""
    errs = _errors_array(errors)
    return float(np.sum(errs <= x) / errs.size)


def percentile(errors, p: float) -> float:
    """Smallest value whose ECDF reaches p (no interpolation)."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must be in (0, 1]")
    errs = np.sort(_errors_array(errors))
    fractions = np.arange(1, errs.size + 1) / errs.size
    # first sample whose cumulative fraction reaches p; the last fraction is
    # exactly 1.0, so the lookup always lands
    k = int(np.searchsorted(fractions, p, side="left"))
    return float(errs[k])


def selection_frequency(selections, top_k: int) -> list[tuple[int, int]]:
    """Occurrence counts of antenna indices across runs, top_k by count.

    Ties break toward the lower index so rankings are reproducible.
    """
    if len(selections) == 0:
        raise EmptyInput("no selections to count")
    counts = Counter()
    for sel in selections:
        counts.update(int(i) for i in np.asarray(sel).ravel())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_k]


@dataclass
class ErrorMap:
    """Per-cell localization error and aleatoric spread over a region grid.

    Both channels are min-max normalized independently; a constant channel
    (including the single-cell case) normalizes to all zeros.
    """

    cell_x: np.ndarray  # (nx,) cell-center x
    cell_y: np.ndarray  # (ny,)
    error: np.ndarray  # (ny, nx) raw meters
    uncertainty: np.ndarray  # (ny, nx) raw aleatoric std, meters
    norm_error: np.ndarray
    norm_uncertainty: np.ndarray


def _minmax_normalize(grid: np.ndarray) -> np.ndarray:
    lo, hi = float(grid.min()), float(grid.max())
    if hi <= lo:
        return np.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def _cell_centers(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(np.ceil((hi - lo) / step))
    edges_lo = lo + step * np.arange(n)
    edges_hi = np.minimum(edges_lo + step, hi)
    return 0.5 * (edges_lo + edges_hi)


def error_map(trained: training.TrainedLud, scenario: Scenario, grid_step: float) -> ErrorMap:
    """Evaluate the model on fresh channels over a regular region grid.

    One probe per cell center.  Probes ignore the dataset's minimum
    user-antenna distance (the map should cover the whole region); a probe
    landing exactly on an antenna still raises.
    """
    if grid_step <= 0.0:
        raise ValueError("grid_step must be > 0")
    xmin, xmax, ymin, ymax = scenario.roi
    cx = _cell_centers(xmin, xmax, grid_step)
    cy = _cell_centers(ymin, ymax, grid_step)
    gx, gy = np.meshgrid(cx, cy)
    probes = np.stack([gx.ravel(), gy.ravel()], axis=1)
    channels = channel_rows(probes, scenario)
    feats = features_from_channels(channels, trained.feature_mode)
    est, alea, _ = training.predict_batch(trained, feats[:, trained.selected_indices])
    err = np.hypot(est[:, 0] - probes[:, 0], est[:, 1] - probes[:, 1])
    spread = np.sqrt(alea).mean(axis=1)  # mean per-axis aleatoric std
    err_grid = err.reshape(cy.size, cx.size)
    spread_grid = spread.reshape(cy.size, cx.size)
    return ErrorMap(
        cell_x=cx,
        cell_y=cy,
        error=err_grid,
        uncertainty=spread_grid,
        norm_error=_minmax_normalize(err_grid),
        norm_uncertainty=_minmax_normalize(spread_grid),
    )


@dataclass
class EvalReport:
    """Everything one evaluation run produces, before it is written out."""

    rmse: float
    ecdf: np.ndarray  # (n, 2) sorted (error, fraction) pairs
    percentiles: dict[float, float]
    unique_selected: int
    runtime: float  # seconds


def build_report(trained: training.TrainedLud, dataset: Dataset,
                 config: training.TrainConfig,
                 percentiles=(0.5, 0.9)) -> EvalReport:
    """Evaluate on the test split and fold the metrics into one report."""
    t0 = time.perf_counter()
    samples = evaluate_on_test(trained, dataset, config)
    errors = np.array([s.error for s in samples])
    pvals = {float(p): percentile(errors, p) for p in sorted(set(percentiles) | {0.5, 0.9})}
    return EvalReport(
        rmse=rmse(samples),
        ecdf=ecdf(errors),
        percentiles=pvals,
        unique_selected=selection.unique_count(trained.selected_indices),
        runtime=time.perf_counter() - t0,
    )


def mean_ci95(values) -> tuple[float, float]:
    """Sample mean and normal-approximation 95% confidence half-width."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("no values")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(v.size))


@dataclass
class MethodResult:
    """Aggregated comparison row for one selection method."""

    method: str
    m: int
    seed_count: int
    rmse_mean: float
    ci95: float
    unique_selected: float
    p50: float
    p90: float
    runtime: float  # seconds, summed over seeds


def evaluate_on_test(trained: training.TrainedLud, dataset: Dataset,
                     config: training.TrainConfig) -> list[ErrorSample]:
    """Error samples over the dataset's test partition."""
    _, _, test_idx = training.split_indices(dataset.r, config.split_ratio, config.seed)
    if test_idx.size == 0:
        raise EmptyInput("test split is empty")
    feats = dataset.features[test_idx][:, trained.selected_indices]
    est, _, _ = training.predict_batch(trained, feats)
    return error_samples(dataset.positions[test_idx], est)


def _indices_for_method(method: str, dataset: Dataset, m: int, seed: int,
                        config: training.TrainConfig) -> np.ndarray:
    if method == "full":
        return np.arange(dataset.feature_dim)
    if method == "random":
        return selection.select_random(dataset.n, m, seed)
    if method == "cg":
        tr, va, _ = training.split_indices(dataset.r, config.split_ratio, seed)
        pool = dataset.subset(np.concatenate([tr, va]))
        return selection.select_cg(pool, m)
    if method == "rsd":
        trained = training.train_rsd(dataset, config)
        return training.run_selection(trained)
    raise ValueError(f"unknown method {method!r}")


def compare_methods(dataset: Dataset, methods, m: int, seeds,
                    config: training.TrainConfig | None = None) -> list[MethodResult]:
    """Train one localization model per (method, seed) and aggregate RMSE.

    Every method shares the same dataset partitions for a given seed, so the
    comparison isolates the selection strategy.  A single seed yields a
    degenerate zero-width confidence interval (flagged with a warning).
    """
    seeds = list(seeds)
    if not seeds:
        raise EmptyInput("need at least one seed")
    if config is None:
        config = training.TrainConfig()
    if len(seeds) == 1:
        warnings.warn("single seed: confidence intervals are degenerate", stacklevel=2)
    results = []
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        per_seed_rmse, per_seed_p50, per_seed_p90, per_seed_unique = [], [], [], []
        t0 = time.perf_counter()
        for seed in seeds:
            cfg = replace(config, seed=seed, m=(dataset.feature_dim if method == "full" else m))
            indices = _indices_for_method(method, dataset, m, seed, cfg)
            lud = training.train_lud(dataset, indices, cfg)
            samples = evaluate_on_test(lud, dataset, cfg)
            errs = np.array([s.error for s in samples])
            per_seed_rmse.append(rmse(samples))
            per_seed_p50.append(percentile(errs, 0.5))
            per_seed_p90.append(percentile(errs, 0.9))
            per_seed_unique.append(selection.unique_count(indices))
            logger.info("method=%s seed=%d rmse=%.3f", method, seed, per_seed_rmse[-1])
        mean, ci = mean_ci95(per_seed_rmse)
        results.append(MethodResult(
            method=method,
            m=m if method != "full" else dataset.feature_dim,
            seed_count=len(seeds),
            rmse_mean=mean,
            ci95=ci,
            unique_selected=float(np.mean(per_seed_unique)),
            p50=float(np.mean(per_seed_p50)),
            p90=float(np.mean(per_seed_p90)),
            runtime=time.perf_counter() - t0,
        ))
    return results


# ---------------------------------------------------------------------------
# report files

def write_ecdf_csv(path, errors) -> None:
    curve = ecdf(errors)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["error", "fraction"])
        for value, frac in curve:
            w.writerow([repr(float(value)), repr(float(frac))])


def write_summary_csv(path, rows: list[MethodResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "m", "seed_count", "rmse_mean", "ci95",
                    "unique_selected", "p50", "p90"])
        for r in rows:
            w.writerow([r.method, r.m, r.seed_count, repr(r.rmse_mean), repr(r.ci95),
                        repr(r.unique_selected), repr(r.p50), repr(r.p90)])


def write_selection_freq_csv(path, ranked: list[tuple[int, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rrh_index", "count"])
        for index, count in ranked:
            w.writerow([index, count])


def write_error_map_csv(path, emap: ErrorMap) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_x", "cell_y", "norm_error", "norm_uncertainty"])
        for iy, y in enumerate(emap.cell_y):
            for ix, x in enumerate(emap.cell_x):
                w.writerow([repr(float(x)), repr(float(y)),
                            repr(float(emap.norm_error[iy, ix])),
                            repr(float(emap.norm_uncertainty[iy, ix]))])


class DaslocPlotError(RuntimeError):
    """Raised when SVG output is requested without matplotlib installed."""


def _matplotlib():
    try:
        import matplotlib
        matplotlib.use("Agg", force=False)
        import matplotlib.pyplot as plt
    except ImportError as exc:  # pragma: no cover - depends on extras
        raise DaslocPlotError("SVG rendering needs the 'plots' extra (matplotlib)") from exc
    return plt


def render_ecdf_svg(path, errors, label: str = "") -> None:
    plt = _matplotlib()
    curve = ecdf(errors)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.step(curve[:, 0], curve[:, 1], where="post", label=label or None)
    ax.set_xlabel("localization error [m]")
    ax.set_ylabel("ECDF")
    ax.set_ylim(0, 1.02)
    ax.grid(True, alpha=0.3)
    if label:
        ax.legend()
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def render_selection_freq_svg(path, ranked: list[tuple[int, int]]) -> None:
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    labels = [str(i) for i, _ in ranked]
    counts = [c for _, c in ranked]
    ax.bar(range(len(ranked)), counts)
    ax.set_xticks(range(len(ranked)), labels)
    ax.set_xlabel("antenna index")
    ax.set_ylabel("times selected")
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)


def render_error_map_svg(path, emap: ErrorMap) -> None:
    plt = _matplotlib()
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    for ax, grid, title in ((axes[0], emap.norm_error, "normalized error"),
                            (axes[1], emap.norm_uncertainty, "normalized uncertainty")):
        im = ax.imshow(grid, origin="lower",
                       extent=(emap.cell_x[0], emap.cell_x[-1], emap.cell_y[0], emap.cell_y[-1]))
        ax.set_title(title)
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
