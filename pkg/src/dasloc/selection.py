"""Differentiable antenna-subset selection and the non-learned baselines.

Each of the M output slots owns a learnable N-vector of logits.  During
training a slot samples a relaxed one-hot row: Gumbel noise is added to the
logits and the result is pushed through a temperature-controlled softmax, so
the row stays on the probability simplex and gradients flow back into the
logits.  As the temperature anneals toward zero the rows harden; at test
time the softmax is replaced by a plain argmax over the noise-free logits.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import nn
from .channels import Dataset
from .errors import ShapeMismatch, WrongFeatureMode

logger = logging.getLogger(__name__)

_TAU_FLOOR = 1e-6
_UNIFORM_CLAMP = 1e-12


@dataclass
class SelectorParams:
    """M learnable logit rows over N selectable inputs."""

    logits: np.ndarray  # (M, N)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ShapeMismatch(f"logits must be (M, N), got {self.logits.shape}")
        if self.m > self.n:
            raise ValueError(f"cannot select {self.m} of {self.n} inputs")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    @property
    def m(self) -> int:
        return self.logits.shape[0]

    @property
    def n(self) -> int:
        return self.logits.shape[1]


def init_selector(m: int, n: int, seed) -> SelectorParams:
    """Glorot-normal logits, same initializer family as the dense layers."""
    return SelectorParams(logits=nn.glorot_init(m, n, seed))


@dataclass
class SelectionMatrix:
    """M rows over N inputs; soft rows live on the simplex, hard rows are one-hot."""

    rows: np.ndarray  # (M, N)
    mode: str  # "soft" | "hard"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ShapeMismatch(f"rows must be (M, N), got {self.rows.shape}")
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "soft":
            if np.any(self.rows < 0.0) or np.any(np.abs(self.rows.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("soft rows must be non-negative and sum to 1")
        else:
            ok = np.all(np.isin(self.rows, (0.0, 1.0))) and np.all(self.rows.sum(axis=1) == 1.0)
            if not ok:
                raise ValueError("hard rows must be one-hot")


@dataclass(frozen=True)
class TemperatureSchedule:
    """Exponential decay from tau_start at epoch 0 to tau_end at the final epoch."""

    tau_start: float = 10.0
    tau_end: float = 0.1
    total_epochs: int = 150

    def __post_init__(self):
        if not self.tau_start > self.tau_end > 0.0:
            raise ValueError("need tau_start > tau_end > 0")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be >= 1")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def class_probabilities(logits) -> np.ndarray:
    """Softmax of the logits along the last axis (max-subtracted for safety)."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return _softmax(z)


def gumbel_icdf(u) -> np.ndarray:
    """Standard-Gumbel inverse CDF, -log(-log u), with u clamped away from {0, 1}."""
    u = np.clip(np.asarray(u, dtype=np.float64), _UNIFORM_CLAMP, 1.0 - _UNIFORM_CLAMP)
    return -np.log(-np.log(u))


def sample_gumbel(size, seed) -> np.ndarray:
    """i.i.d. standard-Gumbel noise of the given shape, deterministic per seed."""
    rng = np.random.default_rng(seed)
    return gumbel_icdf(rng.random(size))


def gumbel_max_sample(logits, seed) -> int:
    """One categorical draw via the argmax of Gumbel-perturbed logits."""
    z = np.asarray(logits, dtype=np.float64)
    g = sample_gumbel(z.shape, seed)
    return int(np.argmax(z + g))


def concrete_sample(logits, gumbel_noise, tau: float) -> np.ndarray:
    """Relaxed one-hot row(s): softmax((logits + noise) / tau), last axis.

    Differentiable in the logits; temperatures below 1e-6 are clamped so the
    soft path never divides by zero.
    """
    if tau <= 0.0:
        raise ValueError("tau must be > 0")
    z = np.asarray(logits, dtype=np.float64) + np.asarray(gumbel_noise, dtype=np.float64)
    return _softmax(z / max(tau, _TAU_FLOOR))


def concrete_sample_grad(soft: np.ndarray, upstream: np.ndarray, tau: float) -> np.ndarray:
    """Chain an upstream gradient through concrete_sample back to the logits.

    ``soft`` is the sampled row (or stack of rows) and ``upstream`` the loss
    gradient w.r.t. it; both reduce along the last axis.
    """
    inner = np.sum(upstream * soft, axis=-1, keepdims=True)
    return soft * (upstream - inner) / max(tau, _TAU_FLOOR)


def temperature(t: float, schedule: TemperatureSchedule) -> float:
    """Annealed temperature at epoch t: geometric interpolation of the endpoints."""
    if not 0 <= t <= schedule.total_epochs:
        raise ValueError(f"epoch {t} outside [0, {schedule.total_epochs}]")
    ratio = schedule.tau_end / schedule.tau_start
    return schedule.tau_start * ratio ** (t / schedule.total_epochs)


def hard_select(params: SelectorParams) -> np.ndarray:
    """Noise-free argmax per slot; ties break to the lowest index.

    Two slots may pick the same input; callers decide how to report that
    (see :func:`unique_count`).
    """
    return np.argmax(params.logits, axis=1)


def selection_margins(params: SelectorParams) -> np.ndarray:
    """Winning logit minus runner-up per slot (inf when there is one input)."""
    if params.n == 1:
        return np.full(params.m, np.inf)
    part = np.partition(params.logits, -2, axis=1)
    return part[:, -1] - part[:, -2]


def unique_count(indices) -> int:
    return int(np.unique(np.asarray(indices)).size)


def one_hot_matrix(indices, n: int) -> SelectionMatrix:
    """Hard selection matrix whose row m selects input indices[m]."""
    idx = np.asarray(indices, dtype=np.intp)
    if np.any(idx < 0) or np.any(idx >= n):
        raise ShapeMismatch(f"indices out of range for n={n}")
    rows = np.zeros((idx.size, n))
    rows[np.arange(idx.size), idx] = 1.0
    return SelectionMatrix(rows=rows, mode="hard")


def apply_selection(matrix: SelectionMatrix, features) -> np.ndarray:
    """Row-wise dot products; for hard rows this is exactly a gather."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != matrix.rows.shape[1]:
        raise ShapeMismatch(
            f"features width {f.shape[-1]} != selection width {matrix.rows.shape[1]}"
        )
    return f @ matrix.rows.T


def select_cg(dataset: Dataset, m: int) -> np.ndarray:
    """Channel-gain baseline: the M antennas with the largest summed |h|^2.

    Returned in descending score order; ties break to the lower index.
    """
    if dataset.feature_mode != "magnitude":
        raise WrongFeatureMode("channel-gain selection needs magnitude features")
    if m > dataset.n:
        raise ValueError(f"cannot select {m} of {dataset.n} antennas")
    scores = np.sum(dataset.features**2, axis=0)
    order = np.argsort(-scores, kind="stable")
    return order[:m]


def select_random(n: int, m: int, seed) -> np.ndarray:
    """M distinct indices drawn uniformly without replacement."""
    if m > n:
        raise ValueError(f"cannot select {m} of {n} antennas")
    rng = np.random.default_rng(seed)
    return rng.choice(n, size=m, replace=False)


def warn_on_duplicates(indices) -> int:
    """Report duplicate picks (allowed, but they shrink the effective subset)."""
    idx = np.asarray(indices)
    uniq = unique_count(idx)
    dupes = idx.size - uniq
    if dupes > 0:
        warnings.warn(
            f"selection contains {dupes} duplicate slot(s); {uniq} unique antennas",
            stacklevel=2,
        )
        logger.warning("duplicate selections: %s (%d unique)", idx.tolist(), uniq)
    return dupes
