"""Two-stage training pipeline: joint selector learning, then localization.

Stage one trains the selection network end to end: every epoch anneals the
relaxation temperature, every batch draws fresh Gumbel noise per example and
per slot, and gradients flow through the soft selection rows into both the
trunk weights and the selection logits.  Hardening the logits afterwards
yields the antenna subset.

Stage two gathers the selected features and trains the localization head,
which outputs a position estimate plus per-axis log-variances; sampling
stochastic dropout passes at prediction time separates what the data cannot
explain (aleatoric) from what the model has not pinned down (epistemic).

Everything is single-threaded and bit-reproducible for a given (dataset,
config, seed); shuffling, noise, and dropout all run on per-epoch derived
RNG streams.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn, selection
from .channels import Dataset, Position2D
from .errors import EmptyInput, IndexOutOfRange, ShapeMismatch, TooFewSamples, WrongFeatureMode

logger = logging.getLogger(__name__)

VALIDATION_FRACTION = 0.1

# RNG stream ids under the training seed
_STREAM_TRUNK_INIT = 10
_STREAM_SELECTOR_INIT = 11
_STREAM_SHUFFLE = 12
_STREAM_GUMBEL = 13
_STREAM_DROPOUT = 14
_STREAM_SPLIT = 15
_STREAM_MC_DROPOUT = 16
_STREAM_LUD_INIT = 17


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both training stages.

    Defaults are desk scale; the reference large-scale setup (800 epochs,
    patience 80, 49k samples) stays reachable through the config file.
    """

    epochs: int = 150
    learning_rate: float = 1e-3
    batch_size: int = 512
    dropout: float = 0.2
    tau_start: float = 10.0
    tau_end: float = 0.1
    patience: int = 30
    m: int = 6
    seed: int = 0
    split_ratio: float = 0.8
    hidden_layers: int = 3
    hidden_units: int = 350
    mc_passes: int = 30

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.m < 1:
            raise ValueError("epochs, batch_size, and m must be >= 1")
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if not 1 <= self.patience <= self.epochs:
            raise ValueError("need 1 <= patience <= epochs")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must be in (0, 1)")
        if self.hidden_layers < 1 or self.hidden_units < 1 or self.mc_passes < 1:
            raise ValueError("hidden_layers, hidden_units, mc_passes must be >= 1")
        if not self.tau_start > self.tau_end > 0.0:
            raise ValueError("need tau_start > tau_end > 0")

    def trunk_widths(self, n_in: int, n_out: int) -> list[int]:
        return [n_in] + [self.hidden_units] * self.hidden_layers + [n_out]


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    tau: float  # nan for the localization stage


@dataclass
class TrainedRsd:
    """Selection stage output: logits, trunk, scaling, and the loss history."""

    selector: selection.SelectorParams
    trunk: nn.MlpParams
    scaler: nn.FeatureScaler
    target_scaler: nn.TargetScaler
    history: list[EpochRecord] = field(default_factory=list)


@dataclass
class TrainedLud:
    """Localization stage output; input width equals the selected subset size."""

    trunk: nn.MlpParams
    scaler: nn.FeatureScaler
    target_scaler: nn.TargetScaler
    selected_indices: np.ndarray
    feature_mode: str = "magnitude"
    mc_passes: int = 30
    history: list[EpochRecord] = field(default_factory=list)

    def __post_init__(self):
        self.selected_indices = np.asarray(self.selected_indices, dtype=np.intp)
        if self.trunk.weights[0].shape[0] != self.selected_indices.size:
            raise ShapeMismatch("trunk input width must equal the selection size")
        if self.trunk.weights[-1].shape[1] != 4:
            raise ShapeMismatch("localization head must emit 4 outputs")


@dataclass
class EarlyStopper:
    """Stop after `patience` epochs without strict validation improvement."""

    patience: int
    best: float = math.inf
    stale: int = 0

    def update(self, val_loss: float) -> tuple[bool, bool]:
        """Returns (improved, stop)."""
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
            return True, False
        self.stale += 1
        return False, self.stale >= self.patience


def split_indices(r: int, ratio: float, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint (train, validation, test) index sets covering range(r).

    The first `ratio` of a seeded shuffle forms the training pool; the pool is
    further split 0.9/0.1 into train/validation, the remainder is the test set.
    """
    if r < 10:
        raise TooFewSamples(f"need at least 10 samples to split, got {r}")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    perm = np.random.default_rng([seed, _STREAM_SPLIT]).permutation(r)
    n_pool = round(r * ratio)
    n_val = round(n_pool * VALIDATION_FRACTION)
    n_train = n_pool - n_val
    if n_train < 1 or n_val < 1:
        raise TooFewSamples(f"split of {r} samples at ratio {ratio} leaves an empty partition")
    return perm[:n_train], perm[n_train:n_pool], perm[n_pool:]


def split_dataset(dataset: Dataset, ratio: float, seed) -> tuple[Dataset, Dataset, Dataset]:
    """Dataset views of :func:`split_indices` partitions."""
    tr, va, te = split_indices(dataset.r, ratio, seed)
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)


def _batch_slices(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def _rsd_val_loss(logits: np.ndarray, trunk: nn.MlpParams, x_val: np.ndarray,
                  y_val: np.ndarray) -> float:
    """Validation in operation-phase semantics: hard argmax selection, no
    noise, dropout off.  Mid-anneal soft rows behave like ensembles and would
    flatter logits whose hardened selection is still poor; scoring the hard
    selection makes the best-validation snapshot track the artifact that is
    actually kept."""
    h = x_val[:, np.argmax(logits, axis=1)]
    pred, _ = nn.mlp_forward(trunk, h)
    loss, _ = nn.mse_loss_grad(pred, y_val)
    return loss


def train_rsd(dataset: Dataset, config: TrainConfig) -> TrainedRsd:
    """Jointly learn the selection logits and the localization trunk.

    Follows the annealed relaxation recipe: per epoch the temperature decays
    exponentially; per batch every example and slot draws fresh Gumbel noise,
    soft selection rows gather the (z-scored) features, and the squared error
    against [-1, 1]-scaled targets is backpropagated into trunk and logits
    alike.  The validation loss is computed with hard (argmax) selection, and
    early stopping restores the best-validation snapshot.
    """
    if dataset.feature_mode != "magnitude":
        raise WrongFeatureMode("selector training needs magnitude features")
    if config.m > dataset.n:
        raise ValueError(f"cannot select {config.m} of {dataset.n} antennas")
    tr, va, _ = split_indices(dataset.r, config.split_ratio, config.seed)
    scaler = nn.FeatureScaler.fit(dataset.features[tr])
    target_scaler = nn.TargetScaler.fit(dataset.positions[tr])
    x_tr = scaler.transform(dataset.features[tr])
    y_tr = target_scaler.transform(dataset.positions[tr])
    x_va = scaler.transform(dataset.features[va])
    y_va = target_scaler.transform(dataset.positions[va])

    trunk = nn.init_mlp(config.trunk_widths(config.m, 2), [config.seed, _STREAM_TRUNK_INIT],
                        dropout=config.dropout)
    sel = selection.init_selector(config.m, dataset.n, [config.seed, _STREAM_SELECTOR_INIT])
    params = [sel.logits] + trunk.parameter_arrays()
    adam = nn.adam_init(params, lr=config.learning_rate)
    schedule = selection.TemperatureSchedule(config.tau_start, config.tau_end, config.epochs)
    stopper = EarlyStopper(config.patience)
    best_logits, best_trunk = sel.logits.copy(), trunk.copy()

    history: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        tau = selection.temperature(epoch, schedule)
        perm = np.random.default_rng([config.seed, _STREAM_SHUFFLE, epoch]).permutation(tr.size)
        gumbel_rng = np.random.default_rng([config.seed, _STREAM_GUMBEL, epoch])
        dropout_rng = np.random.default_rng([config.seed, _STREAM_DROPOUT, epoch])
        losses = []
        for sl in _batch_slices(tr.size, config.batch_size):
            idx = perm[sl]
            xb, yb = x_tr[idx], y_tr[idx]
            b = xb.shape[0]
            noise = selection.gumbel_icdf(gumbel_rng.random((b, config.m, dataset.n)))
            soft = selection.concrete_sample(sel.logits[None, :, :], noise, tau)
            gathered = (soft * xb[:, None, :]).sum(axis=-1)  # (B, M)
            masks = nn.sample_dropout_masks(trunk, dropout_rng, batch_size=b)
            pred, cache = nn.mlp_forward(trunk, gathered, masks)
            loss, dpred = nn.mse_loss_grad(pred, yb)
            grads = nn.backprop(trunk, cache, dpred)
            dsoft = grads.dinput[:, :, None] * xb[:, None, :]  # (B, M, N)
            dlogits = selection.concrete_sample_grad(soft, dsoft, tau).sum(axis=0)
            nn.adam_step(adam, params, [dlogits] + grads.parameter_arrays())
            losses.append(loss)
        val_loss = _rsd_val_loss(sel.logits, trunk, x_va, y_va)
        history.append(EpochRecord(epoch, float(np.mean(losses)), val_loss, tau))
        improved, stop = stopper.update(val_loss)
        if improved:
            best_logits, best_trunk = sel.logits.copy(), trunk.copy()
        if stop:
            logger.info("selector training stopped at epoch %d (patience %d)",
                        epoch, config.patience)
            break
    return TrainedRsd(
        selector=selection.SelectorParams(logits=best_logits),
        trunk=best_trunk,
        scaler=scaler,
        target_scaler=target_scaler,
        history=history,
    )


def run_selection(trained: TrainedRsd) -> np.ndarray:
    """Harden the learned logits into antenna indices, one per slot.

    Logs the per-slot winning margins and warns when slots collide; duplicate
    picks are kept so the reported subset matches what the logits actually say.
    """
    indices = selection.hard_select(trained.selector)
    margins = selection.selection_margins(trained.selector)
    for slot, (i, mg) in enumerate(zip(indices, margins)):
        logger.info("slot %d -> antenna %d (margin %.4f)", slot, i, mg)
    selection.warn_on_duplicates(indices)
    return indices


def train_lud(dataset: Dataset, selected_indices, config: TrainConfig) -> TrainedLud:
    """Train the localization/uncertainty head on hard-gathered features.

    Same optimizer and early-stopping contract as the selection stage, but
    with the Gaussian negative-log-likelihood over a 4-wide output
    (position means and per-axis log-variances).
    """
    idx = np.asarray(selected_indices, dtype=np.intp)
    if idx.ndim != 1 or idx.size < 1:
        raise ShapeMismatch("selected_indices must be a non-empty index vector")
    if np.any(idx < 0) or np.any(idx >= dataset.feature_dim):
        raise IndexOutOfRange(
            f"selection indices must lie in [0, {dataset.feature_dim}), got {idx.tolist()}"
        )
    tr, va, _ = split_indices(dataset.r, config.split_ratio, config.seed)
    feats = dataset.features[:, idx]
    scaler = nn.FeatureScaler.fit(feats[tr])
    target_scaler = nn.TargetScaler.fit(dataset.positions[tr])
    x_tr = scaler.transform(feats[tr])
    y_tr = target_scaler.transform(dataset.positions[tr])
    x_va = scaler.transform(feats[va])
    y_va = target_scaler.transform(dataset.positions[va])

    trunk = nn.init_mlp(config.trunk_widths(idx.size, 4), [config.seed, _STREAM_LUD_INIT],
                        dropout=config.dropout)
    params = trunk.parameter_arrays()
    adam = nn.adam_init(params, lr=config.learning_rate)
    stopper = EarlyStopper(config.patience)
    best_trunk = trunk.copy()

    history: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        perm = np.random.default_rng([config.seed, _STREAM_SHUFFLE, epoch]).permutation(tr.size)
        dropout_rng = np.random.default_rng([config.seed, _STREAM_DROPOUT, epoch])
        losses = []
        for sl in _batch_slices(tr.size, config.batch_size):
            bidx = perm[sl]
            xb, yb = x_tr[bidx], y_tr[bidx]
            masks = nn.sample_dropout_masks(trunk, dropout_rng, batch_size=xb.shape[0])
            out, cache = nn.mlp_forward(trunk, xb, masks)
            loss, dout = nn.gaussian_nll_loss_grad(out, yb)
            grads = nn.backprop(trunk, cache, dout)
            nn.adam_step(adam, params, grads.parameter_arrays())
            losses.append(loss)
        out_va, _ = nn.mlp_forward(trunk, x_va)
        val_loss, _ = nn.gaussian_nll_loss_grad(out_va, y_va)
        history.append(EpochRecord(epoch, float(np.mean(losses)), val_loss, float("nan")))
        improved, stop = stopper.update(val_loss)
        if improved:
            best_trunk = trunk.copy()
        if stop:
            logger.info("localization training stopped at epoch %d (patience %d)",
                        epoch, config.patience)
            break
    return TrainedLud(
        trunk=best_trunk,
        scaler=scaler,
        target_scaler=target_scaler,
        selected_indices=idx,
        feature_mode=dataset.feature_mode,
        mc_passes=config.mc_passes,
        history=history,
    )


def predict_batch(trained: TrainedLud, features: np.ndarray,
                  seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Positions plus per-axis aleatoric/epistemic variances (square meters).

    The position and the aleatoric head come from one deterministic pass.
    Epistemic variance is the across-pass variance of the position estimate
    over `mc_passes` stochastic dropout passes (exactly zero when the trunk
    has no dropout); `seed` makes those passes reproducible.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != trained.selected_indices.size:
        raise ShapeMismatch(
            f"features must be (B, {trained.selected_indices.size}), got {f.shape}"
        )
    if f.shape[0] == 0:
        raise EmptyInput("no feature rows to predict on")
    xs = trained.scaler.transform(f)
    out, _ = nn.mlp_forward(trained.trunk, xs)
    positions = trained.target_scaler.inverse(out[:, :2])
    aleatoric = np.exp(out[:, 2:]) * trained.target_scaler.half_range**2

    if all(rate == 0.0 for rate in trained.trunk.dropout_rates):
        return positions, aleatoric, np.zeros_like(positions)
    rng = np.random.default_rng([seed, _STREAM_MC_DROPOUT])
    mean = np.zeros_like(positions)
    m2 = np.zeros_like(positions)
    for p in range(1, trained.mc_passes + 1):
        masks = nn.sample_dropout_masks(trained.trunk, rng, batch_size=f.shape[0])
        out_p, _ = nn.mlp_forward(trained.trunk, xs, masks)
        mu_p = trained.target_scaler.inverse(out_p[:, :2])
        delta = mu_p - mean
        mean += delta / p
        m2 += delta * (mu_p - mean)
    epistemic = m2 / (trained.mc_passes - 1) if trained.mc_passes > 1 else np.zeros_like(m2)
    return positions, aleatoric, epistemic


def predict(trained: TrainedLud, features,
            seed: int = 0) -> tuple[Position2D, np.ndarray, np.ndarray]:
    """Single-sample convenience wrapper around :func:`predict_batch`."""
    pos, alea, epis = predict_batch(trained, np.asarray(features)[None, :], seed=seed)
    return Position2D(float(pos[0, 0]), float(pos[0, 1])), alea[0], epis[0]
