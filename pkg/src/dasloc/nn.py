"""Minimal dense-network engine in float64 numpy.

Covers exactly what the localization pipeline needs: affine layers with ReLU,
inverted dropout, Glorot-normal initialization, squared-error and Gaussian
negative-log-likelihood losses, hand-written reverse-mode gradients (including
the gradient w.r.t. the network input, which the selection layer chains into),
Adam, and a central-difference gradient oracle for checking all of the above.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeMismatch

ACTIVATIONS = ("linear", "relu")


@dataclass
class MlpParams:
    """Layer weights/biases plus per-layer activation and dropout tags."""

    weights: list[np.ndarray]  # layer i: (fan_in, fan_out)
    biases: list[np.ndarray]  # layer i: (fan_out,)
    activations: list[str]
    dropout_rates: list[float]  # applied to the layer's activation output

    def __post_init__(self):
        n = len(self.weights)
        if not (len(self.biases) == len(self.activations) == len(self.dropout_rates) == n):
            raise ShapeMismatch("per-layer lists must have equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeMismatch(
                    f"layer {i} expects {w.shape[0]} inputs, "
                    f"previous layer emits {self.weights[i - 1].shape[1]}"
                )
            if self.activations[i] not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activations[i]!r}")
            if not 0.0 <= self.dropout_rates[i] < 1.0:
                raise ValueError(f"dropout rate {self.dropout_rates[i]} outside [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def layer_widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameter_arrays(self) -> list[np.ndarray]:
        """Flat [W0, b0, W1, b1, ...] view of the live parameter arrays."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activations=list(self.activations),
            dropout_rates=list(self.dropout_rates),
        )


@dataclass
class ForwardCache:
    """Intermediates from one forward pass, consumed by backprop."""

    inputs: list[np.ndarray]  # input to each layer, after previous dropout
    preacts: list[np.ndarray]  # affine outputs, before activation
    masks: list[np.ndarray | None]
    squeeze: bool  # input was a single vector


@dataclass
class MlpGradients:
    dweights: list[np.ndarray]
    dbiases: list[np.ndarray]
    dinput: np.ndarray

    def parameter_arrays(self) -> list[np.ndarray]:
        out = []
        for dw, db in zip(self.dweights, self.dbiases):
            out.extend((dw, db))
        return out


def glorot_init(fan_in: int, fan_out: int, seed) -> np.ndarray:
    """Glorot-normal matrix: i.i.d. zero-mean normals, variance 2/(fan_in+fan_out)."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fans must be >= 1")
    rng = np.random.default_rng(seed)
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def init_mlp(widths: Sequence[int], seed, *, dropout: float = 0.0) -> MlpParams:
    """ReLU trunk with a linear output layer; dropout only on hidden layers."""
    widths = list(widths)
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    rng = np.random.default_rng(seed)
    weights, biases, acts, rates = [], [], [], []
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        last = i == len(widths) - 2
        weights.append(glorot_init(fi, fo, rng))
        biases.append(np.zeros(fo))
        acts.append("linear" if last else "relu")
        rates.append(0.0 if last else dropout)
    return MlpParams(weights=weights, biases=biases, activations=acts, dropout_rates=rates)


def sample_dropout_masks(params: MlpParams, rng: np.random.Generator,
                         batch_size: int | None = None) -> list[np.ndarray | None]:
    """Inverted-dropout masks: entries are 0 or 1/(1-rate), one per unit.

    Layers with rate 0 get None (identity).  Pass batch_size for batched
    forward passes; each sample draws its own mask.
    """
    masks: list[np.ndarray | None] = []
    for w, rate in zip(params.weights, params.dropout_rates):
        if rate == 0.0:
            masks.append(None)
            continue
        shape = (w.shape[1],) if batch_size is None else (batch_size, w.shape[1])
        keep = rng.random(shape) >= rate
        masks.append(keep.astype(np.float64) / (1.0 - rate))
    return masks


def mlp_forward(params: MlpParams, x, dropout_masks=None) -> tuple[np.ndarray, ForwardCache]:
    """Affine/ReLU chain.  Inference mode (no masks) applies no dropout at all."""
    a = np.asarray(x, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    if a.shape[1] != params.weights[0].shape[0]:
        raise ShapeMismatch(
            f"input width {a.shape[1]} != first layer fan-in {params.weights[0].shape[0]}"
        )
    if dropout_masks is not None and len(dropout_masks) != params.n_layers:
        raise ShapeMismatch("one dropout mask entry per layer required")
    inputs, preacts, masks = [], [], []
    for i, (w, b, act) in enumerate(zip(params.weights, params.biases, params.activations)):
        inputs.append(a)
        z = a @ w + b
        preacts.append(z)
        a = np.maximum(z, 0.0) if act == "relu" else z
        mask = None if dropout_masks is None else dropout_masks[i]
        if mask is not None:
            a = a * mask
        masks.append(mask)
    out = a[0] if squeeze else a
    return out, ForwardCache(inputs=inputs, preacts=preacts, masks=masks, squeeze=squeeze)


def backprop(params: MlpParams, cache: ForwardCache, loss_grad) -> MlpGradients:
    """Exact reverse-mode gradients for every weight, bias, and the input.

    ``loss_grad`` is dL/d(output) from the forward pass that produced
    ``cache``; batched inputs expect a matching (B, out) gradient.  The
    returned ``dinput`` lets callers chain into layers that feed this net.
    """
    g = np.asarray(loss_grad, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.preacts[-1].shape:
        raise ShapeMismatch(f"loss_grad shape {g.shape} != output shape {cache.preacts[-1].shape}")
    dweights = [np.empty(0)] * params.n_layers
    dbiases = [np.empty(0)] * params.n_layers
    for i in range(params.n_layers - 1, -1, -1):
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        if params.activations[i] == "relu":
            g = g * (cache.preacts[i] > 0.0)
        dweights[i] = cache.inputs[i].T @ g
        dbiases[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    dinput = g[0] if cache.squeeze else g
    return MlpGradients(dweights=dweights, dbiases=dbiases, dinput=dinput)


def mse_loss(pred, target) -> float:
    """Squared Euclidean distance between one prediction/target pair."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"pred {p.shape} vs target {t.shape}")
    d = p - t
    return float(np.dot(d, d))


def gaussian_nll_loss(mean, log_var, target) -> float:
    """Heteroscedastic Gaussian negative log likelihood, constants dropped.

    Per axis: log_var/2 + (target - mean)^2 / (2 exp(log_var)).
    """
    m = np.asarray(mean, dtype=np.float64)
    s = np.asarray(log_var, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if not (m.shape == s.shape == t.shape):
        raise ShapeMismatch("mean, log_var, target must share a shape")
    return float(np.sum(0.5 * s + 0.5 * (t - m) ** 2 * np.exp(-s)))


def mse_loss_grad(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean squared-error loss and its gradient w.r.t. predictions."""
    d = pred - target
    loss = float(np.mean(np.sum(d * d, axis=-1)))
    return loss, 2.0 * d / pred.shape[0]


def gaussian_nll_loss_grad(out: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Batch-mean NLL for a (B, 4) head laid out as (mean_xy, log_var_xy)."""
    half = target.shape[-1]
    mean, log_var = out[:, :half], out[:, half:]
    inv_var = np.exp(-log_var)
    err = mean - target
    loss = float(np.mean(np.sum(0.5 * log_var + 0.5 * err**2 * inv_var, axis=-1)))
    b = out.shape[0]
    grad = np.concatenate([err * inv_var, 0.5 * (1.0 - err**2 * inv_var)], axis=1) / b
    return loss, grad


@dataclass
class AdamState:
    """First/second moment accumulators; shapes mirror the parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(m=[np.zeros_like(p) for p in params],
                     v=[np.zeros_like(p) for p in params],
                     step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray]) -> tuple[Sequence[np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Updates params and state in place
    (and returns them, for call sites that prefer the functional reading)."""
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeMismatch("params/grads do not match the optimizer state")
    state.step += 1
    b1c = 1.0 - state.beta1**state.step
    b2c = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
    return params, state


def finite_diff_gradients(f: Callable[[np.ndarray], float], point: np.ndarray,
                          h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if h <= 0.0:
        raise ValueError("h must be > 0")
    x = np.asarray(point, dtype=np.float64).copy()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x.flat[i]
        x.flat[i] = orig + h
        fp = f(x)
        x.flat[i] = orig - h
        fm = f(x)
        x.flat[i] = orig
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad


def flatten_arrays(arrays: Sequence[np.ndarray]) -> tuple[np.ndarray, list[tuple[int, ...]]]:
    """Concatenate arrays into one vector, remembering shapes for unflatten."""
    shapes = [a.shape for a in arrays]
    if not arrays:
        return np.empty(0), shapes
    return np.concatenate([a.ravel() for a in arrays]), shapes


def unflatten_arrays(vec: np.ndarray, shapes: Sequence[tuple[int, ...]]) -> list[np.ndarray]:
    out, ofs = [], 0
    for shape in shapes:
        size = int(np.prod(shape)) if shape else 1
        out.append(vec[ofs:ofs + size].reshape(shape))
        ofs += size
    if ofs != vec.size:
        raise ShapeMismatch(f"vector length {vec.size} != total size {ofs}")
    return out


@dataclass
class FeatureScaler:
    """Per-dimension z-score statistics fit on the training split only.

    Dimensions with zero variance keep std 1 and are flagged in
    ``constant_dims`` so callers can see which inputs carry no signal.
    """

    mean: np.ndarray
    std: np.ndarray
    constant_dims: np.ndarray = field(default=None)  # bool per dim

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.constant_dims is None:
            self.constant_dims = np.zeros(self.mean.shape, dtype=bool)
        if self.mean.shape != self.std.shape or np.any(self.std <= 0.0):
            raise ValueError("scaler needs matching shapes and strictly positive stds")

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureScaler":
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        # a column that is constant up to rounding has std ~ eps * |mean|
        constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
        std = np.where(constant, 1.0, std)
        return cls(mean=mean, std=std, constant_dims=constant)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std


@dataclass
class TargetScaler:
    """Affine per-axis map of positions onto [-1, 1] and back."""

    lo: np.ndarray  # (2,)
    hi: np.ndarray  # (2,)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(self.hi <= self.lo):
            raise ValueError("target scaler needs hi > lo per axis")

    @classmethod
    def fit(cls, positions: np.ndarray) -> "TargetScaler":
        return cls(lo=positions.min(axis=0), hi=positions.max(axis=0))

    @property
    def half_range(self) -> np.ndarray:
        return 0.5 * (self.hi - self.lo)

    def transform(self, positions: np.ndarray) -> np.ndarray:
        return (positions - self.lo) / self.half_range - 1.0

    def inverse(self, scaled: np.ndarray) -> np.ndarray:
        return self.lo + (scaled + 1.0) * self.half_range
