"""Scatterer-channel simulation for spatially distributed antenna layouts.

The propagation model is 2-D and purely geometric: every link between two
points contributes a free-space term whose amplitude decays as 1/distance
and whose phase advances by 2*pi/wavelength per meter of path length.
Point scatterers each add one single-bounce path with a frozen random phase
shift and a common amplitude gain that sets how strongly reflected paths
dominate the direct one.

All randomness flows through explicit integer seeds.  Scenario generation
and user placement are reproducible bit-for-bit for a given (config, seed),
independent of how many workers generate a dataset: every user sample owns
an RNG stream derived from (seed, sample index), and the scatterer sum runs
along a contiguous axis so the reduction order never depends on batching.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import (
    ExhaustedRedraws,
    MinDistanceViolation,
    NonSquareN,
    ShapeMismatch,
    WrongFeatureMode,
    ZeroDistance,
)

FEATURE_MODES = ("magnitude", "complex_split")

_REDRAW_CAP = 1000
_CHUNK = 256

# RNG stream ids (namespaced under the caller's seed)
_STREAM_SCENARIO = 0
_STREAM_USER = 1


@dataclass(frozen=True)
class Position2D:
    """A point in the plane, meters."""

    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=np.float64)


def _xy(p) -> np.ndarray:
    """Coerce a Position2D or length-2 array-like to a float64 pair."""
    if isinstance(p, Position2D):
        return p.as_array()
    a = np.asarray(p, dtype=np.float64)
    if a.shape != (2,):
        raise ShapeMismatch(f"expected a 2-D point, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Scatterer:
    """A point scatterer with a frozen phase shift and amplitude gain."""

    position: Position2D
    phase_shift: float  # radians in [0, 2*pi)
    amplitude_gain: float  # sqrt of the bistatic radar cross section, >= 0

    def __post_init__(self):
        if not 0.0 <= self.phase_shift < 2.0 * math.pi:
            raise ValueError(f"phase_shift {self.phase_shift} outside [0, 2*pi)")
        if self.amplitude_gain < 0.0:
            raise ValueError("amplitude_gain must be >= 0")


@dataclass(frozen=True)
class Scenario:
    """The frozen physical world: antennas, scatterers, region, constants.

    Channel evaluation assumes the homogeneous-gain model (a single gain for
    every scatterer); :func:`generate_scenario` always produces scatterers
    whose ``amplitude_gain`` equals ``gamma``.
    """

    rrh_positions: np.ndarray  # (N, 2)
    scatterers: tuple[Scatterer, ...]
    roi: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    wavelength: float = 0.125
    gamma: float = 3.0
    min_user_rrh_dist: float = 0.5
    seed: int = 0

    def __post_init__(self):
        rrh = np.ascontiguousarray(np.asarray(self.rrh_positions, dtype=np.float64))
        if rrh.ndim != 2 or rrh.shape[1] != 2 or rrh.shape[0] < 1:
            raise ShapeMismatch(f"rrh_positions must be (N, 2), got {rrh.shape}")
        if not np.all(np.isfinite(rrh)):
            raise ValueError("rrh_positions must be finite")
        object.__setattr__(self, "rrh_positions", rrh)
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.wavelength <= 0.0:
            raise ValueError("wavelength must be > 0")
        if self.gamma < 0.0:
            raise ValueError("gamma must be >= 0")
        xmin, xmax, ymin, ymax = self.roi
        if not (xmin < xmax and ymin < ymax):
            raise ValueError(f"degenerate roi {self.roi}")
        # all RRHs pairwise distinct
        d2 = np.sum((rrh[:, None, :] - rrh[None, :, :]) ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        if np.min(d2) <= 0.0:
            raise ValueError("rrh positions must be pairwise distinct")
        if self.scatterers:
            sxy = np.array([[s.position.x, s.position.y] for s in self.scatterers])
            dd = np.hypot(sxy[:, None, 0] - rrh[None, :, 0], sxy[:, None, 1] - rrh[None, :, 1])
            if np.min(dd) <= 0.0:
                raise ZeroDistance("a scatterer coincides with an antenna")

    @property
    def n(self) -> int:
        return self.rrh_positions.shape[0]

    @property
    def k(self) -> int:
        return len(self.scatterers)

    @cached_property
    def scatterer_xy(self) -> np.ndarray:  # (K, 2)
        if not self.scatterers:
            return np.zeros((0, 2))
        return np.array([[s.position.x, s.position.y] for s in self.scatterers])

    @cached_property
    def scatterer_phases(self) -> np.ndarray:  # (K,)
        return np.array([s.phase_shift for s in self.scatterers])


@dataclass(frozen=True)
class ChannelSample:
    """One user position paired with its complex channel vector."""

    user_position: Position2D
    channel: np.ndarray  # (N,) complex128

    def __post_init__(self):
        ch = np.asarray(self.channel, dtype=np.complex128)
        if ch.ndim != 1:
            raise ShapeMismatch("channel must be a vector")
        if not np.all(np.isfinite(ch.view(np.float64))):
            raise ValueError("channel entries must be finite")
        if np.any(ch == 0):
            raise ValueError("channel entries must be nonzero")
        object.__setattr__(self, "channel", ch)


@dataclass
class Dataset:
    """User positions paired with per-antenna channel features.

    Features are |h| per antenna in ``magnitude`` mode (width N) or
    interleaved (Re, Im) pairs in ``complex_split`` mode (width 2N).
    """

    positions: np.ndarray  # (R, 2)
    features: np.ndarray  # (R, N) or (R, 2N)
    feature_mode: str
    n: int
    scenario_ref: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.feature_mode not in FEATURE_MODES:
            raise WrongFeatureMode(f"unknown feature mode {self.feature_mode!r}")
        if self.positions.ndim != 2 or self.positions.shape[1] != 2:
            raise ShapeMismatch(f"positions must be (R, 2), got {self.positions.shape}")
        width = self.n if self.feature_mode == "magnitude" else 2 * self.n
        if self.features.shape != (self.positions.shape[0], width):
            raise ShapeMismatch(
                f"features must be ({self.positions.shape[0]}, {width}), got {self.features.shape}"
            )

    @property
    def r(self) -> int:
        return self.positions.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            positions=self.positions[idx],
            features=self.features[idx],
            feature_mode=self.feature_mode,
            n=self.n,
            scenario_ref=dict(self.scenario_ref),
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs for :func:`generate_scenario`.

    ``cluster_spreads`` are per-axis standard deviations by default; set
    ``spread_is_variance`` to interpret them as variances instead.
    """

    n: int = 16
    k: int = 100
    gamma: float = 3.0
    wavelength: float = 0.125
    roi: tuple[float, float, float, float] = (-50.0, 50.0, -50.0, 50.0)
    layout: str = "grid"  # "grid" | "circle"
    circle_diameter: float = 1.5
    circle_center: tuple[float, float] | None = None  # None: ROI center
    cluster_means: tuple[tuple[float, float], ...] = ((0.0, -60.0), (60.0, 0.0), (0.0, 60.0))
    cluster_spreads: tuple[tuple[float, float], ...] = ((100.0, 1.0), (1.0, 100.0), (100.0, 1.0))
    spread_is_variance: bool = False
    min_user_rrh_dist: float = 0.5
    min_scatter_rrh_dist: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.layout not in ("grid", "circle"):
            raise ValueError(f"unknown layout {self.layout!r}")
        if self.k > 0 and len(self.cluster_means) != len(self.cluster_spreads):
            raise ValueError("cluster means and spreads must have equal length")
        if self.k > 0 and not self.cluster_means:
            raise ValueError("scatterers requested but no clusters given")


def los_coefficient(a, b, wavelength: float) -> complex:
    """Free-space coefficient between two points: amplitude 1/(4*pi*d) scaled
    by the wavelength, phase 2*pi*d/wavelength."""
    if wavelength <= 0.0:
        raise ValueError("wavelength must be > 0")
    pa, pb = _xy(a), _xy(b)
    d = np.hypot(pa[0] - pb[0], pa[1] - pb[1])
    if d == 0.0:
        raise ZeroDistance("coincident endpoints in los_coefficient")
    return complex((wavelength / (4.0 * np.pi)) / d * np.exp(1j * (2.0 * np.pi / wavelength) * d))


def scatter_term(user, scatterer: Scatterer, rrh, wavelength: float) -> complex:
    """Single-bounce path term: inverse product of the two segment lengths,
    phase is the scatterer shift plus the total path length in radians."""
    if wavelength <= 0.0:
        raise ValueError("wavelength must be > 0")
    u, q = _xy(user), _xy(rrh)
    p = scatterer.position.as_array()
    d1 = np.hypot(u[0] - p[0], u[1] - p[1])
    d2 = np.hypot(p[0] - q[0], p[1] - q[1])
    if d1 == 0.0 or d2 == 0.0:
        raise ZeroDistance("zero-length segment in scatter_term")
    phase = scatterer.phase_shift + (2.0 * np.pi / wavelength) * (d1 + d2)
    return complex(1.0 / (d1 * d2) * np.exp(1j * phase))


def _channel_rows(users: np.ndarray, rrh_xy: np.ndarray, scat_xy: np.ndarray,
                  scat_phase: np.ndarray, wavelength: float, gamma: float) -> np.ndarray:
    """Channel coefficients for a batch of users against all antennas.

    ``users`` is (B, 2); returns (B, N) complex128.  The scatterer sum runs
    along the last, contiguous axis so its reduction order is identical for
    every batch split (bit-reproducible parallel generation relies on this).
    """
    users = np.asarray(users, dtype=np.float64)
    wave_num = 2.0 * np.pi / wavelength
    d_ur = np.hypot(users[:, None, 0] - rrh_xy[None, :, 0],
                    users[:, None, 1] - rrh_xy[None, :, 1])  # (B, N)
    if np.any(d_ur == 0.0):
        raise ZeroDistance("a user position coincides with an antenna")
    h = (wavelength / (4.0 * np.pi)) / d_ur * np.exp(1j * wave_num * d_ur)
    if scat_xy.shape[0] == 0:
        return h
    d_us = np.hypot(users[:, None, 0] - scat_xy[None, :, 0],
                    users[:, None, 1] - scat_xy[None, :, 1])  # (B, K)
    d_sr = np.hypot(scat_xy[:, None, 0] - rrh_xy[None, :, 0],
                    scat_xy[:, None, 1] - rrh_xy[None, :, 1])  # (K, N)
    if np.any(d_us == 0.0) or np.any(d_sr == 0.0):
        raise ZeroDistance("zero-length scattering segment")
    d_us_b = np.ascontiguousarray(d_us[:, None, :])  # (B, 1, K)
    d_sr_b = np.ascontiguousarray(d_sr.T[None, :, :])  # (1, N, K)
    amp = 1.0 / (d_us_b * d_sr_b)  # (B, N, K)
    phase = scat_phase[None, None, :] + wave_num * (d_us_b + d_sr_b)
    bounce = (amp * np.exp(1j * phase)).sum(axis=-1)  # (B, N)
    return h + (wavelength * gamma / (4.0 * np.pi) ** 1.5) * bounce


def channel_coefficient(user, rrh, scenario: Scenario) -> complex:
    """Channel between one user position and one antenna under `scenario`."""
    u = _xy(user)[None, :]
    q = _xy(rrh)[None, :]
    h = _channel_rows(u, q, scenario.scatterer_xy, scenario.scatterer_phases,
                      scenario.wavelength, scenario.gamma)
    return complex(h[0, 0])


def channel_rows(users, scenario: Scenario) -> np.ndarray:
    """Batched channel evaluation: (B, 2) user positions to (B, N) channels.

    No minimum-distance policy is applied here beyond strictly positive
    distances; see :func:`channel_vector` for the user-facing contract.
    """
    u = np.asarray(users, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != 2:
        raise ShapeMismatch(f"users must be (B, 2), got {u.shape}")
    return _channel_rows(u, scenario.rrh_positions, scenario.scatterer_xy,
                         scenario.scatterer_phases, scenario.wavelength, scenario.gamma)


def channel_vector(user, scenario: Scenario) -> ChannelSample:
    """Channel vector over all antennas, in antenna index order.

    Raises MinDistanceViolation when the user is within the scenario's
    minimum user-antenna distance of any antenna.
    """
    u = _xy(user)
    d = np.hypot(u[0] - scenario.rrh_positions[:, 0], u[1] - scenario.rrh_positions[:, 1])
    if np.any(d <= scenario.min_user_rrh_dist):
        raise MinDistanceViolation(
            f"user at ({u[0]:.3f}, {u[1]:.3f}) is within "
            f"{scenario.min_user_rrh_dist} m of an antenna"
        )
    h = _channel_rows(u[None, :], scenario.rrh_positions, scenario.scatterer_xy,
                      scenario.scatterer_phases, scenario.wavelength, scenario.gamma)
    return ChannelSample(user_position=Position2D(float(u[0]), float(u[1])), channel=h[0])


def place_circular_array(center, diameter: float, n: int) -> np.ndarray:
    """N positions equally spaced on a circle, counter-clockwise from angle 0."""
    if diameter <= 0.0:
        raise ValueError("diameter must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    c = _xy(center)
    angles = 2.0 * np.pi * np.arange(n) / n
    return np.stack([c[0] + 0.5 * diameter * np.cos(angles),
                     c[1] + 0.5 * diameter * np.sin(angles)], axis=1)


def grid_positions(roi: tuple[float, float, float, float], n: int) -> np.ndarray:
    """A uniform sqrt(N) x sqrt(N) grid spanning the region, row-major in y."""
    side = math.isqrt(n)
    if side * side != n:
        raise NonSquareN(f"grid layout needs a square antenna count, got {n}")
    xmin, xmax, ymin, ymax = roi
    xs = np.linspace(xmin, xmax, side)
    ys = np.linspace(ymin, ymax, side)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Build the frozen world: antenna layout plus clustered scatterers.

    Scatterers are assigned to clusters round-robin and drawn from per-axis
    Gaussians; draws landing within ``min_scatter_rrh_dist`` of an antenna
    are rejected and redrawn (hard error after the redraw cap).  Phases are
    uniform on [0, 2*pi) and frozen for the scenario's lifetime.
    """
    if config.layout == "grid":
        rrh = grid_positions(config.roi, config.n)
    else:
        center = config.circle_center
        if center is None:
            xmin, xmax, ymin, ymax = config.roi
            center = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax))
        rrh = place_circular_array(center, config.circle_diameter, config.n)

    rng = np.random.default_rng([seed, _STREAM_SCENARIO])
    scatterers = []
    if config.k > 0:
        means = np.asarray(config.cluster_means, dtype=np.float64)
        spreads = np.asarray(config.cluster_spreads, dtype=np.float64)
        stds = np.sqrt(spreads) if config.spread_is_variance else spreads
        for j in range(config.k):
            c = j % means.shape[0]
            for _ in range(_REDRAW_CAP):
                pos = rng.normal(means[c], stds[c])
                dist = np.hypot(pos[0] - rrh[:, 0], pos[1] - rrh[:, 1])
                if np.min(dist) > config.min_scatter_rrh_dist:
                    break
            else:
                raise ExhaustedRedraws(
                    f"scatterer {j} rejected {_REDRAW_CAP} times "
                    f"(cluster {c}, min dist {config.min_scatter_rrh_dist})"
                )
            phase = rng.uniform(0.0, 2.0 * np.pi)
            scatterers.append(
                Scatterer(Position2D(float(pos[0]), float(pos[1])), float(phase), config.gamma)
            )
    return Scenario(
        rrh_positions=rrh,
        scatterers=tuple(scatterers),
        roi=config.roi,
        wavelength=config.wavelength,
        gamma=config.gamma,
        min_user_rrh_dist=config.min_user_rrh_dist,
        seed=seed,
    )


def features_from_channels(channels: np.ndarray, feature_mode: str) -> np.ndarray:
    """Turn (B, N) complex channels into the dataset feature layout."""
    channels = np.asarray(channels, dtype=np.complex128)
    if feature_mode == "magnitude":
        return np.abs(channels)
    if feature_mode == "complex_split":
        out = np.empty((channels.shape[0], 2 * channels.shape[1]))
        out[:, 0::2] = channels.real
        out[:, 1::2] = channels.imag
        return out
    raise WrongFeatureMode(f"unknown feature mode {feature_mode!r}")


def _user_position(scenario: Scenario, seed: int, index: int) -> tuple[float, float]:
    """Draw one user position from its own (seed, index) RNG stream."""
    rng = np.random.default_rng([seed, _STREAM_USER, index])
    xmin, xmax, ymin, ymax = scenario.roi
    rrh = scenario.rrh_positions
    for _ in range(_REDRAW_CAP):
        x = rng.uniform(xmin, xmax)
        y = rng.uniform(ymin, ymax)
        if np.min(np.hypot(x - rrh[:, 0], y - rrh[:, 1])) > scenario.min_user_rrh_dist:
            return x, y
    raise ExhaustedRedraws(f"user sample {index} rejected {_REDRAW_CAP} times")


def _generate_range(scenario: Scenario, lo: int, hi: int, feature_mode: str,
                    seed: int) -> tuple[np.ndarray, np.ndarray]:
    positions = np.array([_user_position(scenario, seed, i) for i in range(lo, hi)],
                         dtype=np.float64).reshape(hi - lo, 2)
    width = scenario.n if feature_mode == "magnitude" else 2 * scenario.n
    features = np.empty((hi - lo, width))
    for start in range(0, hi - lo, _CHUNK):
        stop = min(start + _CHUNK, hi - lo)
        h = _channel_rows(positions[start:stop], scenario.rrh_positions,
                          scenario.scatterer_xy, scenario.scatterer_phases,
                          scenario.wavelength, scenario.gamma)
        features[start:stop] = features_from_channels(h, feature_mode)
    return positions, features


def generate_dataset(scenario: Scenario, r: int, feature_mode: str, seed: int,
                     workers: int = 1) -> Dataset:
    """Sample R user positions uniformly over the region and featurize them.

    Positions are rejection-resampled until they clear the scenario's minimum
    user-antenna distance.  Each sample index owns its RNG stream, so any
    worker count produces bit-identical output.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if feature_mode not in FEATURE_MODES:
        raise WrongFeatureMode(f"unknown feature mode {feature_mode!r}")
    if workers <= 1:
        positions, features = _generate_range(scenario, 0, r, feature_mode, seed)
    else:
        bounds = np.linspace(0, r, workers + 1).astype(int)
        jobs = [(scenario, int(lo), int(hi), feature_mode, seed)
                for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_generate_range_star, jobs))
        positions = np.concatenate([p for p, _ in parts], axis=0)
        features = np.concatenate([f for _, f in parts], axis=0)
    ref = {
        "seed": str(scenario.seed),
        "wavelength": repr(scenario.wavelength),
        "gamma": repr(scenario.gamma),
        "roi": ",".join(repr(v) for v in scenario.roi),
        "n": str(scenario.n),
        "k": str(scenario.k),
        "dataset_seed": str(seed),
    }
    return Dataset(positions=positions, features=features, feature_mode=feature_mode,
                   n=scenario.n, scenario_ref=ref)


def _generate_range_star(args):
    return _generate_range(*args)
