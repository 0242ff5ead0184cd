"""On-disk formats: datasets, models, selections, histories.

Dataset file (little-endian throughout)::

    magic "DASL" | version u32=1 | N u32 | R u32 | feature_mode u8 | pad u8*3
    R records of [x f64, y f64, features f64 * (N or 2N)]

feature_mode: 0 = magnitude, 1 = complex_split.  A human-readable key=value
sidecar (same stem, ``.meta``) carries the scenario: seed, wavelength, gamma,
region, antenna positions, the full scatterer table, cluster parameters, and
the generator version — enough to rebuild the Scenario value exactly.

Model file::

    magic "DASM" | version u32=1 | kind u8 | feature_mode u8 | pad u8*2
    n_layers u32
    per layer: fan_in u32 | fan_out u32 | activation u8 | pad u8*3 | dropout f64
    per layer: weights f64 (row-major fan_in x fan_out) | biases f64
    scaler: dim u32 | mean f64*dim | std f64*dim | constant flags u8*dim
    target scaling: lo f64*2 | hi f64*2
    kind 0 (selection stage): M u32 | N u32 | logits f64 M*N |
                              tau_start f64 | tau_end f64 | total_epochs u32
    kind 1 (localization stage): M u32 | indices u32*M | mc_passes u32

All floats are IEEE f64; writers are byte-deterministic for equal inputs.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .channels import Dataset, Position2D, Scatterer, Scenario
from .errors import FileFormatError
from .nn import ACTIVATIONS, FeatureScaler, MlpParams, TargetScaler
from .selection import SelectorParams, TemperatureSchedule
from .training import EpochRecord, TrainedLud, TrainedRsd

DATASET_MAGIC = b"DASL"
MODEL_MAGIC = b"DASM"
FORMAT_VERSION = 1

_MODE_TO_CODE = {"magnitude": 0, "complex_split": 1}
_CODE_TO_MODE = {v: k for k, v in _MODE_TO_CODE.items()}
_KIND_TO_CODE = {"rsd": 0, "lud": 1}
_CODE_TO_KIND = {v: k for k, v in _KIND_TO_CODE.items()}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# dataset binary

def write_dataset(path, dataset: Dataset) -> None:
    header = struct.pack("<4sIIIB3x", DATASET_MAGIC, FORMAT_VERSION, dataset.n,
                         dataset.r, _MODE_TO_CODE[dataset.feature_mode])
    records = np.hstack([dataset.positions, dataset.features]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    head_size = struct.calcsize("<4sIIIB3x")
    if len(raw) < head_size:
        raise FileFormatError(f"{path}: truncated header")
    magic, version, n, r, mode_code = struct.unpack_from("<4sIIIB", raw)
    if magic != DATASET_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    if mode_code not in _CODE_TO_MODE:
        raise FileFormatError(f"{path}: unknown feature mode code {mode_code}")
    mode = _CODE_TO_MODE[mode_code]
    width = n if mode == "magnitude" else 2 * n
    expected = head_size + r * (2 + width) * 8
    if len(raw) != expected:
        raise FileFormatError(f"{path}: size {len(raw)} != expected {expected}")
    records = np.frombuffer(raw, dtype="<f8", offset=head_size).reshape(r, 2 + width)
    records = records.astype(np.float64)  # own, writable copy
    return Dataset(positions=records[:, :2], features=records[:, 2:],
                   feature_mode=mode, n=n, scenario_ref={"path": str(path)})


# ---------------------------------------------------------------------------
# scenario sidecar

def sidecar_path(dataset_path) -> Path:
    return Path(dataset_path).with_suffix(".meta")


def write_sidecar(path, scenario: Scenario, extra: dict | None = None) -> None:
    lines = [
        f"generator_version = {__version__}",
        f"seed = {scenario.seed}",
        f"wavelength = {scenario.wavelength!r}",
        f"gamma = {scenario.gamma!r}",
        "roi = " + ",".join(repr(v) for v in scenario.roi),
        f"n = {scenario.n}",
        f"k = {scenario.k}",
        f"min_user_rrh_dist = {scenario.min_user_rrh_dist!r}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    for i, (x, y) in enumerate(scenario.rrh_positions):
        lines.append(f"rrh.{i} = {float(x)!r} {float(y)!r}")
    for j, s in enumerate(scenario.scatterers):
        lines.append(
            f"scatterer.{j} = {s.position.x!r} {s.position.y!r} "
            f"{s.phase_shift!r} {s.amplitude_gain!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_sidecar(path) -> tuple[Scenario, dict]:
    """Rebuild the Scenario from a sidecar; extra keys come back in the dict."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FileFormatError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    try:
        n = int(entries["n"])
        k = int(entries["k"])
        roi = tuple(float(v) for v in entries["roi"].split(","))
        rrh = np.array([[float(v) for v in entries[f"rrh.{i}"].split()] for i in range(n)])
        scatterers = []
        for j in range(k):
            x, y, phase, gain = (float(v) for v in entries[f"scatterer.{j}"].split())
            scatterers.append(Scatterer(Position2D(x, y), phase, gain))
        scenario = Scenario(
            rrh_positions=rrh,
            scatterers=tuple(scatterers),
            roi=roi,  # type: ignore[arg-type]
            wavelength=float(entries["wavelength"]),
            gamma=float(entries["gamma"]),
            min_user_rrh_dist=float(entries["min_user_rrh_dist"]),
            seed=int(entries["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise FileFormatError(f"{path}: invalid sidecar ({exc})") from exc
    known = {"generator_version", "seed", "wavelength", "gamma", "roi", "n", "k",
             "min_user_rrh_dist"}
    extra = {key: val for key, val in entries.items()
             if key not in known and not key.startswith(("rrh.", "scatterer."))}
    return scenario, extra


# ---------------------------------------------------------------------------
# model binary

def _pack_trunk(trunk: MlpParams) -> bytes:
    parts = [struct.pack("<I", trunk.n_layers)]
    for w, b, act, rate in zip(trunk.weights, trunk.biases, trunk.activations,
                               trunk.dropout_rates):
        parts.append(struct.pack("<IIB3xd", w.shape[0], w.shape[1],
                                 ACTIVATIONS.index(act), rate))
    for w, b in zip(trunk.weights, trunk.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    return b"".join(parts)


def _pack_scalers(scaler: FeatureScaler, target: TargetScaler) -> bytes:
    dim = scaler.mean.size
    return b"".join([
        struct.pack("<I", dim),
        scaler.mean.astype("<f8").tobytes(),
        scaler.std.astype("<f8").tobytes(),
        scaler.constant_dims.astype(np.uint8).tobytes(),
        target.lo.astype("<f8").tobytes(),
        target.hi.astype("<f8").tobytes(),
    ])


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.ofs = 0
        self.path = path

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.ofs + size > len(self.raw):
            raise FileFormatError(f"{self.path}: truncated at offset {self.ofs}")
        values = struct.unpack_from(fmt, self.raw, self.ofs)
        self.ofs += size
        return values

    def floats(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.ofs + size > len(self.raw):
            raise FileFormatError(f"{self.path}: truncated float block at {self.ofs}")
        a = np.frombuffer(self.raw, dtype="<f8", count=count, offset=self.ofs)
        self.ofs += size
        return a.astype(np.float64)

    def bytes_(self, count: int) -> bytes:
        if self.ofs + count > len(self.raw):
            raise FileFormatError(f"{self.path}: truncated byte block at {self.ofs}")
        out = self.raw[self.ofs:self.ofs + count]
        self.ofs += count
        return out

    def done(self):
        if self.ofs != len(self.raw):
            raise FileFormatError(
                f"{self.path}: {len(self.raw) - self.ofs} trailing bytes"
            )


def _read_trunk(rd: _Reader) -> MlpParams:
    (n_layers,) = rd.unpack("<I")
    if n_layers < 1 or n_layers > 1000:
        raise FileFormatError(f"{rd.path}: implausible layer count {n_layers}")
    shapes, acts, rates = [], [], []
    for _ in range(n_layers):
        fi, fo, act_code, rate = rd.unpack("<IIB3xd")
        if act_code >= len(ACTIVATIONS):
            raise FileFormatError(f"{rd.path}: unknown activation code {act_code}")
        shapes.append((fi, fo))
        acts.append(ACTIVATIONS[act_code])
        rates.append(rate)
    weights, biases = [], []
    for fi, fo in shapes:
        weights.append(rd.floats(fi * fo).reshape(fi, fo))
        biases.append(rd.floats(fo))
    return MlpParams(weights=weights, biases=biases, activations=acts, dropout_rates=rates)


def _read_scalers(rd: _Reader) -> tuple[FeatureScaler, TargetScaler]:
    (dim,) = rd.unpack("<I")
    mean = rd.floats(dim)
    std = rd.floats(dim)
    const = np.frombuffer(rd.bytes_(dim), dtype=np.uint8).astype(bool)
    lo = rd.floats(2)
    hi = rd.floats(2)
    return (FeatureScaler(mean=mean, std=std, constant_dims=const),
            TargetScaler(lo=lo, hi=hi))


def write_model(path, model: TrainedRsd | TrainedLud,
                schedule: TemperatureSchedule | None = None) -> None:
    """Serialize a trained stage.  Selection-stage models embed the logits and
    their annealing constants (pass the schedule used for training)."""
    if isinstance(model, TrainedRsd):
        kind = "rsd"
        feature_mode = "magnitude"
        if schedule is None:
            raise ValueError("selection-stage models need their temperature schedule")
    elif isinstance(model, TrainedLud):
        kind = "lud"
        feature_mode = model.feature_mode
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    parts = [
        struct.pack("<4sIBB2x", MODEL_MAGIC, FORMAT_VERSION,
                    _KIND_TO_CODE[kind], _MODE_TO_CODE[feature_mode]),
        _pack_trunk(model.trunk),
        _pack_scalers(model.scaler, model.target_scaler),
    ]
    if isinstance(model, TrainedRsd):
        logits = model.selector.logits
        parts.append(struct.pack("<II", logits.shape[0], logits.shape[1]))
        parts.append(np.ascontiguousarray(logits, dtype="<f8").tobytes())
        parts.append(struct.pack("<ddI", schedule.tau_start, schedule.tau_end,
                                 schedule.total_epochs))
    else:
        idx = model.selected_indices
        parts.append(struct.pack("<I", idx.size))
        parts.append(idx.astype("<u4").tobytes())
        parts.append(struct.pack("<I", model.mc_passes))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_model(path) -> tuple[TrainedRsd | TrainedLud, TemperatureSchedule | None]:
    rd = _Reader(Path(path).read_bytes(), path)
    magic, version, kind_code, mode_code = rd.unpack("<4sIBB2x")
    if magic != MODEL_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    if kind_code not in _CODE_TO_KIND or mode_code not in _CODE_TO_MODE:
        raise FileFormatError(f"{path}: unknown kind/mode codes {kind_code}/{mode_code}")
    trunk = _read_trunk(rd)
    scaler, target = _read_scalers(rd)
    if _CODE_TO_KIND[kind_code] == "rsd":
        m, n = rd.unpack("<II")
        logits = rd.floats(m * n).reshape(m, n)
        tau_start, tau_end, total_epochs = rd.unpack("<ddI")
        rd.done()
        model = TrainedRsd(selector=SelectorParams(logits=logits), trunk=trunk,
                           scaler=scaler, target_scaler=target)
        return model, TemperatureSchedule(tau_start, tau_end, total_epochs)
    (m,) = rd.unpack("<I")
    indices = np.frombuffer(rd.bytes_(4 * m), dtype="<u4").astype(np.intp)
    (mc_passes,) = rd.unpack("<I")
    rd.done()
    model = TrainedLud(trunk=trunk, scaler=scaler, target_scaler=target,
                       selected_indices=indices,
                       feature_mode=_CODE_TO_MODE[mode_code], mc_passes=mc_passes)
    return model, None


# ---------------------------------------------------------------------------
# small text formats

def write_indices(path, indices) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in np.asarray(indices).ravel()))


def read_indices(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    try:
        return np.array([int(ln) for ln in lines], dtype=np.intp)
    except ValueError as exc:
        raise FileFormatError(f"{path}: non-integer selection entry ({exc})") from exc


def write_history_csv(path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "tau"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss), repr(rec.tau)])
