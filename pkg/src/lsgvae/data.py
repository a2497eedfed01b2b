"""Dataset ingestion, chronological splits, windows, patching and synthetic series.

Random numbers come from numpy's ``Philox`` bit generator (a 64-bit
counter-based generator, 4x64 rounds) wrapped in ``numpy.random.Generator``;
standard normals use numpy's ziggurat sampler.  Independent streams are derived
from an integer seed plus integer keys through ``numpy.random.SeedSequence``,
so the stream for, say, (seed=7, "shuffle") is fixed across runs and platforms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, FormatError, IngestionError

STREAM_KEYS = {"init": 0, "shuffle": 1, "noise": 2, "eval": 3, "data": 4}


# ---------------------------------------------------------------------------
# random streams


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Philox-backed generator for the stream identified by ``(seed, *keys)``."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        words.append(STREAM_KEYS[k] if isinstance(k, str) else int(k))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def rng_normal(stream: np.random.Generator | int, shape) -> np.ndarray:
    """I.i.d. standard normals drawn from ``stream`` (a generator or a seed)."""
    if not isinstance(stream, np.random.Generator):
        stream = make_rng(stream)
    return stream.standard_normal(shape)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    """A multivariate series ``values[t, c]``.

    ``offset`` is the index of row 0 in the series this one was cut from, so
    split segments can be mapped back onto ground-truth traces.
    """

    values: np.ndarray
    channel_names: tuple[str, ...]
    frequency_label: str = ""
    offset: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise FormatError(f"dataset values must be 2-D, got shape {v.shape}")
        if np.isnan(v).any():
            raise IngestionError("dataset contains NaN entries")
        if len(self.channel_names) != v.shape[1]:
            raise FormatError(
                f"{len(self.channel_names)} channel names for {v.shape[1]} columns")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def segment(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.values[start:stop], self.channel_names,
                       self.frequency_label, self.offset + start)

    def with_values(self, values: np.ndarray) -> "Dataset":
        return Dataset(values, self.channel_names, self.frequency_label, self.offset)


def load_csv(path, *, skip_first: bool | None = None,
             frequency_label: str = "") -> Dataset:
    """Read a header-first CSV of numeric channels.

    The first column is dropped when it is named ``date`` (any case) or when
    ``skip_first`` is true; pass ``skip_first=False`` to keep it regardless.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if skip_first is None:
            skip_first = bool(header) and header[0].lower() == "date"
        start = 1 if skip_first else 0
        names = header[start:]
        if not names:
            raise FormatError(f"{path}: no data columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}")
            parsed = []
            for col, cell in enumerate(row[start:], start=start):
                try:
                    value = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: cannot parse {cell!r} at line {lineno}, "
                        f"column {col + 1} ({header[col]!r})") from None
                if math.isnan(value):
                    raise IngestionError(
                        f"{path}: NaN at line {lineno}, column {col + 1} ({header[col]!r})")
                parsed.append(value)
            rows.append(parsed)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return Dataset(values, tuple(names), frequency_label)


def chrono_split(ds: Dataset, ratios: Sequence[float] = (0.7, 0.1, 0.2),
                 min_length: int = 1) -> tuple[Dataset, Dataset, Dataset]:
    """Cut ``ds`` into contiguous train/val/test segments, earliest first.

    Boundaries sit at ``floor(T * cumulative_ratio)``.  Every segment must hold
    at least ``min_length`` rows (pass ``L + H`` to guarantee one window).
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigurationError(f"split ratios must be three positive numbers, got {ratios}")
    if abs(math.fsum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {math.fsum(ratios)}")
    T = ds.length
    # the epsilon absorbs representation error such as 0.7 + 0.1 < 0.8
    b1 = math.floor(T * ratios[0] + 1e-9)
    b2 = math.floor(T * (ratios[0] + ratios[1]) + 1e-9)
    parts = (ds.segment(0, b1), ds.segment(b1, b2), ds.segment(b2, T))
    for name, part in zip(("train", "val", "test"), parts):
        if part.length < max(min_length, 1):
            raise ConfigurationError(
                f"{name} segment has {part.length} rows, needs at least {max(min_length, 1)}")
    return parts


@dataclass(frozen=True)
class Scaler:
    """Per-channel standardization fitted on the training segment."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> "Scaler":
        std = ds.values.std(axis=0)
        return cls(ds.values.mean(axis=0), np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, channels: int) -> "Scaler":
        return cls(np.zeros(channels), np.ones(channels))

    def transform(self, ds: Dataset) -> Dataset:
        return ds.with_values((ds.values - self.mean) / self.std)

    def inverse_location(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def inverse_scale(self, s: np.ndarray) -> np.ndarray:
        return s * self.std


# ---------------------------------------------------------------------------
# windows and patches


@dataclass(frozen=True)
class SeriesWindow:
    lookback: np.ndarray
    horizon: np.ndarray
    origin_index: int


def window_count(T: int, L: int, H: int, stride: int = 1) -> int:
    if min(L, H, stride) < 1:
        raise ContractError("L, H and stride must all be at least 1")
    return 0 if T < L + H else (T - L - H) // stride + 1


def windows(ds: Dataset, L: int, H: int, stride: int = 1) -> list[SeriesWindow]:
    """Adjacent (look-back, horizon) pairs starting at 0, stride, 2*stride, ..."""
    n = window_count(ds.length, L, H, stride)
    v = ds.values
    return [SeriesWindow(v[o:o + L], v[o + L:o + L + H], o)
            for o in range(0, n * stride, stride)]


def window_arrays(ds: Dataset, L: int, H: int, stride: int = 1):
    """Stacked windows as ``(lookbacks[n, L, C], horizons[n, H, C], origins[n])``."""
    n = window_count(ds.length, L, H, stride)
    origins = np.arange(n) * stride
    if n == 0:
        C = ds.channels
        return np.zeros((0, L, C)), np.zeros((0, H, C)), origins
    view = np.lib.stride_tricks.sliding_window_view(ds.values, L + H, axis=0)
    block = np.ascontiguousarray(view[origins].transpose(0, 2, 1))
    return block[:, :L], block[:, L:], origins


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping patches ``patches[n, p, c]`` of a left-padded look-back."""

    patches: np.ndarray
    patch_length: int
    count: int
    pad: int = 0


def padded_length(L: int, P: int) -> int:
    return -(-L // P) * P


def left_pad(x: np.ndarray, target: int, axis: int = 0) -> np.ndarray:
    """Repeat the first entry along ``axis`` until the axis has ``target`` entries."""
    pad = target - x.shape[axis]
    if pad <= 0:
        return x
    first = np.take(x, [0], axis=axis)
    reps = [1] * x.ndim
    reps[axis] = pad
    return np.concatenate([np.tile(first, reps), x], axis=axis)


def patch(lookback: np.ndarray, P: int) -> PatchGrid:
    if P < 1:
        raise ContractError("patch length must be at least 1")
    x = np.asarray(lookback, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    L, C = x.shape
    Lp = padded_length(L, P)
    xp = left_pad(x, Lp)
    return PatchGrid(xp.reshape(Lp // P, P, C), P, Lp // P, Lp - L)


def unpatch(grid: PatchGrid) -> np.ndarray:
    N, P, C = grid.patches.shape
    return grid.patches.reshape(N * P, C)[grid.pad:]


# ---------------------------------------------------------------------------
# synthetic heteroscedastic series


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "periodic"
    length: int = 4000
    dt: float = 0.1
    seed: int = 0
    regime_len: int = 100

    def __post_init__(self):
        if self.kind not in ("regime", "periodic"):
            raise ConfigurationError(f"unknown synthetic kind {self.kind!r}")
        if self.length <= 0 or self.dt <= 0 or self.regime_len <= 0:
            raise ConfigurationError("length, dt and regime_len must be positive")


def volatility_profile(spec: SyntheticSpec) -> np.ndarray:
    i = np.arange(spec.length)
    if spec.kind == "regime":
        return np.where((i // spec.regime_len) % 2 == 0, 0.1, 1.0)
    return 0.5 + 0.4 * np.cos(i * spec.dt)


def gen_synthetic(spec: SyntheticSpec) -> tuple[Dataset, np.ndarray]:
    """Draw ``y_i = sin(i*dt) + sigma_i * eps_i``; returns the series and sigma."""
    t = np.arange(spec.length) * spec.dt
    sigma = volatility_profile(spec)
    eps = rng_normal(make_rng(spec.seed, "data"), spec.length)
    y = np.sin(t) + sigma * eps
    return Dataset(y[:, None], ("value",), f"dt={spec.dt:g}"), sigma


def write_synthetic(ds: Dataset, sigma: np.ndarray, out_dir) -> tuple[Path, Path]:
    """Write ``series.csv`` (index, value) and ``sigma_true.csv`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series_path = out_dir / "series.csv"
    sigma_path = out_dir / "sigma_true.csv"
    with series_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "value"])
        for i, v in enumerate(ds.values[:, 0]):
            w.writerow([i, repr(float(v))])
    with sigma_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sigma_true"])
        for s in sigma:
            w.writerow([repr(float(s))])
    return series_path, sigma_path


def read_sigma_true(path) -> np.ndarray:
    ds = load_csv(path, skip_first=False)
    return ds.values[:, 0].copy()
