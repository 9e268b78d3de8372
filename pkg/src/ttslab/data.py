"""Signal sets: simulation, on-disk container, and preprocessing.

A ``SignalSet`` holds ``values`` of shape ``(N, C, 1, W)``: time series are
treated as images of height one. On disk a set is a raw little-endian
float32 blob (``<name>.f32``) next to a JSON sidecar (``<name>.json``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, LoadError, NormalizationError, UsageError

DEFAULT_NAME = "signals"
_LE_F32 = np.dtype("<f4")


@dataclass(eq=False)
class SignalSet:
    values: np.ndarray
    labels: Optional[np.ndarray] = None
    class_names: Optional[list[str]] = None
    sampling_rate_hz: Optional[float] = None
    channel_names: Optional[list[str]] = None
    norm_stats: Optional[dict] = None

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.validate()

    def validate(self) -> None:
        v = self.values
        if v.ndim != 4 or v.shape[2] != 1:
            raise UsageError(f"values must have shape (N, C, 1, W), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise UsageError("values contain NaN or Inf")
        if self.labels is not None:
            if len(self.labels) != v.shape[0]:
                raise UsageError(
                    f"labels has length {len(self.labels)} but there are {v.shape[0]} samples"
                )
            k = self.num_classes
            if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= k):
                raise UsageError(f"label out of range [0, {k})")
        if self.channel_names is not None and len(self.channel_names) != v.shape[1]:
            raise UsageError("channel_names length does not match channel count")
        if self.sampling_rate_hz is not None and not self.sampling_rate_hz > 0:
            raise UsageError("sampling_rate_hz must be positive")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SignalSet):
            return NotImplemented
        if self.values.shape != other.values.shape or not np.array_equal(self.values, other.values):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        return (
            self.class_names == other.class_names
            and self.sampling_rate_hz == other.sampling_rate_hz
            and self.channel_names == other.channel_names
            and self.norm_stats == other.norm_stats
        )

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[3]

    @property
    def num_classes(self) -> int:
        if self.class_names is not None:
            return len(self.class_names)
        if self.labels is None:
            return 0
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def subset(self, index) -> "SignalSet":
        index = np.asarray(index)
        return replace(
            self,
            values=self.values[index],
            labels=None if self.labels is None else self.labels[index],
        )

    def channel(self, c: int) -> np.ndarray:
        """Values of one channel as an ``(N, W)`` array."""
        return self.values[:, c, 0, :]


def concat(sets: Sequence[SignalSet]) -> SignalSet:
    """Stack sample-wise; metadata is taken from the first set."""
    if not sets:
        raise UsageError("nothing to concatenate")
    first = sets[0]
    labelled = [s.labels is not None for s in sets]
    if any(labelled) and not all(labelled):
        raise UsageError("cannot concatenate labelled and unlabelled sets")
    labels = np.concatenate([s.labels for s in sets]) if all(labelled) else None
    class_names = next((s.class_names for s in sets if s.class_names is not None), None)
    return SignalSet(
        values=np.concatenate([s.values for s in sets], axis=0),
        labels=labels,
        class_names=class_names,
        sampling_rate_hz=first.sampling_rate_hz,
        channel_names=first.channel_names,
        norm_stats=first.norm_stats,
    )


# --------------------------------------------------------------------------
# Simulation


@dataclass
class SineParams:
    n_samples: int
    length_w: int = 24
    channels: int = 5
    freq_range: tuple[float, float] = (0.0, 0.1)
    phase_range: tuple[float, float] = (0.0, 0.1)
    seed: int = 0

    def validate(self) -> None:
        if self.n_samples < 0 or self.length_w < 1 or self.channels < 1:
            raise ConfigError("n_samples must be >= 0, length_w and channels >= 1")
        for name in ("freq_range", "phase_range"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ConfigError(f"{name} must be a finite interval with low < high, got {(lo, hi)}")


def simulate_sine(params: SineParams) -> SignalSet:
    """Independent sinusoids ``sin(A t + B)`` per sample and channel.

    ``t`` runs over the integer steps ``0..W-1``; ``A`` and ``B`` are drawn
    uniformly from ``freq_range`` and ``phase_range``.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    shape = (params.n_samples, params.channels, 1, 1)
    freq = rng.uniform(*params.freq_range, size=shape)
    phase = rng.uniform(*params.phase_range, size=shape)
    t = np.arange(params.length_w, dtype=np.float64)
    return SignalSet(values=np.sin(freq * t + phase))


def simulate_class_sines(
    n_per_class: int,
    bands: Sequence[tuple[float, float]],
    length_w: int = 48,
    channels: int = 1,
    amp_range: tuple[float, float] = (0.8, 1.2),
    noise_std: float = 0.0,
    seed: int = 0,
) -> SignalSet:
    """Labelled toy set: class ``k`` holds sinusoids whose frequency, in
    cycles per sample, is drawn uniformly from ``bands[k]``.

    Phases are uniform on ``[0, 2*pi)``; optional white noise is added.
    Samples are ordered class by class.
    """
    if n_per_class < 0 or not bands:
        raise ConfigError("need n_per_class >= 0 and at least one band")
    for lo, hi in bands:
        if not (0 <= lo < hi <= 0.5):
            raise ConfigError(f"band {(lo, hi)} must satisfy 0 <= low < high <= 0.5")
    rng = np.random.default_rng(seed)
    t = np.arange(length_w, dtype=np.float64)
    blocks, labels = [], []
    for k, (lo, hi) in enumerate(bands):
        shape = (n_per_class, channels, 1, 1)
        f = rng.uniform(lo, hi, size=shape)
        phi = rng.uniform(0.0, 2 * np.pi, size=shape)
        amp = rng.uniform(*amp_range, size=shape)
        x = amp * np.sin(2 * np.pi * f * t + phi)
        if noise_std > 0:
            x = x + rng.normal(0.0, noise_std, size=x.shape)
        blocks.append(x)
        labels.append(np.full(n_per_class, k))
    return SignalSet(
        values=np.concatenate(blocks),
        labels=np.concatenate(labels),
        class_names=[f"band{k}" for k in range(len(bands))],
    )


# --------------------------------------------------------------------------
# Container format


def _resolve(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.is_dir() or str(path).endswith("/"):
        p = p / DEFAULT_NAME
    elif p.suffix in (".json", ".f32"):
        p = p.with_suffix("")
    return p.with_suffix(".f32"), p.with_suffix(".json")


def save_signal_set(s: SignalSet, path) -> Path:
    """Write ``s``; ``path`` may be a directory (``signals.*`` inside it) or a base name.

    Returns the sidecar path.
    """
    p = Path(path)
    if str(path).endswith("/") or p.is_dir():
        p.mkdir(parents=True, exist_ok=True)
    blob, sidecar = _resolve(p)
    blob.parent.mkdir(parents=True, exist_ok=True)
    n, c, _, w = s.values.shape
    blob.write_bytes(s.values.astype(_LE_F32, copy=False).tobytes(order="C"))
    meta = {
        "n": n,
        "c": c,
        "w": w,
        "k": s.num_classes if s.labels is not None or s.class_names else 0,
        "labels": None if s.labels is None else [int(v) for v in s.labels],
        "class_names": s.class_names,
        "sampling_rate_hz": s.sampling_rate_hz,
        "channel_names": s.channel_names,
        "norm_stats": s.norm_stats,
    }
    sidecar.write_text(json.dumps(meta, indent=1))
    return sidecar


def load_signal_set(path) -> SignalSet:
    blob, sidecar = _resolve(path)
    for f in (sidecar, blob):
        if not f.exists():
            raise LoadError(f"missing file: {f}")
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as e:
        raise LoadError(f"sidecar {sidecar} is not valid JSON: {e}") from None
    for key in ("n", "c", "w"):
        if not isinstance(meta.get(key), int) or meta[key] < 0:
            raise LoadError(f"sidecar field '{key}' missing or invalid")
    n, c, w = meta["n"], meta["c"], meta["w"]
    raw = np.frombuffer(blob.read_bytes(), dtype=_LE_F32)
    if raw.size != n * c * w:
        raise LoadError(f"values: blob holds {raw.size} floats, sidecar implies n*c*w = {n * c * w}")
    values = raw.reshape(n, c, 1, w).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise LoadError("values: contains NaN or Inf")

    labels = meta.get("labels")
    k = meta.get("k") or 0
    class_names = meta.get("class_names")
    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (n,):
            raise LoadError(f"labels: expected {n} entries, got {labels.size}")
        if k < 1:
            raise LoadError("k: labelled set needs k >= 1")
        if n and (labels.min() < 0 or labels.max() >= k):
            raise LoadError(f"labels: label out of range [0, {k})")
    if class_names is not None and len(class_names) != k:
        raise LoadError(f"class_names: expected {k} names, got {len(class_names)}")
    if class_names is None and labels is not None:
        class_names = [str(i) for i in range(k)]
    channel_names = meta.get("channel_names")
    if channel_names is not None and len(channel_names) != c:
        raise LoadError(f"channel_names: expected {c} names, got {len(channel_names)}")
    stats = meta.get("norm_stats")
    if stats is not None and (len(stats.get("mean", [])) != c or len(stats.get("std", [])) != c):
        raise LoadError("norm_stats: mean/std must each have one entry per channel")
    return SignalSet(
        values=values,
        labels=labels,
        class_names=class_names,
        sampling_rate_hz=meta.get("sampling_rate_hz"),
        channel_names=channel_names,
        norm_stats=stats,
    )


def import_csv(path, labeled: bool = False, sampling_rate_hz: Optional[float] = None) -> SignalSet:
    """Read single-channel data, one sample per row (last column = label when ``labeled``)."""
    try:
        table = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise LoadError(f"cannot read CSV {path}: {e}") from None
    labels = None
    if labeled:
        col = table[:, -1]
        if not np.all(col == np.round(col)):
            raise LoadError("label column holds non-integer values")
        labels = col.astype(np.int64)
        table = table[:, :-1]
    if not np.all(np.isfinite(table)):
        raise LoadError("values: contains NaN or Inf")
    class_names = None
    if labels is not None:
        class_names = [str(i) for i in range(int(labels.max()) + 1 if len(labels) else 0)]
    return SignalSet(
        values=table[:, None, None, :],
        labels=labels,
        class_names=class_names,
        sampling_rate_hz=sampling_rate_hz,
    )


# --------------------------------------------------------------------------
# Preprocessing


def channel_stats(s: SignalSet) -> dict:
    v = s.values.astype(np.float64)
    mean = v.mean(axis=(0, 2, 3))
    std = v.std(axis=(0, 2, 3))
    return {"mean": mean.tolist(), "std": std.tolist()}


def apply_normalization(s: SignalSet, stats: dict) -> SignalSet:
    """Normalize with precomputed per-channel statistics (e.g. from a training split)."""
    mean = np.asarray(stats["mean"], dtype=np.float64)
    std = np.asarray(stats["std"], dtype=np.float64)
    if mean.shape != (s.n_channels,) or std.shape != (s.n_channels,):
        raise UsageError("normalization stats do not match channel count")
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        raise NormalizationError(f"channel {int(bad[0])} has zero variance")
    v = (s.values.astype(np.float64) - mean[None, :, None, None]) / std[None, :, None, None]
    return replace(s, values=v, norm_stats={"mean": mean.tolist(), "std": std.tolist()})


def normalize_channels(s: SignalSet) -> SignalSet:
    """Zero mean, unit (population) standard deviation per channel over the whole set.

    The statistics used are recorded in ``norm_stats`` so other splits can
    reuse them through :func:`apply_normalization`.
    """
    if len(s) == 0:
        raise UsageError("cannot normalize an empty set")
    return apply_normalization(s, channel_stats(s))


def crop_window(s: SignalSet, start: int, end: int) -> SignalSet:
    if not (0 <= start < end <= s.length):
        raise UsageError(f"crop [{start}, {end}) out of bounds for W={s.length}")
    return replace(s, values=s.values[..., start:end])


def resample_balanced(s: SignalSet, per_class: int, seed: int) -> SignalSet:
    """Exactly ``per_class`` samples of every class, shuffled.

    Classes with at least ``per_class`` members are subsampled without
    replacement; smaller classes are drawn with replacement.
    """
    if s.labels is None:
        raise UsageError("resample_balanced needs a labelled set")
    if per_class < 0:
        raise UsageError("per_class must be >= 0")
    rng = np.random.default_rng(seed)
    picks = []
    for k in range(s.num_classes):
        members = np.flatnonzero(s.labels == k)
        if members.size == 0:
            if per_class:
                raise UsageError(f"class {k} has no samples to draw from")
            continue
        replace_ = members.size < per_class
        picks.append(rng.choice(members, size=per_class, replace=replace_))
    idx = np.concatenate(picks) if picks else np.zeros(0, dtype=np.int64)
    return s.subset(idx[rng.permutation(idx.size)])


def train_test_split(s: SignalSet, test_per_class: int, seed: int) -> tuple[SignalSet, SignalSet]:
    """Balanced held-out split: ``test_per_class`` samples of each class go to the test set."""
    if s.labels is None:
        raise UsageError("train_test_split needs a labelled set")
    rng = np.random.default_rng(seed)
    test_idx = []
    for k in range(s.num_classes):
        members = np.flatnonzero(s.labels == k)
        if members.size < test_per_class:
            raise UsageError(f"class {k} has {members.size} samples, need {test_per_class} for testing")
        test_idx.append(rng.choice(members, size=test_per_class, replace=False))
    test_idx = np.sort(np.concatenate(test_idx))
    mask = np.ones(len(s), dtype=bool)
    mask[test_idx] = False
    return s.subset(np.flatnonzero(mask)), s.subset(test_idx)
