"""Wavelet coherence between signals and between sets of signals.

The continuous wavelet transform uses the analytic Morlet wavelet in the
frequency domain (Torrence & Compo normalization, unit energy per scale).
Coherence follows Grinsted et al.: cross and auto spectra are weighted by
1/scale, smoothed in time with a Gaussian whose width equals the scale and
then in scale with a boxcar 0.6 octaves wide, and combined as

    |S(conj(Cx) Cy)|^2 / (S(|Cx|^2) S(|Cy|^2))

No cone-of-influence masking is applied.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np

from .data import SignalSet
from .errors import ConfigError, UsageError

_EPS = np.finfo(np.float64).eps
_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class CwtSpec:
    omega0: float = 6.0
    voices_per_octave: int = 10
    min_period: float = 2.0
    max_period: Optional[float] = None  # None: half the signal length

    def __post_init__(self):
        if self.omega0 < 5:
            raise ConfigError("omega0 must be >= 5 for the Morlet wavelet to be analytic")
        if self.voices_per_octave < 1:
            raise ConfigError("voices_per_octave must be >= 1")
        if self.min_period <= 0:
            raise ConfigError("min_period must be positive")
        if self.max_period is not None and not self.min_period < self.max_period:
            raise ConfigError("min_period must be smaller than max_period")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CoherenceMatrix:
    values: np.ndarray  # (F, W)
    scales: np.ndarray
    periods: np.ndarray


def fourier_factor(omega0: float) -> float:
    """Ratio of Fourier period to wavelet scale for the Morlet wavelet."""
    return 4 * math.pi / (omega0 + math.sqrt(2 + omega0 ** 2))


def scale_grid(spec: CwtSpec, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Log-spaced ``(scales, periods)``, ``voices_per_octave`` per octave from
    ``min_period`` up to ``max_period`` (both in samples)."""
    if length < 4:
        raise ConfigError(f"signal length {length} is too short; need at least 4 samples")
    max_period = spec.max_period if spec.max_period is not None else length / 2
    if max_period < spec.min_period:
        raise ConfigError(f"max_period {max_period} is below min_period {spec.min_period}")
    n_octaves = math.log2(max_period / spec.min_period)
    j = np.arange(int(math.floor(n_octaves * spec.voices_per_octave + 1e-9)) + 1)
    periods = spec.min_period * 2.0 ** (j / spec.voices_per_octave)
    return periods / fourier_factor(spec.omega0), periods


def _pad_length(n: int) -> int:
    # at least twice the signal length to keep circular wrap-around off the data
    return 1 << int(math.ceil(math.log2(2 * n)))


def _angular_freqs(npad: int) -> np.ndarray:
    return 2 * np.pi * np.fft.fftfreq(npad)


def cwt_morlet(x, spec: CwtSpec = CwtSpec()) -> np.ndarray:
    """Analytic Morlet CWT of ``x`` along its last axis.

    Input ``(..., W)`` gives complex coefficients ``(..., F, W)``; see
    :func:`scale_grid` for the scales.
    """
    x = np.asarray(x, dtype=np.float64)
    w = x.shape[-1]
    if not np.all(np.isfinite(x)):
        raise UsageError("signal contains NaN or Inf")
    scales, _ = scale_grid(spec, w)
    npad = _pad_length(w)
    omega = _angular_freqs(npad)
    xf = np.fft.fft(x, n=npad, axis=-1)
    arg = scales[:, None] * omega[None, :]
    daughter = (
        np.sqrt(2 * np.pi * scales)[:, None]
        * np.pi ** -0.25
        * np.exp(-0.5 * (arg - spec.omega0) ** 2)
        * (omega > 0)[None, :]
    )
    coeffs = np.fft.ifft(xf[..., None, :] * daughter, axis=-1)
    return coeffs[..., :w]


def scale_kernel(voices_per_octave: int, width_octaves: float = 0.6) -> np.ndarray:
    """Boxcar over ``width_octaves`` of scale with fractional end weights."""
    half = width_octaves * voices_per_octave / 2
    m = int(round(half))
    if m == 0:
        return np.ones(1)
    frac = half % 1
    k = np.concatenate([[frac], np.ones(2 * m - 1), [frac]])
    return k / k.sum()


def smooth(spectrum: np.ndarray, scales: np.ndarray, voices_per_octave: int) -> np.ndarray:
    """Time smoothing (Gaussian, std = scale) then scale smoothing (boxcar).

    ``spectrum`` has shape ``(..., F, W)``; real input gives real output.
    """
    w = spectrum.shape[-1]
    npad = _pad_length(w)
    omega = _angular_freqs(npad)
    gauss = np.exp(-0.5 * (scales[:, None] ** 2) * omega[None, :] ** 2)
    sf = np.fft.fft(spectrum, n=npad, axis=-1)
    out = np.fft.ifft(sf * gauss, axis=-1)[..., :w]
    if np.isrealobj(spectrum):
        out = out.real

    kern = scale_kernel(voices_per_octave)
    if kern.size == 1:
        return out
    half = kern.size // 2
    n_f = out.shape[-2]
    result = np.zeros_like(out)
    for j, kj in enumerate(kern):
        shift = j - half
        if kj == 0:
            continue
        lo, hi = max(0, -shift), min(n_f, n_f - shift)
        if lo < hi:
            result[..., lo:hi, :] += kj * out[..., lo + shift:hi + shift, :]
    return result


def _floored(power: np.ndarray) -> np.ndarray:
    peak = power.max(axis=(-2, -1), keepdims=True)
    return np.maximum(power, np.maximum(_EPS * peak, _TINY))


def _auto(coeffs: np.ndarray, scales: np.ndarray, spec: CwtSpec) -> np.ndarray:
    power = (coeffs.real ** 2 + coeffs.imag ** 2) / scales[:, None]
    return _floored(smooth(power, scales, spec.voices_per_octave))


def _coherence(cx, cy, sx, sy, scales, spec: CwtSpec) -> np.ndarray:
    cross = smooth(np.conj(cx) * cy / scales[:, None], scales, spec.voices_per_octave)
    num = cross.real ** 2 + cross.imag ** 2
    den = sx * sy
    # both spectra at the floor (silent signals): the product can underflow
    ratio = np.divide(num, den, out=np.zeros(np.broadcast_shapes(num.shape, den.shape)), where=den > 0)
    return np.clip(ratio, 0.0, 1.0)


def wcoh(x, y, spec: CwtSpec = CwtSpec()) -> CoherenceMatrix:
    """Wavelet coherence of two equal-length real signals; values in [0, 1]."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise UsageError(f"signals differ in length: {x.size} vs {y.size}")
    scales, periods = scale_grid(spec, x.size)
    cx, cy = cwt_morlet(x, spec), cwt_morlet(y, spec)
    sx, sy = _auto(cx, scales, spec), _auto(cy, scales, spec)
    return CoherenceMatrix(_coherence(cx, cy, sx, sy, scales, spec), scales, periods)


def scalarize(matrix: np.ndarray) -> np.ndarray:
    """Sum over time, then mean over scale: ``(..., F, W) -> (...)``."""
    return matrix.sum(axis=-1).mean(axis=-1)


def _as_channels(x) -> np.ndarray:
    """``(C, 1, W)``, ``(C, W)`` or ``(W,)`` -> ``(C, W)`` float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        if x.shape[1] != 1:
            raise UsageError(f"expected (C, 1, W), got {x.shape}")
        x = x[:, 0, :]
    elif x.ndim == 1:
        x = x[None, :]
    elif x.ndim != 2:
        raise UsageError(f"expected (C, 1, W) signal, got shape {x.shape}")
    return x


def wcoh_s(x, y, spec: CwtSpec = CwtSpec()) -> float:
    """Scalar coherence of two multichannel signals.

    Per channel the coherence matrix is summed over time and averaged over
    scale; the channel scores are then averaged. Identical signals score
    exactly the signal length ``W``.
    """
    x, y = _as_channels(x), _as_channels(y)
    if x.shape != y.shape:
        raise UsageError(f"signal shapes differ: {x.shape} vs {y.shape}")
    scores = [scalarize(wcoh(xc, yc, spec).values) for xc, yc in zip(x, y)]
    return float(np.mean(scores))


class _Prepared:
    """CWT coefficients and smoothed auto spectra of a whole set, ``(n, C, F, W)``."""

    def __init__(self, values: np.ndarray, spec: CwtSpec):
        self.scales, self.periods = scale_grid(spec, values.shape[-1])
        self.coeffs = cwt_morlet(values, spec)
        self.auto = _auto(self.coeffs, self.scales, spec)


def _set_values(s: Union[SignalSet, np.ndarray]) -> np.ndarray:
    v = s.values if isinstance(s, SignalSet) else np.asarray(s)
    if v.ndim == 4:
        if v.shape[2] != 1:
            raise UsageError(f"expected (n, C, 1, W), got {v.shape}")
        v = v[:, :, 0, :]
    elif v.ndim == 2:
        v = v[:, None, :]
    if v.ndim != 3:
        raise UsageError(f"expected a set of shape (n, C, 1, W), got {v.shape}")
    return v.astype(np.float64)


def pair_scores(a, b, spec: CwtSpec = CwtSpec(), workers: int = 1) -> np.ndarray:
    """``(n_a, n_b)`` matrix of ``wcoh_s(a_i, b_j)`` for every cross-set pair."""
    va, vb = _set_values(a), _set_values(b)
    if va.shape[1:] != vb.shape[1:]:
        raise UsageError(f"sets differ in (C, W): {va.shape[1:]} vs {vb.shape[1:]}")
    pa, pb = _Prepared(va, spec), _Prepared(vb, spec)
    scales = pa.scales

    def row(i: int) -> np.ndarray:
        coh = _coherence(pa.coeffs[i][None], pb.coeffs, pa.auto[i][None], pb.auto, scales, spec)
        return scalarize(coh).mean(axis=-1)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(row, range(len(va))))
    else:
        rows = [row(i) for i in range(len(va))]
    return np.stack(rows) if rows else np.zeros((0, len(vb)))


def wcoh_set(a, b, spec: CwtSpec = CwtSpec(), workers: int = 1) -> float:
    """Mean over ``i`` of the mean over ``j`` of ``wcoh_s(a_i, b_j)``.

    Row means are accumulated in index order, so serial and threaded
    evaluation give identical results.
    """
    n_a, n_b = len(_set_values(a)), len(_set_values(b))
    if n_a == 0 or n_b == 0:
        raise UsageError("wcoh_set needs non-empty sets")
    if n_a != n_b:
        raise UsageError(f"sets must have equal sample counts, got {n_a} and {n_b}")
    return set_score(pair_scores(a, b, spec, workers))


def set_score(scores: np.ndarray) -> float:
    total = 0.0
    for r in scores:
        total += float(np.mean(r))
    return total / scores.shape[0]
