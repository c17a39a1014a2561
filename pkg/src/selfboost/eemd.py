"""Empirical mode decomposition and its noise-assisted ensemble variant.

Sifting follows the classic recipe: spline envelopes through the maxima and
minima, subtract their mean, and stop once the candidate qualifies as an
intrinsic mode function and the sifting standard deviation between successive
candidates drops under ``sd_threshold``. The ensemble variant repeats the
decomposition on copies of the input perturbed with white noise and averages
mode by mode.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .core import TimeSeries
from .errors import ConfigInvalid, InsufficientLength, NotEnoughExtrema, TooFewExtrema

log = logging.getLogger(__name__)

SD_EPS = 1e-12


@dataclass(frozen=True)
class DecompositionConfig:
    ensemble_size: int = 100
    noise_amplitude_ratio: float = 0.2
    sd_threshold: float = 0.2
    max_sift_iterations: int = 50
    max_imfs: int = 16
    rng_seed: int = 0
    noise_distribution: str = "gaussian"

    def __post_init__(self):
        if self.sd_threshold <= 0:
            raise ConfigInvalid("decomposition.sd_threshold", "must be > 0")
        if self.ensemble_size < 1:
            raise ConfigInvalid("decomposition.ensemble_size", "must be >= 1")
        if self.noise_amplitude_ratio < 0:
            raise ConfigInvalid("decomposition.noise_amplitude_ratio", "must be >= 0")
        if self.max_sift_iterations < 1:
            raise ConfigInvalid("decomposition.max_sift_iterations", "must be >= 1")
        if self.max_imfs < 1:
            raise ConfigInvalid("decomposition.max_imfs", "must be >= 1")
        if self.noise_distribution not in ("gaussian", "uniform"):
            raise ConfigInvalid(
                "decomposition.noise_distribution", "must be 'gaussian' or 'uniform'"
            )

    @property
    def effective_ensemble_size(self):
        # without noise every trial is the same plain EMD
        return 1 if self.noise_amplitude_ratio == 0 else self.ensemble_size

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ImfSet:
    """IMFs (highest frequency first) plus residual.

    ``sift_counts[i][j]`` and ``converged[i][j]`` describe IMF ``j`` of
    ensemble trial ``i``.
    """

    imfs: list
    residual: TimeSeries
    source_length: int
    sift_counts: list = field(default_factory=list)
    converged: list = field(default_factory=list)

    @property
    def num_components(self):
        return len(self.imfs) + 1

    def components(self):
        return list(self.imfs) + [self.residual]

    def component_names(self):
        return [s.name for s in self.components()]

    def as_array(self):
        """[num_components, source_length] array, residual last."""
        return np.stack([s.values for s in self.components()])

    def reconstruction(self):
        total = np.zeros(self.source_length)
        for s in self.imfs:
            total = total + s.values
        return total + self.residual.values

    @classmethod
    def from_array(cls, arr, names=None):
        arr = np.asarray(arr, dtype=np.float64)
        k = arr.shape[0] - 1
        names = names or [f"imf_{j + 1}" for j in range(k)] + ["residual"]
        imfs = [TimeSeries(names[j], arr[j]) for j in range(k)]
        return cls(imfs, TimeSeries(names[-1], arr[-1]), arr.shape[1])


class SiftResult(NamedTuple):
    imf: TimeSeries
    sift_count: int
    converged: bool


def _values(series):
    return series.values if isinstance(series, TimeSeries) else np.asarray(series, dtype=np.float64)


def find_extrema(series):
    """Interior maxima and minima as lists of ``(index, value)``.

    A flat run counts once, at its first index, when it sits strictly above
    (below) both neighbours of the run.
    """
    x = _values(series)
    imax, imin = kernels.local_extrema(x)
    return (
        [(int(i), float(x[i])) for i in imax],
        [(int(i), float(x[i])) for i in imin],
    )


def count_zero_crossings(x):
    s = np.sign(np.asarray(x, dtype=np.float64))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def count_extrema(x):
    imax, imin = kernels.local_extrema(np.asarray(x, dtype=np.float64))
    return len(imax) + len(imin)


def is_imf(x):
    return abs(count_extrema(x) - count_zero_crossings(x)) <= 1


def _mirror_knots(idx, val, n):
    """Reflect the two extrema nearest each end across that endpoint."""
    kx = [float(i) for i in idx]
    ky = [float(v) for v in val]
    if idx[0] > 0:
        take = min(2, len(idx))
        kx = [-float(idx[k]) for k in range(take - 1, -1, -1)] + kx
        ky = [float(val[k]) for k in range(take - 1, -1, -1)] + ky
    last = n - 1
    if idx[-1] < last:
        take = min(2, len(idx))
        kx = kx + [2.0 * last - float(idx[-1 - k]) for k in range(take)]
        ky = ky + [float(val[-1 - k]) for k in range(take)]
    return np.array(kx), np.array(ky)


def _envelope_values(n, idx, val, mirror=True):
    if len(idx) == 0:
        raise TooFewExtrema("no extrema to interpolate")
    if mirror:
        kx, ky = _mirror_knots(idx, val, n)
    else:
        kx, ky = np.asarray(idx, dtype=np.float64), np.asarray(val, dtype=np.float64)
    if kx.size < 2:
        raise TooFewExtrema(f"only {kx.size} knot(s) after boundary extension")
    return kernels.natural_spline(kx, ky, n)


def envelope(series, extrema, mirror=True):
    """Natural cubic spline through ``extrema`` evaluated at every sample.

    With ``mirror`` set, the two extrema closest to each endpoint are
    reflected across it first (sides that already have a knot on the
    endpoint are left alone).
    """
    x = _values(series)
    pts = sorted(extrema)
    idx = [p[0] for p in pts]
    val = [p[1] for p in pts]
    name = series.name + "_envelope" if isinstance(series, TimeSeries) else "envelope"
    return TimeSeries(name, _envelope_values(x.shape[0], idx, val, mirror))


def sifting_sd(previous, current):
    """Sum over samples of squared change relative to the previous candidate."""
    previous = np.asarray(previous, dtype=np.float64)
    diff = previous - np.asarray(current, dtype=np.float64)
    return float(np.sum(diff * diff / (previous * previous + SD_EPS)))


def _sift_array(x, sd_threshold, max_iterations):
    n = x.shape[0]
    h = x.copy()
    imax, imin = kernels.local_extrema(h)
    if len(imax) < 2 or len(imin) < 2:
        raise NotEnoughExtrema(f"{len(imax)} maxima and {len(imin)} minima; need 2 of each")
    count = 0
    while count < max_iterations:
        upper = _envelope_values(n, imax, h[imax])
        lower = _envelope_values(n, imin, h[imin])
        candidate = h - 0.5 * (upper + lower)
        count += 1
        sd = sifting_sd(h, candidate)
        h = candidate
        imax, imin = kernels.local_extrema(h)
        n_zero = count_zero_crossings(h)
        if sd < sd_threshold and abs(len(imax) + len(imin) - n_zero) <= 1:
            return h, count, True
        if len(imax) < 2 or len(imin) < 2:
            break
    return h, count, False


def sift(series, config=DecompositionConfig()):
    """Extract one IMF from ``series``."""
    h, count, ok = _sift_array(_values(series), config.sd_threshold, config.max_sift_iterations)
    name = series.name + "_imf" if isinstance(series, TimeSeries) else "imf"
    return SiftResult(TimeSeries(name, h), count, ok)


def _is_monotone(x):
    d = np.diff(x)
    return bool(np.all(d >= 0) or np.all(d <= 0))


def _emd_arrays(x, config):
    if x.shape[0] < 8:
        raise InsufficientLength(f"EMD needs at least 8 samples, got {x.shape[0]}")
    residual = x.copy()
    imfs, counts, flags = [], [], []
    while len(imfs) < config.max_imfs:
        if _is_monotone(residual):
            break
        imax, imin = kernels.local_extrema(residual)
        if len(imax) < 2 or len(imin) < 2:
            break
        imf, count, ok = _sift_array(residual, config.sd_threshold, config.max_sift_iterations)
        imfs.append(imf)
        counts.append(count)
        flags.append(ok)
        residual = residual - imf
    return imfs, residual, counts, flags


def _pack(imfs, residual, n, counts, flags):
    return ImfSet(
        imfs=[TimeSeries(f"imf_{j + 1}", v) for j, v in enumerate(imfs)],
        residual=TimeSeries("residual", residual),
        source_length=n,
        sift_counts=counts,
        converged=flags,
    )


def emd(series, config=DecompositionConfig()):
    """Plain EMD: sift and subtract until the residual stops oscillating."""
    x = _values(series)
    imfs, residual, counts, flags = _emd_arrays(x, config)
    return _pack(imfs, residual, x.shape[0], [counts], [flags])


def trial_noise(seed, trial, n, sigma, distribution="gaussian"):
    """Noise for ensemble trial ``trial``; independent of any other trial."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))
    if distribution == "uniform":
        half_width = sigma * np.sqrt(3.0)
        return rng.uniform(-half_width, half_width, n)
    return rng.normal(0.0, sigma, n)


def eemd(series, config=DecompositionConfig()):
    """Ensemble EMD: average the decompositions of noise-perturbed copies.

    Trials that yield fewer modes than the largest trial contribute zeros to
    the missing trailing modes. Trials are reduced in index order, so the
    result depends only on the seed.
    """
    x = _values(series)
    n = x.shape[0]
    trials = config.effective_ensemble_size
    if config.noise_amplitude_ratio == 0:
        return emd(series, config)
    sigma = config.noise_amplitude_ratio * float(np.std(x))
    results = []
    for i in range(trials):
        noisy = x + trial_noise(config.rng_seed, i, n, sigma, config.noise_distribution)
        results.append(_emd_arrays(noisy, config))
    k = max(len(r[0]) for r in results)
    imf_sum = np.zeros((k, n))
    residual_sum = np.zeros(n)
    for imfs, residual, _, _ in results:
        for j, v in enumerate(imfs):
            imf_sum[j] += v
        residual_sum += residual
    log.debug("eemd: %d trials, mode counts %s", trials, [len(r[0]) for r in results])
    return _pack(
        list(imf_sum / trials),
        residual_sum / trials,
        n,
        [r[2] for r in results],
        [r[3] for r in results],
    )


def imf_statistics(imfset):
    """Per-component zero-crossing and extrema counts."""
    rows = []
    for s in imfset.components():
        rows.append(
            {
                "name": s.name,
                "zero_crossings": count_zero_crossings(s.values),
                "extrema": count_extrema(s.values),
            }
        )
    return rows
