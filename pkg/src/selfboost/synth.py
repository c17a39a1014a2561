"""Seeded synthetic benchmark signals."""

import numpy as np

from .core import TimeSeries
from .errors import ConfigInvalid

KINDS = ("two_tone_trend", "ar1", "random_walk")


def two_tone_trend(length=1000, seed=0, slope=0.001, noise_std=0.1, periods=(8.0, 64.0), amplitudes=(1.0, 0.5)):
    """sin(2 pi t / 8) + 0.5 sin(2 pi t / 64) + slope * t + Gaussian noise."""
    t = np.arange(length, dtype=np.float64)
    y = slope * t
    for period, amp in zip(periods, amplitudes):
        y = y + amp * np.sin(2.0 * np.pi * t / period)
    if noise_std > 0:
        y = y + np.random.default_rng(seed).normal(0.0, noise_std, length)
    return y


def ar1(length=1000, seed=0, phi=0.9, noise_std=0.1):
    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise_std, length)
    y = np.empty(length)
    y[0] = eps[0]
    for i in range(1, length):
        y[i] = phi * y[i - 1] + eps[i]
    return y


def random_walk(length=1000, seed=0, step_std=1.0):
    return np.cumsum(np.random.default_rng(seed).normal(0.0, step_std, length))


def generate(kind, length=1000, seed=0, **params):
    if kind == "two_tone_trend":
        values = two_tone_trend(length, seed, **params)
    elif kind == "ar1":
        values = ar1(length, seed, **params)
    elif kind == "random_walk":
        values = random_walk(length, seed, **params)
    else:
        raise ConfigInvalid("synth.kind", f"must be one of {KINDS}, got {kind!r}")
    return TimeSeries(kind, values)
