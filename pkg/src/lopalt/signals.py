"""Synthetic signals, noise injection, quality metrics and block extraction."""

from dataclasses import dataclass
from typing import List

import numpy as np

from .exceptions import DimensionError, ParameterError

# Value reported in place of an infinite SNR (perfect reconstruction).
SNR_CAP_DB = 300.0


def cantor_function(t, depth=12):
    """Cantor (devil's staircase) function evaluated by ternary digits.

    Reads up to ``depth`` ternary digits of each ``t`` in ``[0, 1]``: a digit
    1 lands on a plateau and ends the expansion, digits 0/2 contribute binary
    digits 0/1. ``t = 1`` maps to 1.
    """
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t > 1)):
        raise ParameterError("Cantor function is defined on [0, 1]")
    if depth < 1:
        raise ParameterError(f"depth must be >= 1, got {depth}")
    frac = t.copy()
    out = np.zeros_like(frac)
    live = frac < 1.0
    weight = 0.5
    for _ in range(depth):
        frac = frac * 3.0
        digit = np.floor(frac)
        frac -= digit
        one = live & (digit == 1)
        two = live & (digit == 2)
        out[one] += weight
        out[two] += weight
        live &= ~one
        weight *= 0.5
    out[t == 1.0] = 1.0
    return out


def cantor_signal(n=1000, depth=12) -> np.ndarray:
    """``n`` samples of the Cantor function at ``t_k = k / (n - 1)``."""
    if n < 2:
        raise ParameterError(f"need n >= 2 samples, got {n}")
    return cantor_function(np.linspace(0.0, 1.0, n), depth=depth)


def add_awgn(x, target_snr_db, seed):
    """Add white Gaussian noise scaled to hit ``target_snr_db`` exactly.

    The realized noise vector is rescaled so that
    ``10 log10(||x||^2 / ||noise||^2)`` equals the target.
    """
    x = np.asarray(x, dtype=float)
    power = float(np.sum(x * x))
    if power == 0:
        raise ParameterError("cannot set an SNR relative to a zero signal")
    noise = np.random.default_rng(seed).standard_normal(x.shape)
    noise *= np.sqrt(power / np.sum(noise * noise)) * 10.0 ** (-target_snr_db / 20.0)
    return x + noise


def snr(x, x_hat) -> float:
    """``10 log10(||x||^2 / ||x - x_hat||^2)`` in dB; ``inf`` when ``x_hat == x``."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x.shape != x_hat.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    power = float(np.sum(x * x))
    if power == 0:
        raise ParameterError("SNR undefined for a zero reference")
    err = float(np.sum((x - x_hat) ** 2))
    if err == 0:
        return float("inf")
    return 10.0 * np.log10(power / err)


def salt_and_pepper(x, fraction, seed, low=0.0, high=1.0):
    """Replace a random ``fraction`` of entries by ``low`` or ``high`` (equal odds)."""
    if not 0 <= fraction <= 1:
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    rng = np.random.default_rng(seed)
    out = np.array(x, dtype=float, copy=True)
    hit = rng.random(out.shape) < fraction
    out[hit] = np.where(rng.random(int(hit.sum())) < 0.5, low, high)
    return out


@dataclass
class BlockPartition:
    """Start index of every block, strictly increasing from 0."""

    boundaries: List[int]

    @property
    def n_blocks(self) -> int:
        return len(self.boundaries)

    def labels(self, n) -> np.ndarray:
        """Block index of each of ``n`` positions."""
        lab = np.zeros(n, dtype=int)
        lab[self.boundaries[1:]] = 1
        return np.cumsum(lab)


def extract_blocks(sigma, threshold=0.01) -> BlockPartition:
    """Split where the latent vector jumps by more than ``threshold * max(sigma)``."""
    sigma = np.asarray(sigma, dtype=float).ravel()
    if sigma.size == 0:
        raise DimensionError("empty latent vector")
    if not threshold > 0:
        raise ParameterError(f"threshold must be positive, got {threshold}")
    top = sigma.max()
    if top <= 0:
        return BlockPartition([0])
    jumps = np.nonzero(np.abs(np.diff(sigma)) > threshold * top)[0] + 1
    return BlockPartition([0] + jumps.tolist())
