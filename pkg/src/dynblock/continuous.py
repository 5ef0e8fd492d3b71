"""Waiting-time evidence for continuous-time chains.

Each memory (or memory group) emits after an exponential waiting time with
rate ``lam``; a Gamma(alpha, beta) prior on ``lam`` is integrated out, so
a set of ``k`` waits with total ``D`` has evidence

    beta**alpha * Gamma(k + alpha) / (Gamma(alpha) * (D + beta)**(k + alpha)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .core import ChainCounts, ZERO_WAIT_FLOOR
from .errors import ConfigError, InputError

WAIT_MODES = ("per_memory", "per_group")


def _evidence(k: np.ndarray, D: np.ndarray, alpha: float, beta: float) -> float:
    k = np.asarray(k, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    val = alpha * math.log(beta) + gammaln(k + alpha) - gammaln(alpha) - (k + alpha) * np.log(D + beta)
    return float(-np.sum(val))


def _check_hyper(alpha: float, beta: float):
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0 (alpha = 0 is an improper prior), got {alpha}")
    if not beta > 0:
        raise ConfigError(f"beta must be > 0, got {beta}")


@dataclass
class WaitStats:
    """Per-memory waiting-time totals ``D`` and counts ``k``."""

    k: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64)
        self.D = np.asarray(self.D, dtype=np.float64)
        if self.k.shape != self.D.shape:
            raise InputError("counts and totals must have the same shape")
        if np.any(self.k < 0) or np.any(self.D < 0):
            raise InputError("waiting-time totals and counts must be nonnegative")

    @classmethod
    def from_chain(cls, chain: ChainCounts) -> "WaitStats":
        if chain.wait_sum is None:
            raise ConfigError("chain was built without waiting times")
        return cls(chain.a_mem, chain.wait_sum)

    def grouped(self, memory_groups: np.ndarray) -> "WaitStats":
        g = np.asarray(memory_groups, dtype=np.int64)
        B = int(g.max()) + 1 if g.size else 0
        return WaitStats(np.bincount(g, weights=self.k, minlength=B).astype(np.int64),
                         np.bincount(g, weights=self.D, minlength=B))


def wait_evidence_per_memory(stats: WaitStats, alpha: float = 1.0, beta: float = 1.0) -> float:
    """-ln P({Delta_t} | {x_t}) with an independent rate per memory."""
    _check_hyper(alpha, beta)
    return _evidence(stats.k, stats.D, alpha, beta)


def wait_evidence_per_group(stats: WaitStats, memory_groups, alpha: float = 1.0, beta: float = 1.0) -> float:
    """-ln P({Delta_t} | {x_t}, b) with one rate per memory group."""
    _check_hyper(alpha, beta)
    g = stats.grouped(memory_groups)
    return _evidence(g.k, g.D, alpha, beta)


def estimate_beta(stats: WaitStats, alpha: float = 1.0) -> float:
    """Empirical-Bayes ``beta``: prior mean rate ``alpha / beta`` equals the
    average plug-in rate ``k / D`` over memories with ``k >= 1`` and ``D > 0``.
    """
    ok = (stats.k >= 1) & (stats.D > 0)
    if not np.any(ok):
        raise ConfigError("no memory with observed positive waiting time; pass beta explicitly")
    rate = np.mean(stats.k[ok] / stats.D[ok])
    return float(alpha / rate)


def bursty_transform(waits, delta_m: Optional[float] = None) -> np.ndarray:
    """Map waits to ``mu = ln(Delta / Delta_m)``.

    Pareto-distributed waits with minimum ``Delta_m`` become exponential,
    so the same evidence applies to the transformed values. ``delta_m``
    defaults to the smallest positive wait.
    """
    w = np.asarray(waits, dtype=np.float64)
    if delta_m is None:
        pos = w[w > 0]
        if pos.size == 0:
            raise InputError("no positive waiting time to set delta_m from")
        delta_m = float(pos.min())
    if not delta_m > 0:
        raise ConfigError(f"delta_m must be positive, got {delta_m}")
    bad = np.flatnonzero(w < delta_m)
    if bad.size:
        i = int(bad[0])
        raise InputError(f"wait at index {i} ({w[i]}) is below delta_m={delta_m}; floor zero waits first")
    return np.log(w / delta_m)


@dataclass
class WaitModel:
    """Waiting-time term attached to a chain fit.

    ``mode`` is ``per_memory`` (independent of the partition) or
    ``per_group`` (rates shared by memory groups, so the partition feels
    the timing). ``beta=None`` is resolved with :func:`estimate_beta`.
    """

    mode: str = "per_memory"
    alpha: float = 1.0
    beta: Optional[float] = None
    bursty: bool = False
    floor: float = ZERO_WAIT_FLOOR

    def __post_init__(self):
        if self.mode not in WAIT_MODES:
            raise ConfigError(f"wait mode must be one of {WAIT_MODES}, got {self.mode!r}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0 (alpha = 0 is an improper prior), got {self.alpha}")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")

    def resolved(self, chain: ChainCounts) -> "WaitModel":
        if self.beta is not None:
            return self
        beta = estimate_beta(WaitStats.from_chain(chain), self.alpha)
        return WaitModel(self.mode, self.alpha, beta, self.bursty, self.floor)

    def term(self, chain: ChainCounts, part=None) -> float:
        if self.beta is None:
            return self.resolved(chain).term(chain, part)
        stats = WaitStats.from_chain(chain)
        if self.mode == "per_memory":
            return wait_evidence_per_memory(stats, self.alpha, self.beta)
        if part is None:
            raise ConfigError("per-group waiting times need a partition")
        return wait_evidence_per_group(stats, part.memory_groups, self.alpha, self.beta)


def prepare_waits(waits, bursty: bool = False, floor: float = ZERO_WAIT_FLOOR,
                  delta_m: Optional[float] = None) -> np.ndarray:
    """Floor zero waits and optionally apply the bursty transform."""
    w = np.maximum(np.asarray(waits, dtype=np.float64), floor)
    if bursty:
        w = bursty_transform(w, delta_m)
    return w
