"""Description-length terms of the community Markov chain, in nats.

These functions evaluate every term from scratch. The incremental bookkeeping
used during inference lives in :mod:`dynblock.state` and is checked against
this module.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .combinatorics import log_binomial, log_factorial, log_multiset, log_q
from .core import ChainCounts
from .errors import ConfigError, InvariantError

K_PRIOR_MODES = ("uniform", "degree_hyperprior")
UNITS = ("nats", "bits")
LN2 = math.log(2.0)


@dataclass(frozen=True)
class PriorConfig:
    k_prior_mode: str = "degree_hyperprior"
    units: str = "nats"

    def __post_init__(self):
        if self.k_prior_mode not in K_PRIOR_MODES:
            raise ConfigError(f"k_prior_mode must be one of {K_PRIOR_MODES}, got {self.k_prior_mode!r}")
        if self.units not in UNITS:
            raise ConfigError(f"units must be one of {UNITS}, got {self.units!r}")


def _check_labels(groups: np.ndarray, what: str) -> int:
    if groups.size == 0:
        return 0
    B = int(groups.max()) + 1
    occ = np.bincount(groups, minlength=B)
    if groups.min() < 0 or np.any(occ == 0):
        raise InvariantError(f"{what} labels must be contiguous with no empty group")
    return B


@dataclass
class Partition:
    """Group assignments of tokens and of observed memories.

    In unified mode (order 1 only) every token also acts as a memory and
    ``memory_groups`` is derived from ``token_groups``; there is a single
    set of ``B`` groups.
    """

    token_groups: np.ndarray
    memory_groups: np.ndarray
    unified: bool = False

    def __post_init__(self):
        self.token_groups = np.asarray(self.token_groups, dtype=np.int64)
        self.memory_groups = np.asarray(self.memory_groups, dtype=np.int64)
        self.B_N = _check_labels(self.token_groups, "token")
        if self.unified:
            self.B_M = self.B_N
        else:
            self.B_M = _check_labels(self.memory_groups, "memory")

    @classmethod
    def unified_from(cls, chain: ChainCounts, token_groups) -> "Partition":
        if chain.n != 1:
            raise ConfigError("the unified model is only defined for order 1")
        tg = np.asarray(token_groups, dtype=np.int64)
        return cls(tg, tg[chain.memories[:, 0]], unified=True)

    @classmethod
    def trivial(cls, chain: ChainCounts, unified: bool = False) -> "Partition":
        if unified:
            return cls.unified_from(chain, np.zeros(chain.N, dtype=np.int64))
        return cls(np.zeros(chain.N, dtype=np.int64), np.zeros(chain.M, dtype=np.int64))

    @classmethod
    def singletons(cls, chain: ChainCounts, unified: bool = False) -> "Partition":
        if unified:
            return cls.unified_from(chain, np.arange(chain.N))
        return cls(np.arange(chain.N), np.arange(chain.M))

    def relabeled(self) -> "Partition":
        """Canonical labels: groups numbered by first appearance."""
        tg = _canonical(self.token_groups)
        if self.unified:
            mapping = _mapping(self.token_groups)
            return Partition(tg, mapping[self.memory_groups], unified=True)
        return Partition(tg, _canonical(self.memory_groups))


def _mapping(groups: np.ndarray) -> np.ndarray:
    _, first = np.unique(groups, return_index=True)
    labels = groups[np.sort(first)]
    mapping = np.zeros(int(groups.max()) + 1, dtype=np.int64)
    mapping[labels] = np.arange(len(labels))
    return mapping


def _canonical(groups: np.ndarray) -> np.ndarray:
    if groups.size == 0:
        return groups.copy()
    return _mapping(groups)[groups]


@dataclass
class Blocks:
    ers: np.ndarray  # (B_N, B_M) transitions memory group s -> token group r
    e_r: np.ndarray
    e_s: np.ndarray
    n_r: np.ndarray
    n_s: np.ndarray
    hist: list  # per token group: Counter k -> number of tokens

    @property
    def B_N(self):
        return len(self.e_r)

    @property
    def B_M(self):
        return len(self.e_s)


def _block_matrix(chain: ChainCounts, part: Partition) -> np.ndarray:
    if len(part.token_groups) != chain.N or len(part.memory_groups) != chain.M:
        raise InvariantError("partition does not cover the chain's tokens and memories")
    ers = np.zeros((part.B_N, part.B_M), dtype=np.int64)
    np.add.at(ers, (part.token_groups[chain.a_tok], part.memory_groups[chain.a_mem_idx]), chain.a_count)
    return ers


def block_aggregates(chain: ChainCounts, part: Partition) -> Blocks:
    B_N, B_M = part.B_N, part.B_M
    ers = _block_matrix(chain, part)
    n_r = np.bincount(part.token_groups, minlength=B_N)
    if part.unified:
        n_s = n_r.copy()
    else:
        n_s = np.bincount(part.memory_groups, minlength=B_M)
    hist = [Counter() for _ in range(B_N)]
    for x, r in enumerate(part.token_groups):
        hist[r][int(chain.k[x])] += 1
    blocks = Blocks(ers, ers.sum(axis=1), ers.sum(axis=0), n_r, n_s, hist)
    e_r_direct = np.bincount(part.token_groups, weights=chain.k, minlength=B_N)
    if not np.array_equal(e_r_direct.astype(np.int64), blocks.e_r):
        raise InvariantError("token group margins disagree with emission counts")
    return blocks


def seq_term_counts(ers: np.ndarray, k: np.ndarray) -> float:
    """-ln of the microcanonical sequence likelihood for given constraints."""
    ers = np.asarray(ers, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    e_r = ers.sum(axis=1)
    e_s = ers.sum(axis=0)
    if ers.sum() == 0:
        return 0.0
    val = gammaln(ers + 1).sum() + gammaln(k + 1).sum() - gammaln(e_r + 1).sum() - gammaln(e_s + 1).sum()
    return float(-val)


def seq_term(chain: ChainCounts, part: Partition, blocks: Optional[Blocks] = None) -> float:
    """-ln P({x_t} | b, {e_rs}, {k_x}) over all token-group x memory-group pairs."""
    ers = blocks.ers if blocks is not None else _block_matrix(chain, part)
    return seq_term_counts(ers, chain.k)


def k_prior(chain: ChainCounts, part: Partition, config: PriorConfig = PriorConfig(),
            blocks: Optional[Blocks] = None) -> float:
    """-ln P({k_x} | {e_rs}, b) under the configured prior."""
    blocks = blocks or block_aggregates(chain, part)
    total = 0.0
    if config.k_prior_mode == "uniform":
        for n_r, e_r in zip(blocks.n_r, blocks.e_r):
            total += log_multiset(int(n_r), int(e_r))
        return total
    for r, (n_r, e_r) in enumerate(zip(blocks.n_r, blocks.e_r)):
        n_r, e_r = int(n_r), int(e_r)
        hist_term = sum(log_factorial(c) for c in blocks.hist[r].values())
        total += log_factorial(n_r) - hist_term + log_q(e_r, n_r)
    return total


def ers_prior(part: Partition, blocks: Blocks) -> float:
    """-ln P({e_rs} | {e_s}) = sum_s ln (( B_N  e_s ))."""
    return float(sum(log_multiset(part.B_N, int(e)) for e in blocks.e_s))


def es_prior(part: Partition, E: int) -> float:
    """-ln P({e_s} | b) = ln (( B_M  E ))."""
    return log_multiset(part.B_M, int(E))


def partition_prior(assignments) -> float:
    """Two-level prior: -ln[prod n_r! / M!] + ln C(M - 1, B - 1)."""
    g = np.asarray(assignments, dtype=np.int64)
    M = len(g)
    if M == 0:
        return 0.0
    B = _check_labels(g, "partition")
    n = np.bincount(g, minlength=B)
    return float(log_factorial(M) - sum(log_factorial(int(c)) for c in n) + log_binomial(M - 1, B - 1))


@dataclass
class DLBreakdown:
    seq_term: float = 0.0
    k_prior: float = 0.0
    ers_prior: float = 0.0
    es_prior: float = 0.0
    token_partition_prior: float = 0.0
    memory_partition_prior: float = 0.0
    static_net_term: Optional[float] = None
    wait_term: Optional[float] = None
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        t = (self.seq_term + self.k_prior + self.ers_prior + self.es_prior
             + self.token_partition_prior + self.memory_partition_prior)
        if self.static_net_term is not None:
            t += self.static_net_term
        if self.wait_term is not None:
            t += self.wait_term
        return t + sum(self.extra.values())

    def to_dict(self, units: str = "nats") -> dict:
        scale = 1.0 / LN2 if units == "bits" else 1.0
        out = {}
        for f in fields(self):
            if f.name == "extra":
                continue
            v = getattr(self, f.name)
            if v is not None:
                out[f.name] = v * scale
        for k, v in self.extra.items():
            out[k] = v * scale
        out["total"] = self.total * scale
        return out


def total_dl(chain: ChainCounts, part: Partition, config: PriorConfig = PriorConfig(),
             wait_model=None) -> DLBreakdown:
    """Full nonparametric description length of ``chain`` under ``part``.

    In unified mode a single partition prior is charged.
    """
    blocks = block_aggregates(chain, part)
    out = DLBreakdown(
        seq_term=seq_term(chain, part, blocks),
        k_prior=k_prior(chain, part, config, blocks),
        ers_prior=ers_prior(part, blocks),
        es_prior=es_prior(part, chain.E),
        token_partition_prior=partition_prior(part.token_groups),
        memory_partition_prior=0.0 if part.unified else partition_prior(part.memory_groups),
    )
    if wait_model is not None:
        out.wait_term = wait_model.term(chain, part)
    return out


def baseline_plain_dl(chain: ChainCounts) -> float:
    """Dirichlet-multinomial evidence with one group per token and memory.

    -ln prod_m [(N - 1)! / (a_m + N - 1)! * prod_x a_{x,m}!]
    """
    N = chain.N
    if chain.E == 0:
        return 0.0
    per_mem = gammaln(N) - gammaln(chain.a_mem + N)
    val = per_mem.sum() + gammaln(chain.a_count + 1.0).sum()
    return float(-val)


def mle_loglik(chain: ChainCounts) -> float:
    """sum_{x,m} a ln(a / a_m), the maximized plug-in log-likelihood."""
    a = chain.a_count.astype(np.float64)
    am = chain.a_mem[chain.a_mem_idx].astype(np.float64)
    return float(np.sum(a * np.log(a / am)))


def block_mle_loglik(chain: ChainCounts, part: Partition) -> float:
    """Maximized log-likelihood of the block-parametrized chain.

    sum_{rs} e_rs ln(e_rs / (e_r e_s)) + sum_x k_x ln k_x, with the rates
    and token propensities at their maximum-likelihood values.
    """
    blocks = block_aggregates(chain, part)
    ers = blocks.ers.astype(np.float64)
    r, s = np.nonzero(ers)
    e = ers[r, s]
    val = np.sum(e * np.log(e / (blocks.e_r[r].astype(np.float64) * blocks.e_s[s])))
    k = chain.k[chain.k > 0].astype(np.float64)
    return float(val + np.sum(k * np.log(k)))


def conditional_entropy(chain: ChainCounts) -> float:
    """H(X | memory) in nats, so that ``mle_loglik == -E * H``."""
    if chain.E == 0:
        return 0.0
    return -mle_loglik(chain) / chain.E


def to_units(value: float, units: str) -> float:
    return value / LN2 if units == "bits" else value
