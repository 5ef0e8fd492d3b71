"""Held-out predictive bound, microcanonical sampling and shuffle nulls."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ChainCounts, EdgeStream, Sequence, build_chain
from .dl import Partition, PriorConfig, block_aggregates
from .errors import ConfigError, InputError, InvariantError
from .inference import FitConfig, agglomerative_search, mh_sweep
from .state import MEM, TOK, BlockState
from .temporal import NodeState, joint_fit, label_sequence, temporal_dl


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous split: the first ``fraction`` of the events train."""

    fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"split fraction must lie in (0, 1], got {self.fraction}")

    def boundary(self, length: int) -> int:
        L = int(round(self.fraction * length))
        if L < 1:
            raise InputError("empty training set")
        return min(L, length)


@dataclass
class HoldoutResult:
    """Outcome of a held-out evaluation.

    ``log_bound = -delta_sigma`` lower-bounds the log predictive likelihood
    of the validation events given the training events.
    """

    delta_sigma: float
    train_total: float
    full_total: float
    E_valid: int
    n: int
    train_groups: tuple = ()
    full_groups: tuple = ()

    @property
    def log_bound(self) -> float:
        return -self.delta_sigma

    @property
    def per_event(self) -> float:
        return self.log_bound / self.E_valid if self.E_valid else 0.0


def _place_and_sweep(state, rng, epsilon: float, max_sweeps: int) -> None:
    """Put every movable item in its best group, then greedy sweeps over them."""
    sides = (TOK,) if state.unified else (TOK, MEM)
    for side in sides:
        frozen = state.frozen_tok if side == TOK else state.frozen_mem
        for i in np.flatnonzero(~frozen):
            i = int(i)
            r = state.group_of(i, side)
            best_d, best_s = 0.0, r
            for s in state.active(side):
                s = int(s)
                if s == r:
                    continue
                d = state.delta(i, side, s)
                if d < best_d:
                    best_d, best_s = d, s
            if best_s != r:
                state.move(i, side, best_s)
    for _ in range(max_sweeps):
        if mh_sweep(state, rng, math.inf, epsilon).accepted == 0:
            break


def _extend_groups(known: np.ndarray, groups: np.ndarray, size: int) -> np.ndarray:
    """Groups for ``size`` items: ``groups`` on the ``known`` mask, fresh singletons elsewhere."""
    out = np.empty(size, dtype=np.int64)
    out[known] = groups
    B = int(groups.max()) + 1 if groups.size else 0
    out[~known] = B + np.arange(int(np.count_nonzero(~known)))
    return out


def _memory_map(train: ChainCounts, full: ChainCounts) -> np.ndarray:
    """Index of each full-chain memory in the training chain, or -1."""
    out = np.full(full.M, -1, dtype=np.int64)
    for j, w in enumerate(full.memories):
        if train.has_memory(w):
            out[j] = train.memory_id(w)
    return out


def _restricted_chain_total(train_chain: ChainCounts, full_chain: ChainCounts, part: Partition,
                            unified: bool, prior: PriorConfig, rng, epsilon: float,
                            max_sweeps: int) -> tuple[BlockState, Partition]:
    """Freeze the training items of ``full_chain`` at ``part`` and optimize the rest."""
    N_tr = train_chain.N
    tok_known = np.arange(full_chain.N) < N_tr
    tg = _extend_groups(tok_known, part.token_groups, full_chain.N)
    if unified:
        full_part = Partition.unified_from(full_chain, tg)
        mem_known = None
    else:
        mmap = _memory_map(train_chain, full_chain)
        mem_known = mmap >= 0
        mg = _extend_groups(mem_known, part.memory_groups[mmap[mem_known]], full_chain.M)
        full_part = Partition(tg, mg)
    state = BlockState(full_chain, full_part, unified, prior,
                       frozen_tokens=tok_known, frozen_memories=mem_known)
    _place_and_sweep(state, rng, epsilon, max_sweeps)
    return state, state.partition()


def holdout_bound(seq: Sequence, split: SplitSpec = SplitSpec(), n: int = 1, config: FitConfig = FitConfig(),
                  prior: PriorConfig = PriorConfig(), rng: Optional[np.random.Generator] = None,
                  max_sweeps: int = 20) -> HoldoutResult:
    """Lower bound on the predictive likelihood of a sequence's tail.

    A partition ``b*`` is fitted on the training prefix. On the whole
    sequence the training tokens and memories keep their groups and only
    the items first seen in the validation part are placed, greedily. Any
    placement ``b'`` gives a valid bound; a better one gives a tighter bound.

    Parameters
    ----------
    seq : Sequence
    split : SplitSpec
    n : int
        Markov order.
    config : FitConfig
        Search settings for the training fit; ``config.unified`` selects the
        shared token/memory partition.
    prior : PriorConfig
    rng : numpy.random.Generator, optional
    max_sweeps : int
        Cap on the restricted greedy sweeps.

    Returns
    -------
    HoldoutResult
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    T = len(seq)
    L = split.boundary(T)
    if L <= n:
        raise InputError(f"training prefix of {L} tokens has no order-{n} transition")
    x = seq.tokens
    # training tokens first, in sorted order, then the unseen ones
    seen = np.unique(x[:L])
    unseen = np.setdiff1d(np.unique(x), seen)
    remap = np.full(int(x.max()) + 1, -1, dtype=np.int64)
    remap[seen] = np.arange(len(seen))
    remap[unseen] = len(seen) + np.arange(len(unseen))
    train_seq = Sequence(remap[x[:L]])
    full_seq = Sequence(remap[x])

    train_chain = build_chain(train_seq, n)
    fit = agglomerative_search(train_chain, config, prior, rng=rng)
    if L == T:
        return HoldoutResult(0.0, fit.total, fit.total, 0, n,
                             (fit.partition.token_groups, fit.partition.memory_groups))
    full_chain = build_chain(full_seq, n)
    state, full_part = _restricted_chain_total(train_chain, full_chain, fit.partition, config.unified,
                                               prior, rng, config.epsilon, max_sweeps)
    full_total = state.dl()
    return HoldoutResult(full_total - fit.total, fit.total, full_total, full_chain.E - train_chain.E, n,
                         (fit.partition.token_groups, fit.partition.memory_groups),
                         (full_part.token_groups, full_part.memory_groups))


def holdout_bound_temporal(stream: EdgeStream, split: SplitSpec = SplitSpec(), n: int = 1,
                           config: FitConfig = FitConfig(), prior: PriorConfig = PriorConfig(),
                           unified: bool = False, rng: Optional[np.random.Generator] = None,
                           max_sweeps: int = 20) -> HoldoutResult:
    """Held-out bound for an edge stream under the order-``n`` temporal model.

    Nodes and labels seen in training keep their groups. New nodes are
    placed with the static block-model objective; new labels and memories
    of the label chain are then placed against the chain objective.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    L = split.boundary(stream.E)
    if n >= 1 and L <= n:
        raise InputError(f"training prefix of {L} events has no order-{n} transition")
    train = stream.prefix(L)
    fit = joint_fit(train, n, config, prior, unified, rng=rng)
    if L == stream.E:
        return HoldoutResult(0.0, fit.total, fit.total, 0, n, (fit.node_groups,))

    used = np.unique(np.concatenate([stream.src[:L], stream.dst[:L]]))
    known = np.zeros(stream.N, dtype=bool)
    known[used] = True
    c0 = np.empty(stream.N, dtype=np.int64)
    c0[used] = fit.node_groups
    C = fit.C
    c0[~known] = C + np.arange(int(np.count_nonzero(~known)))
    nodes = NodeState(stream, c0)
    nodes.frozen_tok = known
    _place_and_sweep(nodes, rng, config.epsilon, max_sweeps)
    # put the training groups back on their training labels
    cs = nodes.partition()
    relabel = {}
    for i in used:
        relabel.setdefault(int(cs[i]), int(c0[i]))
    nxt = C
    for g in np.unique(cs):
        if int(g) not in relabel:
            relabel[int(g)] = nxt
            nxt += 1
    c = np.array([relabel[int(g)] for g in cs], dtype=np.int64)

    if n == 0:
        full_total = temporal_dl(stream, c, 0).total
        return HoldoutResult(full_total - fit.total, fit.total, full_total, stream.E - L, 0,
                             (fit.node_groups,), (c,))

    seq_full, keys_full = label_sequence(stream, c)
    if list(keys_full[:len(fit.label_keys)]) != list(fit.label_keys):
        raise InvariantError("training labels changed identity on the full stream")
    full_chain = build_chain(seq_full, n)
    _, label_part = _restricted_chain_total(fit.label_chain, full_chain, fit.label_partition, unified,
                                            prior, rng, config.epsilon, max_sweeps)
    full_total = temporal_dl(stream, c, n, full_chain, label_part, prior).total
    return HoldoutResult(full_total - fit.total, fit.total, full_total, stream.E - L, n,
                         (fit.node_groups, fit.label_partition.token_groups),
                         (c, label_part.token_groups))


# ------------------------------------------------------------------ sampling
@dataclass
class Constraints:
    """Hard constraints of the microcanonical chain ensemble.

    ``memories`` are windows with the most recent token first;
    ``ers[r, s]`` counts transitions from memory group ``s`` to token
    group ``r``; ``k`` counts emissions of each token.
    """

    n: int
    token_groups: np.ndarray
    memories: np.ndarray
    memory_groups: np.ndarray
    ers: np.ndarray
    k: np.ndarray
    initial_memory: tuple
    unified: bool = False
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.token_groups = np.asarray(self.token_groups, dtype=np.int64)
        self.memories = np.asarray(self.memories, dtype=np.int64).reshape(len(self.memory_groups), self.n)
        self.memory_groups = np.asarray(self.memory_groups, dtype=np.int64)
        self.ers = np.asarray(self.ers, dtype=np.int64)
        self.k = np.asarray(self.k, dtype=np.int64)
        self.initial_memory = tuple(int(v) for v in self.initial_memory)
        self._lookup = {tuple(int(v) for v in w): int(g) for w, g in zip(self.memories, self.memory_groups)}
        self.validate()

    @classmethod
    def from_fit(cls, chain: ChainCounts, part: Partition) -> "Constraints":
        blocks = block_aggregates(chain, part)
        return cls(chain.n, part.token_groups, chain.memories, part.memory_groups, blocks.ers, chain.k,
                   chain.initial_memory, part.unified)

    @property
    def E(self) -> int:
        return int(self.ers.sum())

    def memory_group(self, window) -> int:
        if self.unified:
            return int(self.token_groups[window[0]])
        return self._lookup.get(tuple(int(v) for v in window), -1)

    def validate(self) -> None:
        N = len(self.k)
        if len(self.token_groups) != N:
            raise InputError("one token group per token required")
        if np.any(self.ers < 0) or np.any(self.k < 0):
            raise InputError("counts must be nonnegative")
        B_N = self.ers.shape[0]
        if N and (self.token_groups.min() < 0 or self.token_groups.max() >= B_N):
            raise InputError("token group outside the block matrix")
        e_r = np.bincount(self.token_groups, weights=self.k, minlength=B_N).astype(np.int64)
        if not np.array_equal(e_r, self.ers.sum(axis=1)):
            raise InputError("token group margins of ers disagree with the token counts")
        if len(self.initial_memory) != self.n:
            raise InputError(f"initial memory must hold {self.n} tokens")
        if self.memory_group(self.initial_memory) < 0:
            raise InputError("initial memory has no group")

    def to_json(self) -> str:
        return json.dumps({
            "n": self.n, "unified": self.unified,
            "token_groups": self.token_groups.tolist(),
            "memories": self.memories.tolist(), "memory_groups": self.memory_groups.tolist(),
            "ers": self.ers.tolist(), "k": self.k.tolist(),
            "initial_memory": list(self.initial_memory),
        })

    @classmethod
    def from_json(cls, text: str) -> "Constraints":
        d = json.loads(text)
        try:
            return cls(int(d["n"]), d["token_groups"], d["memories"], d["memory_groups"], d["ers"], d["k"],
                       d["initial_memory"], bool(d.get("unified", False)))
        except KeyError as exc:
            raise InputError(f"constraint file lacks field {exc}") from None


def _draw(weights: np.ndarray, rng) -> int:
    cw = np.cumsum(weights)
    return int(np.searchsorted(cw, rng.integers(cw[-1]), side="right"))


def _attempt(con: Constraints, rng) -> Optional[np.ndarray]:
    ers = con.ers.copy()
    k = con.k.copy()
    members = [np.flatnonzero(con.token_groups == r) for r in range(ers.shape[0])]
    window = list(con.initial_memory)
    E = con.E
    out = np.empty(E, dtype=np.int64)
    for t in range(E):
        s = con.memory_group(window)
        if s < 0 or ers[:, s].sum() == 0:
            return None
        r = _draw(ers[:, s], rng)
        m = members[r]
        x = int(m[_draw(k[m], rng)])
        ers[r, s] -= 1
        k[x] -= 1
        out[t] = x
        window = [x] + window[:-1]
    return out


def generate_sequence(con: Constraints, rng: Optional[np.random.Generator] = None,
                      max_tries: int = 10_000) -> Sequence:
    """Sample a sequence from the microcanonical ensemble of ``con``.

    From a memory in group ``s`` the next token group ``r`` is drawn with
    probability proportional to the remaining ``e_rs`` and the token with
    probability proportional to its remaining count, after which both
    counts are decremented. A run that reaches a memory with no remaining
    transitions is discarded and redrawn; every completed run has the same
    probability, so accepted samples are uniform over the sequences that
    meet the constraints.

    Returns
    -------
    Sequence
        The ``n`` tokens of the initial memory (oldest first) followed by
        ``E`` generated tokens.
    """
    rng = rng if rng is not None else np.random.default_rng()
    prefix = np.array(con.initial_memory[::-1], dtype=np.int64)
    for _ in range(max_tries):
        out = _attempt(con, rng)
        if out is not None:
            return Sequence(np.concatenate([prefix, out]))
    raise InvariantError(f"no complete sample in {max_tries} attempts; constraints may be unreachable")


def shuffle_null(seq: Sequence, rng: Optional[np.random.Generator] = None) -> Sequence:
    """Uniformly permute the tokens.

    Each wait travels with the token it precedes. The first position has
    no incoming wait, so the wait of whichever token lands there moves to
    the position left without one.
    """
    rng = rng if rng is not None else np.random.default_rng()
    T = len(seq)
    if T == 0:
        return seq
    p = rng.permutation(T)
    epochs = None if seq.epochs is None else seq.epochs[p]
    waits = None
    if seq.waits is not None:
        arrive = np.concatenate([[np.nan], seq.waits])[p]
        hole = int(np.flatnonzero(np.isnan(arrive))[0])
        if hole:
            arrive[hole] = arrive[0]
        waits = arrive[1:]
    return Sequence(seq.tokens[p], seq.alphabet, waits, epochs)
