"""Description-length minimization over token and memory partitions.

The search starts with every item in its own group, runs greedy
Metropolis-Hastings sweeps, then merges groups down a geometric ladder of
group counts, sweeping at each level. The best state seen anywhere on the
ladder, over all restarts, is returned.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .continuous import WaitModel
from .core import ChainCounts, Sequence, build_chain
from .dl import DLBreakdown, Partition, PriorConfig, baseline_plain_dl, total_dl
from .errors import ConfigError, InvariantError
from .state import FRESH, MEM, TOK, BlockState

# ties in description length are decided in favour of the incumbent
TIE_TOL = 1e-8


@dataclass
class FitConfig:
    seed: int = 0
    sweeps_per_level: int = 10
    epsilon: float = 1.0
    sigma_levels: float = 2.0
    restarts: int = 4
    beta_anneal: Optional[tuple] = None
    anneal_sweeps: int = 0
    unified: bool = False
    order: int = 1
    merge_candidates: int = 10
    refine: bool = True
    boundary: str = "condition_on_prefix"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be >= 1, got {self.restarts}")
        if self.sweeps_per_level < 1:
            raise ConfigError(f"sweeps_per_level must be >= 1, got {self.sweeps_per_level}")
        if not self.sigma_levels > 1:
            raise ConfigError(f"sigma_levels must be > 1, got {self.sigma_levels}")
        if self.order < 0:
            raise ConfigError(f"order must be >= 0, got {self.order}")
        if self.unified and self.order != 1:
            raise ConfigError("the unified model is only defined for order 1")
        if self.beta_anneal is not None:
            b0, b1 = self.beta_anneal
            if not (0 < b0 <= b1):
                raise ConfigError("beta_anneal must satisfy 0 < start <= end")


@dataclass
class SweepStats:
    proposed: int = 0
    accepted: int = 0

    def __iadd__(self, other: "SweepStats"):
        self.proposed += other.proposed
        self.accepted += other.accepted
        return self

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass
class FitResult:
    partition: Partition
    breakdown: DLBreakdown
    accept_rate: float = 0.0
    order: int = 1
    seed: int = 0
    order_table: Optional[list] = None
    trace: list = field(default_factory=list)
    config: Optional[dict] = None
    timings: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.breakdown.total

    @property
    def B_N(self) -> int:
        return self.partition.B_N

    @property
    def B_M(self) -> int:
        return self.partition.B_M


def _items(state: BlockState, sides) -> list[tuple[int, int]]:
    out = []
    for side in sides:
        frozen = state.frozen_tok if side == TOK else state.frozen_mem
        out.extend((int(i), side) for i in np.flatnonzero(~frozen))
    return out


def mh_sweep(state: BlockState, rng: np.random.Generator, beta: float = math.inf,
             epsilon: float = 1.0, sides=None) -> SweepStats:
    """One pass over all movable items in random order.

    Targets come from :meth:`BlockState.propose`. At ``beta == inf`` a move is
    accepted iff it does not increase the description length; otherwise the
    Metropolis-Hastings rule for ``exp(-beta * Sigma)`` with the proposal
    ratio correction is used.

    Returns
    -------
    SweepStats
        Number of proposals and of accepted moves.
    """
    if sides is None:
        sides = (TOK,) if state.unified else (TOK, MEM)
    items = _items(state, sides)
    stats = SweepStats()
    greedy = math.isinf(beta)
    for idx in rng.permutation(len(items)):
        i, side = items[idx]
        stats.proposed += 1
        s = state.propose(i, side, rng, epsilon)
        r = state.group_of(i, side)
        if s == r:
            continue
        occ = state.n_tok if (side == TOK or state.unified) else state.n_mem
        if s == FRESH and occ[r] == 1:
            continue
        d = state.delta(i, side, s)
        if greedy:
            if d <= 0:
                state.move(i, side, s)
                stats.accepted += 1
            continue
        q_fwd = state.proposal_prob(i, side, s, epsilon)
        alone = occ[r] == 1
        state.move(i, side, s)
        q_rev = state.proposal_prob(i, side, FRESH if alone else r, epsilon)
        log_a = -beta * d + math.log(q_rev) - math.log(q_fwd)
        if log_a >= 0 or rng.random() < math.exp(log_a):
            stats.accepted += 1
        else:
            # a vacated label r sits on the free list and is reclaimed by name
            state.move(i, side, r)
    return stats


def _merge_round(state: BlockState, side: int, target: int, rng: np.random.Generator,
                 n_cand: int, epsilon: float) -> None:
    """Merge groups on one side until at most ``target`` remain."""
    while state.n_groups(side) > target:
        active = state.active(side)
        cand = {}
        for r in active:
            r = int(r)
            members = state.members(side, r)
            for _ in range(n_cand):
                i = int(members[rng.integers(len(members))])
                s = state.propose(i, side, rng, epsilon)
                if s == FRESH or s == r:
                    s = int(active[rng.integers(len(active))])
                if s == r:
                    continue
                key = (r, s)
                if key not in cand:
                    cand[key] = state.merge_delta(side, r, s)
        if not cand:
            # only happens with two groups and unlucky draws
            a = [int(g) for g in active[:2]]
            cand[(a[0], a[1])] = state.merge_delta(side, a[0], a[1])
        order = sorted(cand.items(), key=lambda kv: (kv[1], kv[0]))
        parent = {int(g): int(g) for g in active}

        def find(g):
            while parent[g] != g:
                parent[g] = parent[parent[g]]
                g = parent[g]
            return g

        need = state.n_groups(side) - target
        for (r, s), _ in order:
            if need == 0:
                break
            fr, fs = find(r), find(s)
            if fr == fs:
                continue
            parent[fr] = fs
            need -= 1
        for g in active:
            root = find(int(g))
            if root != g:
                state.merge(side, int(g), root)


def _snapshot(state):
    return state.snapshot()


def _restore(state, snap) -> None:
    state.restore(snap)


def _sweep_level(state: BlockState, rng, cfg: FitConfig, stats: SweepStats, sides=None):
    for _ in range(cfg.sweeps_per_level):
        st = mh_sweep(state, rng, math.inf, cfg.epsilon, sides)
        stats += st
        if st.accepted == 0:
            break


def _ladder_run(state: BlockState, rng, cfg: FitConfig, stats: SweepStats, trace: list,
                best: list) -> None:
    """Descend the group-count ladder from the current state down to one group per side."""
    sides = (TOK,) if state.unified else (TOK, MEM)
    levels = []
    while True:
        _sweep_level(state, rng, cfg, stats)
        S = state.dl()
        levels.append(((state.B_N, state.B_M), S, state.snapshot()))
        if S < best[0] - TIE_TOL:
            best[0], best[1] = S, _snapshot(state)
        trace.append(best[0])
        if all(state.n_groups(sd) == 1 for sd in sides):
            break
        for sd in sides:
            B = state.n_groups(sd)
            target = max(1, int(math.floor(B / cfg.sigma_levels)))
            if B > 1:
                _merge_round(state, sd, target, rng, cfg.merge_candidates, cfg.epsilon)
    return levels


def _refine(state: BlockState, rng, cfg: FitConfig, stats: SweepStats, trace: list, best: list,
            patience: int = 3, max_rounds: int = 4) -> None:
    """Finer descent from the best state, one side at a time.

    A coarse phase merges away ``B // 8`` groups at a time, halving the
    step whenever that fails to improve. A fine phase then merges one pair
    per rung and stops after ``patience`` rungs without improvement.
    Rounds repeat while some side improved.
    """
    sides = (TOK,) if state.unified else (TOK, MEM)

    def attempt(sd, target) -> bool:
        _merge_round(state, sd, target, rng, cfg.merge_candidates, cfg.epsilon)
        _sweep_level(state, rng, cfg, stats)
        S = state.dl()
        better = S < best[0] - TIE_TOL
        if better:
            best[0], best[1] = S, _snapshot(state)
        trace.append(best[0])
        return better

    for _ in range(max_rounds):
        improved = False
        for sd in sides:
            _restore(state, best[1])
            step = state.n_groups(sd) // 8
            while step > 1:
                B = state.n_groups(sd)
                if B - step < 1:
                    step //= 2
                elif attempt(sd, B - step):
                    improved = True
                else:
                    _restore(state, best[1])
                    step //= 2
            _restore(state, best[1])
            misses = 0
            while misses < patience and state.n_groups(sd) > 1:
                if attempt(sd, state.n_groups(sd) - 1):
                    misses = 0
                    improved = True
                else:
                    misses += 1
        if not improved:
            break


def _anneal(state: BlockState, rng, cfg: FitConfig, stats: SweepStats, trace: list, best: list) -> None:
    b0, b1 = cfg.beta_anneal
    _restore(state, best[1])
    n = max(cfg.anneal_sweeps, 1)
    for beta in np.geomspace(b0, b1, n):
        stats += mh_sweep(state, rng, float(beta), cfg.epsilon)
    _sweep_level(state, rng, cfg, stats)
    S = state.dl()
    if S < best[0] - TIE_TOL:
        best[0], best[1] = S, _snapshot(state)
    trace.append(best[0])


def agglomerative_search(chain: ChainCounts, config: FitConfig = FitConfig(),
                         prior: PriorConfig = PriorConfig(), wait_model: Optional[WaitModel] = None,
                         rng: Optional[np.random.Generator] = None,
                         initial: Optional[Partition] = None) -> FitResult:
    """Minimize the description length of ``chain`` over partitions.

    Parameters
    ----------
    chain : ChainCounts
    config : FitConfig
    prior : PriorConfig
    wait_model : WaitModel, optional
        With ``mode == "per_group"`` the waiting times take part in the
        search; ``per_memory`` only adds a constant.
    rng : numpy.random.Generator, optional
        Defaults to a generator seeded with ``config.seed``.
    initial : Partition, optional
        Extra starting point tried before the restarts.

    Returns
    -------
    FitResult
        Best partition over all restarts, with a from-scratch breakdown.
    """
    if chain.E == 0:
        raise ConfigError("cannot fit an empty chain")
    if wait_model is not None:
        wait_model = wait_model.resolved(chain)
    t0 = time.perf_counter()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    stats = SweepStats()
    trace: list = []
    best = [math.inf, None]
    state = None
    starts = [initial] if initial is not None else []
    starts += [None] * config.restarts
    for start in starts:
        state = BlockState(chain, start, unified=config.unified, config=prior, wait_model=wait_model)
        if start is not None:
            _sweep_level(state, rng, config, stats)
            S = state.dl()
            if S < best[0] - TIE_TOL:
                best[0], best[1] = S, _snapshot(state)
            trace.append(best[0])
            continue
        _ladder_run(state, rng, config, stats, trace, best)
    if config.refine:
        _refine(state, rng, config, stats, trace, best)
    if config.beta_anneal is not None:
        _anneal(state, rng, config, stats, trace, best)
    _restore(state, best[1])
    part = state.partition().relabeled()
    bd = total_dl(chain, part, prior, wait_model)
    if abs(bd.total - best[0]) > 1e-6:
        raise InvariantError(f"incremental total {best[0]} disagrees with scratch {bd.total}")
    return FitResult(part, bd, stats.rate, chain.n, config.seed, trace=trace,
                     config=asdict(config), timings={"search": time.perf_counter() - t0})


def fit_fixed(chain: ChainCounts, part: Partition, prior: PriorConfig = PriorConfig(),
              wait_model: Optional[WaitModel] = None) -> FitResult:
    """Evaluate a given partition without searching."""
    if wait_model is not None:
        wait_model = wait_model.resolved(chain)
    return FitResult(part, total_dl(chain, part, prior, wait_model), order=chain.n)


def order_scan(seq: Sequence, n_min: int, n_max: int, config: FitConfig = FitConfig(),
               prior: PriorConfig = PriorConfig(), wait_model: Optional[WaitModel] = None) -> FitResult:
    """Fit every order in ``[n_min, n_max]`` and return the argmin.

    All orders are conditioned on the same ``n_max``-token prefix, so they
    describe exactly the same emissions and their totals are comparable.
    The waiting-time ``beta`` is resolved once, from the lowest order, and
    shared. Ties go to the lowest order. The returned ``order_table`` lists
    ``n, B_N, B_M, total`` and the plain baseline per order.
    """
    if not 1 <= n_min <= n_max:
        raise ConfigError(f"need 1 <= n_min <= n_max, got {n_min}..{n_max}")
    if config.unified and n_max > 1:
        raise ConfigError("the unified model is only defined for order 1")
    offset = n_max if config.boundary == "condition_on_prefix" else 0
    if wait_model is not None and wait_model.beta is None:
        wait_model = wait_model.resolved(build_chain(seq, n_min, config.boundary, offset))
    rows, best = [], None
    for n in range(n_min, n_max + 1):
        chain = build_chain(seq, n, config.boundary, offset)
        cfg = FitConfig(**{**asdict(config), "order": n})
        res = agglomerative_search(chain, cfg, prior, wait_model)
        rows.append({
            "n": n, "B_N": res.B_N, "B_M": res.B_M, "total": res.total,
            "baseline": baseline_plain_dl(chain), "M": chain.M, "E": chain.E,
        })
        if best is None or res.total < best.total - TIE_TOL:
            best = res
    best.order_table = rows
    return best
