import math
from itertools import product

import numpy as np
import pytest

from dynblock import synthetic as sy
from dynblock.core import Sequence, build_chain
from dynblock.dl import Partition, PriorConfig, total_dl
from dynblock.errors import ConfigError, InvariantError
from dynblock.inference import FitConfig, agglomerative_search, mh_sweep, order_scan
from dynblock.state import FRESH, MEM, TOK, BlockState

from oracles import set_partitions


def _state(seed, unified=False, n=1):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(2, 7))
    toks = rng.integers(0, N, int(rng.integers(15, 60)))
    toks[:N] = rng.permutation(N)
    ch = build_chain(Sequence(toks), 1 if unified else n)
    tg = np.unique(rng.integers(0, int(rng.integers(1, N + 1)), N), return_inverse=True)[1]
    if unified:
        part = Partition.unified_from(ch, tg)
    else:
        part = Partition(tg, np.unique(rng.integers(0, int(rng.integers(1, ch.M + 1)), ch.M), return_inverse=True)[1])
    return ch, BlockState(ch, part, unified=unified), rng


def _scratch(state):
    return total_dl(state.chain, state.partition(), state.config).total


def test_state_total_matches_scratch():
    for seed in range(10):
        _, st, _ = _state(seed, unified=seed % 2 == 0)
        assert st.dl() == pytest.approx(_scratch(st), abs=1e-9)


def test_move_to_own_group_is_free():
    for seed in range(10):
        _, st, _ = _state(seed)
        for side in (TOK, MEM):
            for i in range(st.n_items(side)):
                r = st.group_of(i, side)
                assert st.delta(i, side, r) == 0.0
                assert st.move(i, side, r) == r


def test_split_from_single_group():
    ch = build_chain(sy.iid_sequence(N=6, E=300, rng=1), 1)
    st = BlockState(ch, Partition.trivial(ch))
    before = st.dl_terms()
    d = st.delta(2, TOK, FRESH)
    st.move(2, TOK, FRESH)
    after = st.dl_terms()
    assert d == pytest.approx(st.dl() - sum(before.values()), abs=1e-9)
    assert d == pytest.approx(_scratch(st) - total_dl(ch, Partition.trivial(ch)).total, abs=1e-9)
    assert after["token_partition_prior"] - before["token_partition_prior"] > 0


def test_merge_delta_matches_scratch():
    for seed in range(20):
        _, st, rng = _state(seed, unified=seed % 3 == 0)
        side = TOK if st.unified or seed % 2 else MEM
        if st.n_groups(side) < 2:
            continue
        r, s = (int(v) for v in rng.choice(st.active(side), 2, replace=False))
        S0 = st.dl()
        d = st.merge_delta(side, r, s)
        st.merge(side, r, s)
        st.check()
        assert d == pytest.approx(_scratch(st) - S0, abs=1e-9)


@pytest.mark.parametrize("unified", [False, True])
def test_proposal_probabilities_sum_to_one(unified):
    for seed in range(15):
        _, st, _ = _state(seed, unified=unified)
        for side in ((TOK,) if unified else (TOK, MEM)):
            for i in range(st.n_items(side)):
                for eps in (0.1, 1.0, 5.0):
                    targets = [int(g) for g in st.active(side)] + [FRESH]
                    total = sum(st.proposal_prob(i, side, s, eps) for s in targets)
                    assert total == pytest.approx(1.0, abs=1e-12)


def test_proposal_frequencies_match_probabilities():
    _, st, _ = _state(3)
    rng = np.random.default_rng(0)
    draws = 40_000
    for side in (TOK, MEM):
        i = 0
        targets = [int(g) for g in st.active(side)] + [FRESH]
        counts = dict.fromkeys(targets, 0)
        for _ in range(draws):
            counts[st.propose(i, side, rng, 1.0)] += 1
        for s in targets:
            p = st.proposal_prob(i, side, s, 1.0)
            assert abs(counts[s] / draws - p) < 5 * math.sqrt(p * (1 - p) / draws) + 1e-12


def test_greedy_sweeps_never_increase():
    for seed in range(8):
        _, st, _ = _state(seed, unified=seed % 2 == 1)
        st.restore((np.arange(st.N), None if st.unified else np.arange(st.Ms)))
        rng = np.random.default_rng(seed)
        prev = st.dl()
        for _ in range(6):
            mh_sweep(st, rng)
            cur = st.dl()
            assert cur <= prev + 1e-9
            prev = cur
        st.check()


def test_mh_stationary_distribution():
    # three symbols in unified mode: the five set partitions of {0, 1, 2}
    ch = build_chain(Sequence([0, 1, 0, 2, 2, 1, 0, 1, 2, 2, 0]), 1)
    beta = 0.35
    states = list(set_partitions(3))
    sigma = np.array([total_dl(ch, Partition.unified_from(ch, np.array(tg))).total for tg in states])
    target = np.exp(-beta * (sigma - sigma.min()))
    target /= target.sum()

    st = BlockState(ch, None, unified=True)
    rng = np.random.default_rng(0)
    sweeps = 60_000
    counts = dict.fromkeys(states, 0)
    for _ in range(sweeps):
        mh_sweep(st, rng, beta=beta)
        counts[tuple(st.partition().token_groups.tolist())] += 1
    emp = np.array([counts[s] for s in states]) / sweeps
    tv = 0.5 * np.abs(emp - target).sum()
    assert tv < 0.01
    st.check()


def test_unified_assignments_stay_tied():
    ch = build_chain(sy.planted_chain(N=12, E=2000, rng=2).seq, 1)
    res = agglomerative_search(ch, FitConfig(seed=0, unified=True, restarts=2))
    part = res.partition
    assert part.unified
    assert np.array_equal(part.memory_groups, part.token_groups[ch.memories[:, 0]])
    st = BlockState(ch, part, unified=True)
    rng = np.random.default_rng(1)
    for _ in range(5):
        mh_sweep(st, rng, beta=1.0)
        p = st.partition()
        assert np.array_equal(p.memory_groups, p.token_groups[ch.memories[:, 0]])
    st.check()


def test_search_is_deterministic_and_consistent():
    ch = build_chain(sy.planted_chain(N=16, E=3000, rng=3).seq, 1)
    a = agglomerative_search(ch, FitConfig(seed=11))
    b = agglomerative_search(ch, FitConfig(seed=11))
    assert a.total == b.total
    assert np.array_equal(a.partition.token_groups, b.partition.token_groups)
    assert np.array_equal(a.partition.memory_groups, b.partition.memory_groups)
    assert a.total == pytest.approx(total_dl(ch, a.partition).total, abs=1e-6)
    assert all(y <= x + 1e-12 for x, y in zip(a.trace, a.trace[1:]))
    assert 0.0 <= a.accept_rate <= 1.0


def test_search_with_annealing_and_uniform_prior():
    ch = build_chain(sy.planted_chain(N=10, E=1500, rng=4).seq, 1)
    cfg = FitConfig(seed=0, restarts=1, beta_anneal=(0.5, 4.0), anneal_sweeps=5)
    res = agglomerative_search(ch, cfg, PriorConfig("uniform"))
    assert res.total == pytest.approx(total_dl(ch, res.partition, PriorConfig("uniform")).total, abs=1e-6)


def test_search_from_initial_partition_never_worse():
    ch = build_chain(sy.planted_chain(N=10, E=2000, rng=5).seq, 1)
    planted = Partition((np.arange(10) >= 5).astype(int), ch.memories[:, 0] % 2)
    res = agglomerative_search(ch, FitConfig(seed=0, restarts=1), initial=planted)
    assert res.total <= total_dl(ch, planted).total + 1e-9


def test_small_chain_reaches_exhaustive_minimum():
    ch = build_chain(Sequence([0, 1, 2, 0, 1, 2, 0, 2, 1, 0, 1, 2, 2, 0]), 1)
    best = min(total_dl(ch, Partition(np.array(t), np.array(m))).total
               for t in set_partitions(ch.N) for m in set_partitions(ch.M))
    assert agglomerative_search(ch, FitConfig(seed=0)).total == pytest.approx(best, abs=1e-9)


def test_iid_tokens_give_one_group():
    ones = 0
    for seed in range(20):
        ch = build_chain(sy.iid_sequence(N=10, E=10_000, rng=seed), 1)
        res = agglomerative_search(ch, FitConfig(seed=seed))
        ones += res.B_N == 1 and res.B_M == 1
    assert ones >= 19


def test_order_scan_table():
    seq = sy.iid_sequence(N=4, E=2000, rng=6)
    res = order_scan(seq, 1, 2, FitConfig(seed=0, restarts=1))
    assert [row["n"] for row in res.order_table] == [1, 2]
    assert len({row["E"] for row in res.order_table}) == 1
    assert res.order == 1
    with pytest.raises(ConfigError):
        order_scan(seq, 2, 1)
    with pytest.raises(ConfigError):
        order_scan(seq, 1, 2, FitConfig(unified=True))


@pytest.mark.parametrize("kwargs", [
    dict(epsilon=0.0), dict(restarts=0), dict(sweeps_per_level=0), dict(sigma_levels=1.0),
    dict(order=-1), dict(unified=True, order=2), dict(beta_anneal=(2.0, 1.0)),
])
def test_fit_config_validation(kwargs):
    with pytest.raises(ConfigError):
        FitConfig(**kwargs)


def test_unified_state_needs_order_one():
    ch = build_chain(Sequence([0, 1, 0, 1, 1]), 2)
    with pytest.raises(InvariantError):
        BlockState(ch, None, unified=True)


def test_empty_chain_rejected():
    ch = build_chain(Sequence([0, 1]), 1)
    ch.a_count = ch.a_count * 0
    with pytest.raises(ConfigError):
        agglomerative_search(ch)
