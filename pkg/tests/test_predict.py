import math
from collections import Counter
from itertools import permutations

import numpy as np
import pytest
from scipy import stats

from dynblock import synthetic as sy
from dynblock.core import Sequence, build_chain
from dynblock.dl import Partition, block_aggregates
from dynblock.errors import ConfigError, InputError, InvariantError
from dynblock.inference import FitConfig, agglomerative_search
from dynblock.predict import (
    Constraints, SplitSpec, generate_sequence, holdout_bound, holdout_bound_temporal, shuffle_null,
)

from oracles import nmi


def test_split_spec():
    assert SplitSpec(0.5).boundary(10) == 5
    assert SplitSpec(1.0).boundary(7) == 7
    with pytest.raises(ConfigError):
        SplitSpec(0.0)
    with pytest.raises(ConfigError):
        SplitSpec(1.5)
    with pytest.raises(InputError):
        SplitSpec(0.01).boundary(10)


def test_empty_validation_costs_nothing():
    seq = sy.planted_chain(N=8, E=400, rng=0).seq
    res = holdout_bound(seq, SplitSpec(1.0), 1, FitConfig(seed=0, restarts=1))
    assert res.delta_sigma == 0.0 and res.log_bound == 0.0
    assert res.E_valid == 0 and res.per_event == 0.0


def test_bound_is_nonpositive_with_validation():
    for seed in range(5):
        seq = sy.planted_chain(N=8, E=600, rng=seed).seq
        res = holdout_bound(seq, SplitSpec(0.6), 1, FitConfig(seed=seed, restarts=1))
        assert res.delta_sigma > 0
        assert res.delta_sigma == pytest.approx(res.full_total - res.train_total, abs=1e-9)
        assert res.per_event == pytest.approx(-res.delta_sigma / res.E_valid)


def test_training_prefix_needs_a_transition():
    with pytest.raises(InputError):
        holdout_bound(Sequence([0, 1, 0, 1, 1, 0]), SplitSpec(0.2), 2)


def test_temporal_holdout_order_zero():
    stream, _ = sy.structured_stream(N=20, E=400, rng=1)
    assert holdout_bound_temporal(stream, SplitSpec(1.0), 0, FitConfig(seed=0)).delta_sigma == 0.0
    res = holdout_bound_temporal(stream, SplitSpec(0.5), 0, FitConfig(seed=0))
    assert res.delta_sigma > 0 and res.E_valid == 200


def _abab_constraints():
    ch = build_chain(Sequence([0, 1, 0, 1]), 1)
    return Constraints.from_fit(ch, Partition.trivial(ch))


def test_generated_sequence_meets_constraints_exactly():
    con = _abab_constraints()
    rng = np.random.default_rng(0)
    for _ in range(20):
        out = generate_sequence(con, rng)
        assert out.tokens[0] == 0
        assert Counter(out.tokens[1:].tolist()) == {0: 1, 1: 2}


def test_generated_sequences_reproduce_block_counts():
    p = sy.planted_chain(N=12, E=3000, rng=2)
    ch = build_chain(p.seq, 1)
    part = Partition(p.token_groups, p.memory_groups[ch.memories[:, 0]])
    con = Constraints.from_fit(ch, part)
    rng = np.random.default_rng(3)
    for _ in range(5):
        gen = generate_sequence(con, rng)
        g = build_chain(gen, 1)
        assert np.array_equal(g.k, ch.k)
        gpart = Partition(p.token_groups, p.memory_groups[g.memories[:, 0]])
        assert np.array_equal(block_aggregates(g, gpart).ers, con.ers)


def test_single_group_orderings_are_uniform():
    # three tokens, every window known, multiset {0, 0, 1, 1, 2}
    ch = build_chain(Sequence([2, 0, 1, 2, 0, 1]), 1)
    con = Constraints.from_fit(ch, Partition.trivial(ch))
    assert con.k.tolist() == [2, 2, 1]
    rng = np.random.default_rng(4)
    draws = 100_000
    counts = Counter(tuple(generate_sequence(con, rng).tokens[1:].tolist()) for _ in range(draws))
    support = set(permutations([0, 0, 1, 1, 2]))
    assert set(counts) == support and len(support) == 30
    obs = np.array([counts[s] for s in sorted(support)])
    assert stats.chisquare(obs).pvalue > 0.01


def test_refit_of_generated_data_recovers_partition():
    p = sy.planted_chain(N=20, E=10_000, rng=5)
    ch = build_chain(p.seq, 1)
    part = Partition(p.token_groups, p.memory_groups[ch.memories[:, 0]])
    gen = generate_sequence(Constraints.from_fit(ch, part), np.random.default_rng(6))
    g = build_chain(gen, 1)
    res = agglomerative_search(g, FitConfig(seed=0))
    assert nmi(res.partition.token_groups, p.token_groups) >= 0.95
    assert nmi(res.partition.memory_groups, p.memory_groups[g.memories[:, 0]]) >= 0.95


def test_constraints_json_round_trip():
    p = sy.planted_chain(N=6, E=200, rng=7)
    ch = build_chain(p.seq, 1)
    con = Constraints.from_fit(ch, Partition(p.token_groups, p.memory_groups[ch.memories[:, 0]]))
    back = Constraints.from_json(con.to_json())
    for f in ("token_groups", "memories", "memory_groups", "ers", "k"):
        assert np.array_equal(getattr(back, f), getattr(con, f))
    assert (back.n, back.initial_memory, back.unified) == (con.n, con.initial_memory, con.unified)
    a = generate_sequence(con, np.random.default_rng(8))
    b = generate_sequence(back, np.random.default_rng(8))
    assert np.array_equal(a.tokens, b.tokens)


def test_inconsistent_constraints_rejected():
    con = _abab_constraints()
    with pytest.raises(InputError):
        Constraints(1, [0, 0], con.memories, con.memory_groups, con.ers + 1, con.k, (0,))
    with pytest.raises(InputError):
        Constraints(1, [0, 0], con.memories, con.memory_groups, con.ers, con.k, (5,))
    with pytest.raises(InputError):
        Constraints.from_json('{"n": 1}')


def test_unreachable_constraints_raise():
    # memory 0 must emit 0 and then has nothing left, so token 1 is never reached
    con = Constraints(1, [0, 1], [[0], [1]], [0, 1], [[1, 0], [0, 1]], [1, 1], (0,))
    with pytest.raises(InvariantError):
        generate_sequence(con, np.random.default_rng(0), max_tries=50)


def test_shuffle_preserves_tokens():
    seq = sy.planted_chain(N=10, E=500, rng=9).seq
    out = shuffle_null(seq, np.random.default_rng(0))
    assert len(out) == len(seq)
    assert sorted(out.tokens.tolist()) == sorted(seq.tokens.tolist())
    assert shuffle_null(Sequence([])).tokens.size == 0


def test_shuffle_moves_waits_with_their_tokens():
    toks = np.random.default_rng(1).integers(0, 5, 300)
    seq = Sequence(toks, waits=toks[1:] + 1.0)
    out = shuffle_null(seq, np.random.default_rng(2))
    assert sorted(out.waits.tolist()) == sorted(seq.waits.tolist())
    # only the slot left empty by the token moved to the front may disagree
    assert np.sum(out.waits != out.tokens[1:] + 1.0) <= 1


def _repeats(seq):
    return int(np.sum(seq.tokens[1:] == seq.tokens[:-1]))


def test_double_shuffle_matches_single_shuffle():
    seq = sy.planted_chain(N=6, E=300, rng=10).seq
    rng = np.random.default_rng(11)
    once = [_repeats(shuffle_null(seq, rng)) for _ in range(2000)]
    twice = [_repeats(shuffle_null(shuffle_null(seq, rng), rng)) for _ in range(2000)]
    assert stats.ks_2samp(once, twice).pvalue > 0.01
    # and both sit at the permutation expectation
    k = np.bincount(seq.tokens)
    T = len(seq)
    expect = float(np.sum(k * (k - 1))) / T
    assert np.mean(once) == pytest.approx(expect, rel=0.05)


def test_empty_training_set_rejected():
    with pytest.raises(InputError):
        holdout_bound(Sequence([0, 1, 0]), SplitSpec(0.1), 1)
    assert math.isfinite(holdout_bound(Sequence([0, 1, 0, 1, 0, 1]), SplitSpec(0.5), 1).delta_sigma)
