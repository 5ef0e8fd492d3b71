import math
from collections import Counter
from itertools import product

import numpy as np
import pytest

from dynblock import synthetic as sy
from dynblock.core import EdgeStream, build_chain, ingest_edge_stream
from dynblock.dl import Partition, partition_prior, total_dl
from dynblock.errors import ConfigError, InputError, InvariantError
from dynblock.inference import FitConfig
from dynblock.state import FRESH, TOK
from dynblock.temporal import (
    NodePartition, NodeState, joint_fit, label_sequence, static_dcsbm_dl, static_term, temporal_dl,
)

from oracles import nmi


def _random_stream(rng, directed):
    N = int(rng.integers(2, 7))
    E = int(rng.integers(3, 21))
    return ingest_edge_stream([(int(rng.integers(N)), int(rng.integers(N))) for _ in range(E)], directed)


def test_label_sequence_examples():
    s = ingest_edge_stream([(1, 2), (3, 4)])
    seq, keys = label_sequence(s, [0, 0, 1, 1])
    assert [keys[t] for t in seq.tokens] == [(0, 0), (1, 1)]
    one, keys1 = label_sequence(s, [0, 0, 0, 0])
    assert keys1 == [(0, 0)] and set(one.tokens.tolist()) == {0}


def test_label_chain_length():
    rng = np.random.default_rng(0)
    for directed in (False, True):
        s = sy.random_stream(N=12, E=300, directed=directed, rng=rng)
        c = rng.integers(0, 3, s.N)
        c = np.unique(c, return_inverse=True)[1]
        seq, keys = label_sequence(s, c)
        assert len(seq) == s.E
        assert build_chain(seq, 2).E == s.E - 2
        for t in range(0, s.E, 37):
            a, b = c[s.src[t]], c[s.dst[t]]
            assert keys[seq.tokens[t]] == ((a, b) if directed else (min(a, b), max(a, b)))
    with pytest.raises(InputError):
        label_sequence(s, [0])


def test_static_term_single_edge_is_ln3():
    s = ingest_edge_stream([("u", "v")])
    assert static_term(s, [0, 0]) == pytest.approx(math.log(3), abs=1e-14)


def test_empty_stream():
    s = EdgeStream(["a"], np.array([], dtype=np.int64), np.array([], dtype=np.int64))
    assert static_term(s, [0]) == 0.0
    assert temporal_dl(s, [0], 1).total == 0.0


@pytest.mark.parametrize("directed", [False, True])
def test_static_term_normalizes_over_edge_sequences(directed):
    # exp(-static_term) / E! summed over every edge sequence is a probability distribution
    for N in (1, 2, 3):
        pairs = [(i, j) for i in range(N) for j in range(N) if directed or i <= j]
        for E in (1, 2, 3):
            for c in ([0] * N, list(range(N))):
                total = 0.0
                for seq in product(pairs, repeat=E):
                    s = EdgeStream(list(range(N)), np.array([a for a, _ in seq]), np.array([b for _, b in seq]),
                                   directed)
                    total += math.exp(-static_term(s, c)) / math.factorial(E)
                assert total == pytest.approx(1.0, abs=1e-12)


def test_node_partition_counts():
    s = ingest_edge_stream([(0, 1), (1, 2), (2, 2), (0, 3)])
    npart = NodePartition.from_stream(s, [0, 0, 1, 1])
    assert npart.m.tolist() == [[1, 2], [2, 1]]
    assert npart.ends.tolist() == [4, 4] and npart.loops.tolist() == [0, 1]
    with pytest.raises(InvariantError):
        NodePartition.from_stream(s, [0, 0, 2, 2])


def test_order_zero_adds_memoryless_ordering():
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = _random_stream(rng, bool(rng.integers(2)))
        c = np.unique(rng.integers(0, 3, s.N), return_inverse=True)[1]
        bd = temporal_dl(s, c, 0)
        assert bd.total == pytest.approx(static_dcsbm_dl(s, c) + math.lgamma(s.E + 1), abs=1e-9)


def test_dynamic_total_decomposes():
    rng = np.random.default_rng(2)
    for trial in range(20):
        directed = trial % 2 == 1
        s = _random_stream(rng, directed)
        c = np.unique(rng.integers(0, 3, s.N), return_inverse=True)[1]
        seq, _ = label_sequence(s, c)
        ch = build_chain(seq, 1)
        bd = temporal_dl(s, c, 1, ch, Partition.trivial(ch))
        C = int(c.max()) + 1
        m = Counter((int(c[a]), int(c[b])) if directed else tuple(sorted((int(c[a]), int(c[b]))))
                    for a, b in zip(s.src, s.dst))
        pairs = C * C if directed else C * (C + 1) // 2
        corr = sum(math.lgamma(v + 1) for v in m.values()) - math.log(math.comb(pairs + s.E - 1, s.E))
        assert bd.extra["label_count_correction"] == pytest.approx(corr, abs=1e-9)
        expect = static_dcsbm_dl(s, c) + total_dl(ch, Partition.trivial(ch)).total + corr
        assert bd.total == pytest.approx(expect, abs=1e-9)


def test_temporal_dl_needs_label_partition():
    s = ingest_edge_stream([(0, 1), (1, 2), (0, 2)])
    with pytest.raises(ConfigError):
        temporal_dl(s, [0, 0, 0], 1)


def test_node_state_deltas_match_scratch():
    rng = np.random.default_rng(3)
    worst = 0.0
    for trial in range(60):
        s = _random_stream(rng, trial % 2 == 1)
        c = np.unique(rng.integers(0, int(rng.integers(1, 4)), s.N), return_inverse=True)[1]
        ns = NodeState(s, c)
        assert ns.dl() == pytest.approx(static_dcsbm_dl(s, ns.partition()), abs=1e-9)
        for _ in range(20):
            i = int(rng.integers(s.N))
            t = FRESH if rng.random() < 0.2 else int(rng.choice(ns.active()))
            S0 = ns.dl()
            d = ns.delta(i, TOK, t)
            ns.move(i, TOK, t)
            worst = max(worst, abs(d - (static_dcsbm_dl(s, ns.partition()) - S0)))
        if ns.n_groups() > 1:
            r, t = (int(v) for v in rng.choice(ns.active(), 2, replace=False))
            S0 = ns.dl()
            d = ns.merge_delta(TOK, r, t)
            ns.merge(TOK, r, t)
            worst = max(worst, abs(d - (static_dcsbm_dl(s, ns.partition()) - S0)))
    assert worst < 1e-9


def test_node_proposals_sum_to_one():
    rng = np.random.default_rng(4)
    s = sy.random_stream(N=10, E=60, rng=rng)
    ns = NodeState(s, rng.integers(0, 3, s.N))
    for i in range(s.N):
        targets = [int(g) for g in ns.active()] + [FRESH]
        assert sum(ns.proposal_prob(i, TOK, t, 1.0) for t in targets) == pytest.approx(1.0, abs=1e-12)


def test_order_zero_fit_is_the_static_fit():
    s, groups = sy.structured_stream(N=30, E=800, p_repeat=0.0, rng=5)
    fit = joint_fit(s, 0, FitConfig(seed=0))
    assert fit.label_partition is None and fit.B_N is None
    assert nmi(fit.node_groups, groups) > 0.9
    assert fit.total == pytest.approx(static_dcsbm_dl(s, fit.node_groups) + math.lgamma(s.E + 1), abs=1e-9)


def test_time_clustered_labels_prefer_memory():
    s, _ = sy.structured_stream(N=40, E=2000, rng=6)
    cfg = FitConfig(seed=0)
    assert joint_fit(s, 1, cfg).total < joint_fit(s, 0, cfg).total


def test_alternating_stream_recovers_groups_and_label_roles():
    s, groups = sy.structured_stream(N=40, E=2000, alternate=True, rng=7)
    fit = joint_fit(s, 1, FitConfig(seed=0))
    assert fit.C == 2
    assert nmi(fit.node_groups, groups) == pytest.approx(1.0)
    intra = [a == b for a, b in fit.label_keys]
    roles = Counter(zip(intra, fit.label_partition.token_groups.tolist()))
    # every label group holds only intra- or only inter-group labels
    assert len({g for _, g in roles}) == len(roles)


def test_joint_fit_validation():
    s = ingest_edge_stream([(0, 1), (1, 2)])
    with pytest.raises(ConfigError):
        joint_fit(s, -1)
    with pytest.raises(ConfigError):
        joint_fit(s, 2, unified=True)


def test_partition_prior_charged_once_for_nodes():
    s = ingest_edge_stream([(0, 1), (1, 2), (2, 3), (3, 0)])
    c = [0, 0, 1, 1]
    assert temporal_dl(s, c, 0).extra["node_partition_prior"] == pytest.approx(partition_prior(c))
