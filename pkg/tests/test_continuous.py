import math

import numpy as np
import pytest
from scipy import integrate, stats as sps

from dynblock.continuous import (
    WaitModel, WaitStats, bursty_transform, estimate_beta, prepare_waits, wait_evidence_per_group,
    wait_evidence_per_memory,
)
from dynblock.core import Sequence, build_chain
from dynblock.dl import Partition, total_dl
from dynblock.errors import ConfigError, InputError, InvariantError
from dynblock.state import FRESH, MEM, BlockState


def test_memory_without_emissions_costs_nothing():
    assert wait_evidence_per_memory(WaitStats([0], [0.0]), 1.0, 2.0) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("D, beta", [(0.5, 1.0), (3.0, 0.2), (10.0, 7.0)])
def test_single_wait_closed_form(D, beta):
    got = wait_evidence_per_memory(WaitStats([1], [D]), 1.0, beta)
    assert got == pytest.approx(-math.log(beta / (D + beta) ** 2), rel=1e-13)


def test_closed_form_against_rate_integral():
    for k, D, a, b in [(3, 2.0, 1.0, 1.0), (7, 0.3, 2.5, 0.4), (1, 12.0, 0.5, 3.0)]:
        f = lambda lam: lam ** k * math.exp(-lam * D) * sps.gamma.pdf(lam, a, scale=1 / b)
        val, _ = integrate.quad(f, 0, np.inf, limit=200)
        assert wait_evidence_per_memory(WaitStats([k], [D]), a, b) == pytest.approx(-math.log(val), rel=1e-8)


def test_single_group_pools_memories():
    s = WaitStats([2, 3, 1], [1.0, 4.0, 0.5])
    pooled = wait_evidence_per_memory(WaitStats([6], [5.5]), 1.0, 1.0)
    assert wait_evidence_per_group(s, [0, 0, 0], 1.0, 1.0) == pytest.approx(pooled, abs=1e-12)


def test_group_evidence_is_additive():
    s = WaitStats([2, 3, 2, 3], [1.0, 4.0, 1.0, 4.0])
    one = wait_evidence_per_group(WaitStats([2, 3], [1.0, 4.0]), [0, 0], 1.0, 1.0)
    assert wait_evidence_per_group(s, [0, 0, 1, 1], 1.0, 1.0) == pytest.approx(2 * one, abs=1e-12)


def test_improper_prior_rejected():
    with pytest.raises(ConfigError):
        wait_evidence_per_memory(WaitStats([1], [1.0]), 0.0, 1.0)
    with pytest.raises(ConfigError):
        WaitModel(alpha=0.0)
    with pytest.raises(ConfigError):
        WaitModel(mode="per_token")
    with pytest.raises(InputError):
        WaitStats([1], [-1.0])


def test_estimate_beta():
    assert estimate_beta(WaitStats([4], [2.0])) == pytest.approx(0.5)
    assert estimate_beta(WaitStats([3, 0], [1.5, 0.0])) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        estimate_beta(WaitStats([0], [0.0]))


def test_estimate_beta_with_heterogeneous_rates():
    rng = np.random.default_rng(0)
    rates = np.array([0.5, 1.0, 2.0, 4.0])
    k = np.full(4, 20_000)
    D = np.array([rng.exponential(1 / r, n).sum() for r, n in zip(rates, k)])
    assert estimate_beta(WaitStats(k, D)) == pytest.approx(1 / rates.mean(), rel=0.02)


def test_bursty_transform():
    dm = 0.25
    assert bursty_transform([dm, math.e * dm], dm).tolist() == pytest.approx([0.0, 1.0])
    with pytest.raises(InputError):
        bursty_transform([0.1, 1.0], 0.5)
    with pytest.raises(InputError):
        bursty_transform([0.0, 0.0])
    with pytest.raises(ConfigError):
        bursty_transform([1.0], -1.0)


def test_pareto_waits_become_exponential():
    rng = np.random.default_rng(1)
    dm, shape = 2.0, 1.7
    w = dm * (1 + rng.pareto(shape, 100_000))
    mu = bursty_transform(w, dm)
    assert 1 / mu.mean() == pytest.approx(shape, rel=0.05)


def test_prepare_waits_floors_zeros():
    out = prepare_waits([0.0, 2.0], floor=1e-3)
    assert out.tolist() == [1e-3, 2.0]
    assert prepare_waits([0.0, 1.0], bursty=True, floor=0.5).tolist() == pytest.approx([0.0, math.log(2)])


def _timed_chain(seed):
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, 4, 60)
    waits = rng.exponential(1.0, 59) * (1 + 3 * (toks[:-1] % 2))
    return build_chain(Sequence(toks, waits=waits), 1)


def test_wait_model_terms():
    ch = _timed_chain(2)
    wm = WaitModel(beta=0.7)
    st = WaitStats.from_chain(ch)
    assert wm.term(ch) == pytest.approx(wait_evidence_per_memory(st, 1.0, 0.7))
    part = Partition(np.zeros(ch.N, dtype=int), ch.memories[:, 0] % 2)
    g = WaitModel("per_group", beta=0.7).term(ch, part)
    assert g == pytest.approx(wait_evidence_per_group(st, part.memory_groups, 1.0, 0.7))
    with pytest.raises(ConfigError):
        WaitModel("per_group", beta=0.7).term(ch)
    assert WaitModel().resolved(ch).beta == pytest.approx(estimate_beta(st))
    with pytest.raises(ConfigError):
        WaitStats.from_chain(build_chain(Sequence([0, 1, 0]), 1))


@pytest.mark.parametrize("mode", ["per_memory", "per_group"])
def test_state_deltas_include_waits(mode):
    wm = WaitModel(mode, beta=0.8)
    worst = 0.0
    for seed in range(10):
        ch = _timed_chain(seed)
        rng = np.random.default_rng(seed)
        tg = np.unique(rng.integers(0, 2, ch.N), return_inverse=True)[1]
        part = Partition(tg, np.unique(rng.integers(0, 3, ch.M), return_inverse=True)[1])
        st = BlockState(ch, part, wait_model=wm)
        assert st.dl() == pytest.approx(total_dl(ch, part, wait_model=wm).total, abs=1e-9)
        for _ in range(30):
            i = int(rng.integers(ch.M))
            t = FRESH if rng.random() < 0.2 else int(rng.choice(st.active(MEM)))
            S0 = st.dl()
            d = st.delta(i, MEM, t)
            st.move(i, MEM, t)
            worst = max(worst, abs(d - (total_dl(ch, st.partition(), wait_model=wm).total - S0)))
    assert worst < 1e-9


def test_per_group_state_needs_waits():
    ch = build_chain(Sequence([0, 1, 0, 1]), 1)
    with pytest.raises(InvariantError):
        BlockState(ch, Partition.trivial(ch), wait_model=WaitModel("per_group", beta=1.0))
