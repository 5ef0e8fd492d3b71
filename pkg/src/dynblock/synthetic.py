"""Synthetic sequences and edge streams with known structure."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import EdgeStream, Sequence


@dataclass
class Planted:
    """A generated sequence together with its generating groups.

    ``memory_groups`` is indexed by token id for order-1 data (the memory
    of a transition is the previous token) and is ``None`` otherwise.
    """

    seq: Sequence
    token_groups: np.ndarray
    memory_groups: Optional[np.ndarray] = None


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _pick_in_groups(groups: np.ndarray, target: np.ndarray, rng) -> np.ndarray:
    """Uniform member of group ``target[t]`` for every t."""
    members = [np.flatnonzero(groups == g) for g in range(int(groups.max()) + 1)]
    sizes = np.array([len(m) for m in members])
    u = (rng.random(len(target)) * sizes[target]).astype(np.int64)
    out = np.empty(len(target), dtype=np.int64)
    for g, m in enumerate(members):
        sel = target == g
        out[sel] = m[u[sel]]
    return out


def planted_chain(N: int = 20, E: int = 10_000, affinity: float = 0.9, rng=None) -> Planted:
    """Order-1 chain with two token groups and two memory groups.

    Tokens ``x < N/2`` form token group 0; memory group of ``x`` is
    ``x % 2``. From memory group ``s`` the next token is drawn from token
    group ``s`` with probability ``affinity`` and from the other one
    otherwise, uniformly inside the group.
    """
    rng = _rng(rng)
    tg = (np.arange(N) >= N // 2).astype(np.int64)
    mg = (np.arange(N) % 2).astype(np.int64)
    x = np.empty(E + 1, dtype=np.int64)
    x[0] = rng.integers(N)
    flip = rng.random(E) >= affinity
    u = rng.random(E)
    members = [np.flatnonzero(tg == g) for g in range(2)]
    for t in range(E):
        r = mg[x[t]] ^ int(flip[t])
        m = members[r]
        x[t + 1] = m[int(u[t] * len(m))]
    return Planted(Sequence(x), tg, mg)


def xor_chain(N: int = 8, E: int = 10_000, p: float = 0.9, rng=None) -> Planted:
    """Order-2 chain: the next token group is the XOR of the previous two.

    With probability ``1 - p`` the group is flipped. Given only the last
    token the next group is uniform, so there is no order-1 structure.
    """
    rng = _rng(rng)
    tg = (np.arange(N) >= N // 2).astype(np.int64)
    g = np.empty(E + 2, dtype=np.int64)
    g[:2] = rng.integers(2, size=2)
    flip = (rng.random(E) >= p).astype(np.int64)
    for t in range(E):
        g[t + 2] = g[t + 1] ^ g[t] ^ flip[t]
    x = _pick_in_groups(tg, g, rng)
    return Planted(Sequence(x), tg)


def iid_sequence(N: int = 10, E: int = 10_000, weights=None, rng=None) -> Sequence:
    rng = _rng(rng)
    p = None if weights is None else np.asarray(weights, float) / np.sum(weights)
    return Sequence(rng.choice(N, size=E, p=p).astype(np.int64))


def timing_order_chain(N: int = 4, E: int = 4_000, fast: float = 100.0, slow: float = 1.0,
                       rng=None) -> Sequence:
    """I.i.d. tokens whose waiting times depend on the last two tokens.

    Tokens fall in two classes (``x < N/2``). The wait before ``x_t`` is
    exponential with rate ``fast`` when ``x_{t-1}`` and ``x_{t-2}`` share
    a class and ``slow`` otherwise, so the order signal lives only in the
    timing.
    """
    rng = _rng(rng)
    x = rng.integers(N, size=E).astype(np.int64)
    cls = (x >= N // 2).astype(np.int64)
    rate = np.full(E - 1, slow)
    same = np.zeros(E - 1, dtype=bool)
    same[1:] = cls[1:-1] == cls[:-2]
    rate[same] = fast
    waits = rng.exponential(1.0 / rate)
    return Sequence(x, waits=waits)


def two_scale_waits(N: int = 20, E: int = 10_000, fast_mean: float = 1e-3, slow_mean: float = 1.0,
                    rng=None) -> Planted:
    """I.i.d. tokens; the wait after token ``x`` has mean ``fast_mean`` for
    even ``x`` and ``slow_mean`` for odd ``x``.

    The memory groups (parity of the previous token) are visible only
    through the waiting times.
    """
    rng = _rng(rng)
    x = rng.integers(N, size=E + 1).astype(np.int64)
    mg = (np.arange(N) % 2).astype(np.int64)
    mean = np.where(mg[x[:-1]] == 0, fast_mean, slow_mean)
    waits = rng.exponential(mean)
    return Planted(Sequence(x, waits=waits), np.zeros(N, dtype=np.int64), mg)


def random_stream(N: int = 50, E: int = 5_000, directed: bool = False, rng=None) -> EdgeStream:
    """Edges between uniformly chosen distinct nodes, in random order."""
    rng = _rng(rng)
    a = rng.integers(N, size=E)
    b = (a + rng.integers(1, N, size=E)) % N
    if not directed:
        a, b = np.minimum(a, b), np.maximum(a, b)
    return EdgeStream(list(range(N)), a.astype(np.int64), b.astype(np.int64), directed)


def structured_stream(N: int = 40, E: int = 2_000, C: int = 2, p_in: float = 0.8, p_repeat: float = 0.9,
                      alternate: bool = False, intra_run: int = 2, rng=None) -> tuple[EdgeStream, np.ndarray]:
    """Assortative stream whose group pairs are temporally correlated.

    Nodes are split into ``C`` equal groups. Each event picks a group pair
    (intra-group with total weight ``p_in``); with probability ``p_repeat``
    the previous pair is reused. With ``alternate=True`` every run of
    ``intra_run`` intra-group events is followed by one inter-group event,
    a pattern a memory of one event captures and a static model cannot.
    ``intra_run >= 2`` keeps the aggregated graph assortative; with strict
    alternation and ``C = 2`` it is indistinguishable from a random graph.
    Endpoints are uniform inside their groups.

    Returns
    -------
    stream : EdgeStream
    groups : numpy.ndarray
        Planted group of every node.
    """
    rng = _rng(rng)
    groups = (np.arange(N) * C // N).astype(np.int64)
    intra = [(r, r) for r in range(C)]
    inter = [(r, s) for r in range(C) for s in range(r + 1, C)]
    pairs = intra + inter
    w = np.array([p_in / C] * C + [(1 - p_in) / max(len(inter), 1)] * len(inter))
    w /= w.sum()
    chosen = np.empty(E, dtype=np.int64)
    cur = int(rng.choice(len(pairs), p=w))
    for t in range(E):
        if alternate and inter:
            pool = inter if t % (intra_run + 1) == intra_run else intra
            cur = pairs.index(pool[int(rng.integers(len(pool)))])
        elif t > 0 and rng.random() >= p_repeat:
            cur = int(rng.choice(len(pairs), p=w))
        chosen[t] = cur
    pr = np.array(pairs, dtype=np.int64)[chosen]
    a = _pick_in_groups(groups, pr[:, 0], rng)
    b = _pick_in_groups(groups, pr[:, 1], rng)
    # resample the rare self-pairs inside one group
    same = a == b
    while np.any(same):
        b[same] = _pick_in_groups(groups, pr[same, 1], rng)
        same = a == b
    a, b = np.minimum(a, b), np.maximum(a, b)
    return EdgeStream(list(range(N)), a, b, False), groups
