"""Temporal networks as a Markov chain of edge labels.

Nodes are partitioned into ``C`` groups ``c``; every edge ``(i, j)`` gets the
label ``(c_i, c_j)`` (unordered for undirected streams). The label sequence
is modelled by the community Markov chain, and given the labels each edge
is drawn by a degree-corrected placement inside its group pair. The
description length splits into a static part, which is the
degree-corrected block model of the aggregated multigraph, and a dynamic
part carried by the label chain.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .combinatorics import log_factorial, log_multiset, log_q
from .core import EdgeStream, Sequence, TokenAlphabet, build_chain
from .dl import DLBreakdown, Partition, PriorConfig, partition_prior, total_dl
from .errors import ConfigError, InputError, InvariantError
from .inference import (FitConfig, SweepStats, TIE_TOL, _ladder_run, _refine,
                        agglomerative_search)
from .state import FRESH, TOK, _compact

LN2 = math.log(2.0)


# ---------------------------------------------------------------- node groups
@dataclass
class NodePartition:
    """Node groups with the edge counts between group pairs.

    ``m`` is a ``C x C`` matrix. Undirected: symmetric, with ``m[r, r]`` the
    number of edges inside ``r``. Directed: ``m[r, s]`` counts edges from
    ``r`` to ``s``. ``ends`` is the number of edge endpoints per group
    (``(out, in)`` when directed).
    """

    c: np.ndarray
    m: np.ndarray
    n: np.ndarray
    ends: object
    loops: np.ndarray

    @property
    def C(self) -> int:
        return len(self.n)

    @classmethod
    def from_stream(cls, stream: EdgeStream, c) -> "NodePartition":
        c = np.asarray(c, dtype=np.int64)
        if len(c) != stream.N:
            raise InputError(f"node partition has {len(c)} entries for {stream.N} nodes")
        C = int(c.max()) + 1 if c.size else 0
        n = np.bincount(c, minlength=C)
        if np.any(n == 0):
            raise InvariantError("node partition has an empty group")
        a, b = c[stream.src], c[stream.dst]
        m = np.zeros((C, C), dtype=np.int64)
        np.add.at(m, (a, b), 1)
        loop = stream.src == stream.dst
        loops = np.bincount(a[loop], minlength=C).astype(np.int64)
        if stream.directed:
            ends = (m.sum(axis=1), m.sum(axis=0))
        else:
            m = m + m.T - np.diag(np.diag(m))
            ends = m.sum(axis=1) + np.diag(m)
        return cls(c, m, n.astype(np.int64), ends, loops)


def label_sequence(stream: EdgeStream, c) -> tuple[Sequence, list]:
    """Edge labels ``(c_i, c_j)`` as a token sequence over observed labels.

    Returns the sequence and the list of label keys indexed by token id.
    """
    c = np.asarray(c, dtype=np.int64)
    if len(c) != stream.N:
        raise InputError(f"node partition has {len(c)} entries for {stream.N} nodes")
    a, b = c[stream.src], c[stream.dst]
    if not stream.directed:
        a, b = np.minimum(a, b), np.maximum(a, b)
    C = int(c.max()) + 1 if c.size else 1
    key = a * C + b
    _, first, inv = np.unique(key, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    tokens = rank[inv.reshape(-1)]
    keys = [None] * len(first)
    for t, r in zip(first, rank):
        keys[r] = (int(a[t]), int(b[t]))
    alphabet = TokenAlphabet(keys)
    return Sequence(tokens, alphabet=alphabet), keys


def _pair_count(C: int, directed: bool) -> int:
    return C * C if directed else C * (C + 1) // 2


def static_term(stream: EdgeStream, c) -> float:
    """-ln of the static degree-corrected likelihood of the edge placement,
    including the degree prior and the uniform prior on the group-pair counts.

    ``exp(-static_term) / E!`` is the probability of the edge sequence when
    labels carry no temporal structure.
    """
    if stream.E == 0:
        return 0.0
    npart = NodePartition.from_stream(stream, c)
    m, C = npart.m, npart.C
    if stream.directed:
        dout, din = stream.degrees()
        eout, ein = npart.ends
        val = (gammaln(m + 1.0).sum() - gammaln(eout + 1.0).sum() - gammaln(ein + 1.0).sum()
               + gammaln(dout + 1.0).sum() + gammaln(din + 1.0).sum())
        val -= sum(log_multiset(int(nr), int(e)) for nr, e in zip(npart.n, eout))
        val -= sum(log_multiset(int(nr), int(e)) for nr, e in zip(npart.n, ein))
    else:
        d = stream.degrees()
        iu = np.triu_indices(C)
        diag = np.diag(m)
        val = (gammaln(m[iu] + 1.0).sum() + LN2 * float(np.sum(diag - npart.loops))
               - gammaln(npart.ends + 1.0).sum() + gammaln(d + 1.0).sum())
        val -= sum(log_multiset(int(nr), int(e)) for nr, e in zip(npart.n, npart.ends))
    val -= log_multiset(_pair_count(C, stream.directed), stream.E)
    return float(-val)


def static_dcsbm_dl(stream: EdgeStream, c) -> float:
    """Static block-model description length of the aggregated graph with its node prior."""
    return static_term(stream, c) + partition_prior(c)


def _pair_log_fact(stream: EdgeStream, c) -> float:
    npart = NodePartition.from_stream(stream, c)
    m = npart.m[np.triu_indices(npart.C)] if not stream.directed else npart.m
    return float(gammaln(m + 1.0).sum())


def temporal_dl(stream: EdgeStream, c, n: int, label_chain=None, label_part: Optional[Partition] = None,
                config: PriorConfig = PriorConfig()) -> DLBreakdown:
    """Description length of a temporal network, factorized into static and dynamic parts.

    For ``n == 0`` the label order is memoryless and costs ``ln E!``. For
    ``n >= 1`` the label chain (built at order ``n`` if not given) is described
    under ``label_part``, and the static term is corrected by
    ``sum ln m_rs! - ln P({m_rs})``.
    """
    c = np.asarray(c, dtype=np.int64)
    out = DLBreakdown()
    if stream.E == 0:
        return out
    out.static_net_term = static_term(stream, c)
    out.extra["node_partition_prior"] = partition_prior(c)
    if n == 0:
        out.extra["edge_order"] = float(log_factorial(stream.E))
        return out
    if label_chain is None:
        seq, _ = label_sequence(stream, c)
        label_chain = build_chain(seq, n)
    if label_part is None:
        raise ConfigError("a label partition is needed for n >= 1")
    chain_bd = total_dl(label_chain, label_part, config)
    for name in ("seq_term", "k_prior", "ers_prior", "es_prior", "token_partition_prior", "memory_partition_prior"):
        setattr(out, name, getattr(chain_bd, name))
    C = int(c.max()) + 1
    out.extra["label_count_correction"] = (_pair_log_fact(stream, c)
                                           - log_multiset(_pair_count(C, stream.directed), stream.E))
    return out


def temporal_dl_direct(stream: EdgeStream, c, n: int, token_groups: dict, memory_groups: dict,
                       config: PriorConfig = PriorConfig(), unified: bool = False) -> float:
    """The same total as :func:`temporal_dl`, evaluated as
    P(edges | labels, c) P(labels, b) P(c) without the static/dynamic split.

    ``token_groups`` maps label keys to groups; ``memory_groups`` maps label
    windows (tuples of keys, most recent first) to groups.
    """
    c = [int(v) for v in c]
    E = stream.E
    if E == 0:
        return 0.0
    edges = list(zip(stream.src.tolist(), stream.dst.tolist()))
    labels = []
    for i, j in edges:
        a, b = c[i], c[j]
        labels.append((a, b) if stream.directed else (min(a, b), max(a, b)))
    C = max(c) + 1
    sizes = Counter(c)
    lg = math.lgamma

    # edges given labels: degree-corrected placement with kappa integrated out
    logp = 0.0
    if stream.directed:
        dout, din = Counter(i for i, _ in edges), Counter(j for _, j in edges)
        eout, ein = Counter(a for a, _ in labels), Counter(b for _, b in labels)
        logp += sum(lg(v + 1) for v in dout.values()) + sum(lg(v + 1) for v in din.values())
        logp -= sum(lg(v + 1) for v in eout.values()) + sum(lg(v + 1) for v in ein.values())
        for r in range(C):
            logp -= log_multiset(sizes[r], eout.get(r, 0)) + log_multiset(sizes[r], ein.get(r, 0))
    else:
        deg = Counter()
        ends = Counter()
        for (i, j), (a, b) in zip(edges, labels):
            deg[i] += 1
            deg[j] += 1
            ends[a] += 1
            ends[b] += 1
            if a == b and i != j:
                logp += LN2
        logp += sum(lg(v + 1) for v in deg.values()) - sum(lg(v + 1) for v in ends.values())
        for r in range(C):
            logp -= log_multiset(sizes[r], ends.get(r, 0))

    # node partition prior
    logp -= lg(len(c) + 1) - sum(lg(v + 1) for v in sizes.values()) + math.log(math.comb(len(c) - 1, C - 1))

    if n == 0:
        # memoryless labels: every ordering of the label multiset equally likely,
        # label counts uniform over the group pairs
        mcount = Counter(labels)
        logp += sum(lg(v + 1) for v in mcount.values()) - lg(E + 1)
        logp -= log_multiset(_pair_count(C, stream.directed), E)
        return -logp

    # label chain conditioned on its first n labels
    trans = Counter()
    for t in range(n, E):
        mem = tuple(labels[t - j] for j in range(1, n + 1))
        trans[(labels[t], mem)] += 1
    k = Counter()
    for (x, _), v in trans.items():
        k[x] += v
    label_keys = sorted(set(labels))
    mems = sorted({m for _, m in trans})
    tg = {x: token_groups[x] for x in label_keys}
    if unified:
        mg = {m: token_groups[m[0]] for m in mems}
    else:
        mg = {m: memory_groups[m] for m in mems}
    ers, er, es = Counter(), Counter(), Counter()
    for (x, mem), v in trans.items():
        ers[(tg[x], mg[mem])] += v
        er[tg[x]] += v
        es[mg[mem]] += v
    BN = len(set(tg.values()))
    BM = BN if unified else len(set(mg.values()))
    Ec = E - n
    logp += sum(lg(v + 1) for v in ers.values()) + sum(lg(k[x] + 1) for x in label_keys)
    logp -= sum(lg(v + 1) for v in er.values()) + sum(lg(v + 1) for v in es.values())
    # label frequencies given group totals
    nr = Counter(tg.values())
    for r in set(tg.values()):
        if config.k_prior_mode == "uniform":
            logp -= log_multiset(nr[r], er.get(r, 0))
        else:
            hist = Counter(k[x] for x in label_keys if tg[x] == r)
            logp -= lg(nr[r] + 1) - sum(lg(v + 1) for v in hist.values()) + log_q(er.get(r, 0), nr[r])
    for s in set(mg.values()) | (set(tg.values()) if unified else set()):
        logp -= log_multiset(BN, es.get(s, 0))
    logp -= log_multiset(BM, Ec)
    # label partitions (a single one in unified mode)
    def part_logp(groups: list) -> float:
        cnt = Counter(groups)
        M, B = len(groups), len(cnt)
        return -(lg(M + 1) - sum(lg(v + 1) for v in cnt.values()) + math.log(math.comb(M - 1, B - 1)))
    logp += part_logp([tg[x] for x in label_keys])
    if not unified:
        logp += part_logp([mg[m] for m in mems])
    return -logp


# ------------------------------------------------------------ node inference
class NodeState:
    """Incremental static block-model state over node groups.

    Exposes the same move/merge interface as :class:`dynblock.state.BlockState`
    (a single item side), so the ladder search drives both.
    """

    unified = True

    def __init__(self, stream: EdgeStream, c=None):
        self.stream = stream
        self.directed = stream.directed
        N = self.N = stream.N
        self.E = E = stream.E
        src, dst = stream.src, stream.dst
        loop = src == dst
        self.L = np.bincount(src[loop], minlength=N).astype(np.int64)
        s, d = src[~loop], dst[~loop]
        if self.directed:
            self.out = _adj(s, d, N)
            self.inn = _adj(d, s, N)
            self.dout, self.din = stream.degrees()
        else:
            self.nbr = _adj(np.concatenate([s, d]), np.concatenate([d, s]), N)
            self.deg = stream.degrees()
        self.lf = log_factorial(np.arange(2 * E + N + 4))
        self.frozen_tok = np.zeros(N, dtype=bool)
        self.restore((np.zeros(N, dtype=np.int64) if c is None else np.asarray(c), None))

    # interface shared with BlockState
    def snapshot(self):
        return self.bt.copy(), None

    def restore(self, snap):
        c = _compact(np.asarray(snap[0], dtype=np.int64))
        N = self.N
        self.cap = N
        self.bt = c.copy()
        npart = NodePartition.from_stream(self.stream, c)
        C = npart.C
        self.m = np.zeros((N, N), dtype=np.int64)
        self.m[:C, :C] = npart.m
        self.n_tok = np.zeros(N, dtype=np.int64)
        self.n_tok[:C] = npart.n
        self.lp = np.zeros(N, dtype=np.int64)
        self.lp[:C] = npart.loops
        if self.directed:
            self.eout = np.zeros(N, dtype=np.int64)
            self.ein = np.zeros(N, dtype=np.int64)
            self.eout[:C], self.ein[:C] = npart.ends
        else:
            self.eh = np.zeros(N, dtype=np.int64)
            self.eh[:C] = npart.ends
        self.B_N = C
        self.free = [g for g in range(N - 1, C - 1, -1)]

    @property
    def B_M(self):
        return self.B_N

    def n_groups(self, side=TOK) -> int:
        return self.B_N

    def n_items(self, side=TOK) -> int:
        return self.N

    def active(self, side=TOK) -> np.ndarray:
        return np.flatnonzero(self.n_tok)

    def members(self, side, r) -> np.ndarray:
        return np.flatnonzero(self.bt == r)

    def group_of(self, i, side=TOK) -> int:
        return int(self.bt[i])

    def partition(self) -> np.ndarray:
        return _compact(self.bt)

    def _lm(self, m, k):
        if k == 0:
            return 0.0
        lf = self.lf
        return lf[m + k - 1] - lf[k] - lf[m - 1]

    def _lbinom(self, n, k):
        lf = self.lf
        return lf[n] - lf[k] - lf[n - k]

    def _pair_prior(self, C):
        return log_multiset(_pair_count(C, self.directed), self.E)

    def dl(self) -> float:
        """Static term plus node partition prior."""
        lf = self.lf
        act = self.active()
        m = self.m[np.ix_(act, act)]
        n = self.n_tok[act]
        C = len(act)
        if self.directed:
            eo, ei = self.eout[act], self.ein[act]
            val = (lf[m].sum() - lf[eo].sum() - lf[ei].sum()
                   + lf[self.dout].sum() + lf[self.din].sum()
                   - sum(self._lm(a, b) for a, b in zip(n, eo)) - sum(self._lm(a, b) for a, b in zip(n, ei)))
        else:
            iu = np.triu_indices(C)
            eh = self.eh[act]
            val = (lf[m[iu]].sum() + LN2 * float(np.sum(np.diag(m) - self.lp[act]))
                   - lf[eh].sum() + lf[self.deg].sum() - sum(self._lm(a, b) for a, b in zip(n, eh)))
        val -= self._pair_prior(C)
        prior = lf[self.N] - lf[n].sum() + self._lbinom(self.N - 1, C - 1)
        return float(-val + prior)

    def _vec(self, adj, i):
        ptr, nb, w = adj
        a, b = ptr[i], ptr[i + 1]
        v = np.bincount(self.bt[nb[a:b]], weights=w[a:b], minlength=self.cap)
        sup = np.flatnonzero(v)
        return sup, v[sup].astype(np.int64)

    def _cells(self, i, r, s):
        L = int(self.L[i])
        if self.directed:
            so, vo = self._vec(self.out, i)
            si, vi = self._vec(self.inn, i)
            no, ni = len(so), len(si)
            rows = np.concatenate([np.full(no, r), np.full(no, s), si, si, [r, s]])
            cols = np.concatenate([so, so, np.full(ni, r), np.full(ni, s), [r, s]])
            inc = np.concatenate([-vo, vo, -vi, vi, [-L, L]])
        else:
            t, v = self._vec(self.nbr, i)
            nt = len(t)
            a = np.concatenate([np.full(nt, r), np.full(nt, s), [r, s]])
            b = np.concatenate([t, t, [r, s]])
            rows, cols = np.minimum(a, b), np.maximum(a, b)
            inc = np.concatenate([-v, v, [-L, L]])
        key = rows * self.cap + cols
        ukey, inv = np.unique(key, return_inverse=True)
        dsum = np.bincount(inv, weights=inc).astype(np.int64)
        return ukey // self.cap, ukey % self.cap, dsum

    def delta(self, i, side, s) -> float:
        r = int(self.bt[i])
        if s == r:
            return 0.0
        if s == FRESH:
            if self.n_tok[r] == 1:
                return 0.0
            s = self.free[-1]
        lf = self.lf
        a, b, inc = self._cells(i, r, s)
        old = self.m[a, b]
        dval = lf[old + inc].sum() - lf[old].sum()
        nr, ns = int(self.n_tok[r]), int(self.n_tok[s])
        if self.directed:
            do, di = int(self.dout[i]), int(self.din[i])
            for e, dd in ((self.eout, do), (self.ein, di)):
                er, es = int(e[r]), int(e[s])
                dval -= lf[er - dd] - lf[er] + lf[es + dd] - lf[es]
                dval -= (self._lm(nr - 1, er - dd) - self._lm(nr, er)
                         + self._lm(ns + 1, es + dd) - self._lm(ns, es))
        else:
            dval += LN2 * float(inc[a == b].sum())
            dd = int(self.deg[i])
            er, es = int(self.eh[r]), int(self.eh[s])
            dval -= lf[er - dd] - lf[er] + lf[es + dd] - lf[es]
            dval -= (self._lm(nr - 1, er - dd) - self._lm(nr, er)
                     + self._lm(ns + 1, es + dd) - self._lm(ns, es))
        d = -dval
        d -= lf[nr - 1] - lf[nr] + lf[ns + 1] - lf[ns]
        C = self.B_N
        nC = C - (nr == 1) + (ns == 0)
        if nC != C:
            d += self._lbinom(self.N - 1, nC - 1) - self._lbinom(self.N - 1, C - 1)
            d += self._pair_prior(nC) - self._pair_prior(C)
        return float(d)

    def move(self, i, side, s) -> int:
        r = int(self.bt[i])
        if s == r or (s == FRESH and self.n_tok[r] == 1):
            return r
        if s == FRESH:
            s = self.free.pop()
        elif self.n_tok[s] == 0:
            self.free.remove(s)
        a, b, inc = self._cells(i, r, s)
        self.m[a, b] += inc
        if not self.directed:
            off = a != b
            self.m[b[off], a[off]] += inc[off]
            self.eh[r] -= self.deg[i]
            self.eh[s] += self.deg[i]
        else:
            self.eout[r] -= self.dout[i]
            self.eout[s] += self.dout[i]
            self.ein[r] -= self.din[i]
            self.ein[s] += self.din[i]
        self.lp[r] -= self.L[i]
        self.lp[s] += self.L[i]
        self.n_tok[r] -= 1
        self.n_tok[s] += 1
        if self.n_tok[s] == 1:
            self.B_N += 1
        if self.n_tok[r] == 0:
            self.B_N -= 1
            self.free.append(r)
        self.bt[i] = s
        return s

    def merge_delta(self, side, r, s) -> float:
        if r == s:
            return 0.0
        lf = self.lf
        m = self.m
        mask = self.n_tok > 0
        mask[[r, s]] = False
        nr, ns = int(self.n_tok[r]), int(self.n_tok[s])
        if self.directed:
            row = lf[m[r, mask] + m[s, mask]].sum() - lf[m[r, mask]].sum() - lf[m[s, mask]].sum()
            col = lf[m[mask, r] + m[mask, s]].sum() - lf[m[mask, r]].sum() - lf[m[mask, s]].sum()
            four = m[r, r] + m[r, s] + m[s, r] + m[s, s]
            dval = row + col + lf[four] - lf[m[r, r]] - lf[m[r, s]] - lf[m[s, r]] - lf[m[s, s]]
            for e in (self.eout, self.ein):
                er, es = int(e[r]), int(e[s])
                dval -= lf[er + es] - lf[er] - lf[es]
                dval -= self._lm(nr + ns, er + es) - self._lm(nr, er) - self._lm(ns, es)
        else:
            row = lf[m[r, mask] + m[s, mask]].sum() - lf[m[r, mask]].sum() - lf[m[s, mask]].sum()
            three = m[r, r] + m[s, s] + m[r, s]
            dval = row + lf[three] - lf[m[r, r]] - lf[m[s, s]] - lf[m[r, s]] + LN2 * float(m[r, s])
            er, es = int(self.eh[r]), int(self.eh[s])
            dval -= lf[er + es] - lf[er] - lf[es]
            dval -= self._lm(nr + ns, er + es) - self._lm(nr, er) - self._lm(ns, es)
        d = -dval
        d -= lf[nr + ns] - lf[nr] - lf[ns]
        C = self.B_N
        d += self._lbinom(self.N - 1, C - 2) - self._lbinom(self.N - 1, C - 1)
        d += self._pair_prior(C - 1) - self._pair_prior(C)
        return float(d)

    def merge(self, side, r, s):
        for i in self.members(side, r):
            self.move(int(i), side, s)

    def degree(self, i, side=TOK) -> int:
        if self.directed:
            return (int(self.out[2][self.out[0][i]:self.out[0][i + 1]].sum())
                    + int(self.inn[2][self.inn[0][i]:self.inn[0][i + 1]].sum()))
        return int(self.nbr[2][self.nbr[0][i]:self.nbr[0][i + 1]].sum())

    def _ends_row(self, t: int, outgoing: Optional[bool]) -> np.ndarray:
        # weights over target groups s given a neighbour group t
        if not self.directed:
            w = self.m[t].copy()
            w[t] += self.m[t, t]
            return w
        return self.m[:, t].copy() if outgoing else self.m[t, :].copy()

    def propose(self, i, side, rng, epsilon) -> int:
        C = self.B_N
        d = self.degree(i)
        if d == 0 or rng.random() * (epsilon * C + d) < epsilon * C:
            j = int(rng.integers(C + 1))
            return FRESH if j == C else int(self.active()[j])
        u = int(rng.integers(d))
        adjs = [(self.out, True), (self.inn, False)] if self.directed else [(self.nbr, None)]
        for (ptr, nb, w), outgoing in adjs:
            a, b = ptr[i], ptr[i + 1]
            tot = int(w[a:b].sum())
            if u < tot:
                j = nb[a + np.searchsorted(np.cumsum(w[a:b]), u, side="right")]
                cw = np.cumsum(self._ends_row(int(self.bt[j]), outgoing))
                return int(np.searchsorted(cw, rng.integers(cw[-1]), side="right"))
            u -= tot
        raise InvariantError("neighbour sampling fell through")

    def proposal_prob(self, i, side, s, epsilon) -> float:
        C = self.B_N
        d = self.degree(i)
        p_rand = 1.0 if d == 0 else epsilon * C / (epsilon * C + d)
        p = p_rand / (C + 1)
        if s == FRESH or d == 0:
            return p
        q = 0.0
        adjs = [(self.out, True), (self.inn, False)] if self.directed else [(self.nbr, None)]
        for adj, outgoing in adjs:
            t, v = self._vec(adj, i)
            for tt, vv in zip(t, v):
                row = self._ends_row(int(tt), outgoing)
                q += vv * row[s] / row.sum()
        return float(p + (1.0 - p_rand) * q / d)


def _adj(rows, cols, N):
    keys = rows * N + cols
    u, cnt = np.unique(keys, return_counts=True)
    r, c = u // N, u % N
    ptr = np.zeros(N + 1, dtype=np.int64)
    np.add.at(ptr, r + 1, 1)
    return np.cumsum(ptr), c.astype(np.int64), cnt.astype(np.int64)


# ------------------------------------------------------------- joint fitting
@dataclass
class TemporalFit:
    node_groups: np.ndarray
    n: int
    breakdown: DLBreakdown
    label_keys: list = field(default_factory=list)
    label_partition: Optional[Partition] = None
    label_chain: object = None
    unified: bool = False
    timings: dict = field(default_factory=dict)

    @property
    def total(self) -> float:
        return self.breakdown.total

    @property
    def C(self) -> int:
        return int(self.node_groups.max()) + 1 if self.node_groups.size else 0

    @property
    def B_N(self) -> Optional[int]:
        return None if self.label_partition is None else self.label_partition.B_N

    @property
    def B_M(self) -> Optional[int]:
        return None if self.label_partition is None else self.label_partition.B_M


def static_fit(stream: EdgeStream, config: FitConfig = FitConfig(), rng=None) -> tuple[np.ndarray, float, list]:
    """Minimize the static block-model description length over node partitions.

    Returns the best partition, its description length and the best state
    recorded at every rung of the group-count ladder (for joint scoring).
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    stats = SweepStats()
    trace: list = []
    best = [math.inf, None]
    rungs: dict = {}
    state = None
    for _ in range(config.restarts):
        state = NodeState(stream, np.arange(stream.N))
        for (C, _), S, snap in _ladder_run(state, rng, config, stats, trace, best):
            if C not in rungs or S < rungs[C][0] - TIE_TOL:
                rungs[C] = (S, snap)
    if config.refine:
        _refine(state, rng, config, stats, trace, best)
    c = _compact(best[1][0])
    C = int(c.max()) + 1
    if C not in rungs or best[0] < rungs[C][0] - TIE_TOL:
        rungs[C] = (best[0], best[1])
    return c, best[0], [(_compact(v[1][0]), v[0]) for _, v in sorted(rungs.items())]


def _fit_labels(stream, c, n, config, prior, unified, rng, initial=None):
    seq, keys = label_sequence(stream, c)
    if len(seq) <= n:
        raise InputError(f"stream of {len(seq)} edges too short for order {n}")
    chain = build_chain(seq, n)
    cfg = FitConfig(**{**asdict(config), "order": n, "unified": unified})
    res = agglomerative_search(chain, cfg, prior, rng=rng, initial=initial)
    bd = temporal_dl(stream, c, n, chain, res.partition, prior)
    return bd, res.partition, chain, keys


def _project_labels(stream, c_old, c_new, chain_old, part_old, n, unified):
    """Label partition for ``c_new`` inherited position by position from the old one."""
    seq_old, _ = label_sequence(stream, c_old)
    seq_new, _ = label_sequence(stream, c_new)
    chain_new = build_chain(seq_new, n)
    tg = np.empty(chain_new.N, dtype=np.int64)
    tg[seq_new.tokens] = part_old.token_groups[seq_old.tokens]
    tg = _compact(tg)
    if unified:
        return chain_new, Partition.unified_from(chain_new, tg)
    mg = np.empty(chain_new.M, dtype=np.int64)
    mg[chain_new.emitted_mems] = part_old.memory_groups[chain_old.emitted_mems]
    return chain_new, Partition(tg, _compact(mg))


def joint_fit(stream: EdgeStream, n: int, config: FitConfig = FitConfig(), prior: PriorConfig = PriorConfig(),
              unified: bool = False, node_sweeps: int = 2, max_candidates: int = 6,
              rng: Optional[np.random.Generator] = None) -> TemporalFit:
    """Jointly fit node groups and the label-chain partition.

    The static block model is first minimized along a ladder of group
    counts. For ``n == 0`` that is the answer. For ``n >= 1`` the ladder
    rungs nearest the static optimum are each scored by fitting the label
    chain, the best is kept, and node moves are then tried against the
    full joint description length, with the label partition carried over
    to the relabelled edges.

    Parameters
    ----------
    stream : EdgeStream
    n : int
        Order of the label chain; 0 gives the static block model.
    config : FitConfig
    prior : PriorConfig
    unified : bool
        Shared token/memory groups for the label chain (``n == 1``).
    node_sweeps : int
        Passes of joint node moves after the rung selection.
    max_candidates : int
        Ladder rungs scored with the dynamic term.
    rng : numpy.random.Generator, optional
    """
    if stream.E == 0:
        raise InputError("empty edge stream")
    if n < 0:
        raise ConfigError(f"order must be >= 0, got {n}")
    if unified and n != 1:
        raise ConfigError("the unified label chain is only defined for order 1")
    t0 = time.perf_counter()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    c_best, S_static, rungs = static_fit(stream, config, rng)
    if n == 0:
        bd = temporal_dl(stream, c_best, 0)
        return TemporalFit(c_best, 0, bd, timings={"fit": time.perf_counter() - t0})

    # score ladder rungs nearest to the static optimum
    C0 = int(c_best.max()) + 1
    rungs = sorted(rungs, key=lambda cs: (abs(int(cs[0].max()) + 1 - C0), cs[1]))[:max_candidates]
    label_cfg = FitConfig(**{**asdict(config), "restarts": max(1, config.restarts // 2)})
    best = None
    for c, _ in rungs:
        bd, lp, chain, keys = _fit_labels(stream, c, n, label_cfg, prior, unified, rng)
        if best is None or bd.total < best[0].total - TIE_TOL:
            best = (bd, lp, chain, keys, c)

    # joint node moves: the label partition follows the relabelled edges
    bd, lp, chain, keys, c = best
    S = bd.total
    for _ in range(node_sweeps):
        moved = False
        for i in rng.permutation(stream.N):
            C = int(c.max()) + 1
            r = int(c[i])
            targets = [g for g in range(C) if g != r]
            if np.sum(c == r) > 1:
                targets.append(C)
            for s in targets:
                c_try = c.copy()
                c_try[i] = s
                c_try = _compact(c_try)
                chain_try, lp_try = _project_labels(stream, c, c_try, chain, lp, n, unified)
                bd_try = temporal_dl(stream, c_try, n, chain_try, lp_try, prior)
                if bd_try.total < S - TIE_TOL:
                    c, chain, lp, bd, S = c_try, chain_try, lp_try, bd_try, bd_try.total
                    moved = True
                    break
        # re-fit the labels from the carried partition
        bd2, lp2, chain2, keys2 = _fit_labels(stream, c, n, label_cfg, prior, unified, rng, initial=lp)
        if bd2.total < S - TIE_TOL:
            bd, lp, chain, S = bd2, lp2, chain2, bd2.total
            moved = True
        if not moved:
            break
    _, keys = label_sequence(stream, c)
    return TemporalFit(c, n, bd, keys, lp, chain, unified, timings={"fit": time.perf_counter() - t0})
