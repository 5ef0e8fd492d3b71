"""Mutable block state with incremental description-length updates.

Items are tokens (``side == TOK``) and memories (``side == MEM``). In
unified mode every token is also a memory and a single label array is
shared, so moving a symbol touches one row and one column of ``ers``.

Group labels are recycled through free lists; :meth:`BlockState.partition`
returns compacted labels.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .combinatorics import log_factorial, log_q
from .core import ChainCounts
from .dl import Partition, PriorConfig
from .errors import InvariantError

TOK, MEM = 0, 1
FRESH = -1


def _csr(rows: np.ndarray, cols: np.ndarray, w: np.ndarray, n_rows: int):
    order = np.lexsort((cols, rows))
    rows, cols, w = rows[order], cols[order], w[order]
    ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(ptr, rows + 1, 1)
    ptr = np.cumsum(ptr)
    cw = np.empty(len(w), dtype=np.int64)
    for i in range(n_rows):
        a, b = ptr[i], ptr[i + 1]
        cw[a:b] = np.cumsum(w[a:b])
    return ptr, cols.astype(np.int64), w.astype(np.int64), cw


class BlockState:
    """Partition state over the bipartite transition multigraph of a chain."""

    def __init__(
        self,
        chain: ChainCounts,
        partition: Optional[Partition] = None,
        unified: bool = False,
        config: PriorConfig = PriorConfig(),
        wait_model=None,
        frozen_tokens: Optional[np.ndarray] = None,
        frozen_memories: Optional[np.ndarray] = None,
    ):
        if unified and chain.n != 1:
            raise InvariantError("unified mode needs an order-1 chain")
        self.chain = chain
        self.unified = unified
        self.config = config
        self.hyper = config.k_prior_mode == "degree_hyperprior"
        self.N = N = chain.N
        self.E = E = chain.E

        # state memory index: chain memory index, or the symbol id in unified mode
        if unified:
            self.mem_of_chain = chain.memories[:, 0].astype(np.int64)
            self.Ms = N
        else:
            self.mem_of_chain = np.arange(chain.M, dtype=np.int64)
            self.Ms = chain.M
        Ms = self.Ms
        src = self.mem_of_chain[chain.a_mem_idx]
        self.tok_ptr, self.tok_nbr, self.tok_w, self.tok_cw = _csr(chain.a_tok, src, chain.a_count, N)
        self.mem_ptr, self.mem_nbr, self.mem_w, self.mem_cw = _csr(src, chain.a_tok, chain.a_count, Ms)
        self.k = chain.k.astype(np.int64)
        self.dmem = np.bincount(src, weights=chain.a_count, minlength=Ms).astype(np.int64)
        if unified:
            self.selfloop = np.zeros(N, dtype=np.int64)
            sl = chain.a_tok == src
            np.add.at(self.selfloop, chain.a_tok[sl], chain.a_count[sl])

        size = E + max(N, Ms) + 4
        self.lf = log_factorial(np.arange(size))
        self.capN = N
        self.capM = N if unified else Ms

        self.wait_group = None
        if wait_model is not None and wait_model.mode == "per_group":
            if chain.wait_sum is None:
                raise InvariantError("per-group waiting times need a chain with waits")
            wait_model = wait_model.resolved(chain)
            self.wait_group = (float(wait_model.alpha), float(wait_model.beta))
            self.wmem = np.bincount(self.mem_of_chain, weights=chain.wait_sum, minlength=Ms)
        self.wait_const = 0.0
        if wait_model is not None and wait_model.mode == "per_memory":
            self.wait_const = wait_model.term(chain, None)

        self._deferred = False
        self.frozen_tok = np.zeros(N, dtype=bool) if frozen_tokens is None else np.asarray(frozen_tokens, bool)
        self.frozen_mem = np.zeros(Ms, dtype=bool) if frozen_memories is None else np.asarray(frozen_memories, bool)
        if unified:
            self.frozen_mem = self.frozen_tok

        if partition is None:
            partition = Partition.singletons(chain, unified)
        self._load(partition)

    # ------------------------------------------------------------------ setup
    def _load(self, part: Partition):
        N, Ms = self.N, self.Ms
        self.bt = part.token_groups.astype(np.int64).copy()
        if self.unified:
            if not part.unified:
                raise InvariantError("unified state needs a unified partition")
            self.bm = self.bt
        else:
            self.bm = part.memory_groups.astype(np.int64).copy()
        capN, capM = self.capN, self.capM
        ch = self.chain
        self.ers = np.zeros((capN, capM), dtype=np.int64)
        np.add.at(self.ers, (self.bt[ch.a_tok], self.bm[self.mem_of_chain[ch.a_mem_idx]]), ch.a_count)
        self.e_tok = self.ers.sum(axis=1)
        self.e_mem = self.ers.sum(axis=0)
        self.n_tok = np.bincount(self.bt, minlength=capN).astype(np.int64)
        self.n_mem = self.n_tok if self.unified else np.bincount(self.bm, minlength=capM).astype(np.int64)
        self.B_N = int(np.count_nonzero(self.n_tok))
        self.B_M = self.B_N if self.unified else int(np.count_nonzero(self.n_mem))
        self.free_tok = [g for g in range(capN - 1, -1, -1) if self.n_tok[g] == 0]
        self.free_mem = self.free_tok if self.unified else [g for g in range(capM - 1, -1, -1) if self.n_mem[g] == 0]
        self.hist = [dict() for _ in range(capN)]
        for x in range(N):
            h = self.hist[self.bt[x]]
            kx = int(self.k[x])
            h[kx] = h.get(kx, 0) + 1
        # running sum of ln c! over each group's degree histogram
        self.hsum = np.zeros(capN)
        for r in np.flatnonzero(self.n_tok):
            self.hsum[r] = sum(self.lf[c] for c in self.hist[r].values())
        self.kterm = np.zeros(capN)
        for r in np.flatnonzero(self.n_tok):
            self.kterm[r] = self._kterm(int(self.n_tok[r]), int(self.e_tok[r]), self.hist[r])
        if self.wait_group is not None:
            self.W = np.bincount(self.bm, weights=self.wmem, minlength=capM)

    # ------------------------------------------------------------- primitives
    def _lm(self, m: int, k: int) -> float:
        if k == 0:
            return 0.0
        lf = self.lf
        return lf[m + k - 1] - lf[k] - lf[m - 1]

    def _lbinom(self, n: int, k: int) -> float:
        lf = self.lf
        return lf[n] - lf[k] - lf[n - k]

    def _kterm(self, n: int, e: int, hist: dict) -> float:
        if n == 0:
            return 0.0
        if not self.hyper:
            return self._lm(n, e)
        lf = self.lf
        return lf[n] - sum(lf[c] for c in hist.values()) + log_q(e, n)

    def _kterm_cached(self, r: int) -> float:
        n = int(self.n_tok[r])
        if n == 0:
            return 0.0
        if not self.hyper:
            return self._lm(n, int(self.e_tok[r]))
        return self.lf[n] - self.hsum[r] + log_q(int(self.e_tok[r]), n)

    def _kterm_shift(self, r: int, kx: int, sign: int) -> float:
        """k-prior term of group ``r`` after adding (sign=+1) or removing one token of degree kx."""
        n = int(self.n_tok[r]) + sign
        e = int(self.e_tok[r]) + sign * kx
        if n == 0:
            return 0.0
        if not self.hyper:
            return self._lm(n, e)
        lf = self.lf
        c = self.hist[r].get(kx, 0)
        hsum = self.hsum[r] - lf[c] + lf[c + sign]
        return lf[n] - hsum + log_q(e, n)

    def _wterm(self, cnt: float, W: float) -> float:
        a, b = self.wait_group
        if cnt == 0:
            return 0.0
        return -(a * math.log(b) + math.lgamma(cnt + a) - math.lgamma(a) - (cnt + a) * math.log(W + b))

    def _ers_prior_all(self, B: int, e_mem: np.ndarray) -> float:
        e = e_mem[e_mem > 0]
        if e.size == 0:
            return 0.0
        lf = self.lf
        return float(np.sum(lf[B + e - 1] - lf[e]) - e.size * lf[B - 1])

    def _peek_free(self, side: int) -> int:
        free = self.free_tok if side == TOK else self.free_mem
        return free[-1]

    # --------------------------------------------------------------- totals
    def dl_terms(self) -> dict:
        lf = self.lf
        ers = self.ers
        nz = ers[ers > 0]
        seq = -(lf[nz].sum() + lf[self.k].sum() - lf[self.e_tok].sum() - lf[self.e_mem].sum())
        kp = float(self.kterm.sum())
        ersp = self._ers_prior_all(self.B_N, self.e_mem)
        esp = self._lm(self.B_M, self.E)
        tp = lf[self.N] - lf[self.n_tok].sum() + self._lbinom(self.N - 1, self.B_N - 1)
        mp = 0.0
        if not self.unified:
            mp = lf[self.Ms] - lf[self.n_mem].sum() + self._lbinom(self.Ms - 1, self.B_M - 1)
        out = dict(seq_term=float(seq), k_prior=kp, ers_prior=ersp, es_prior=esp,
                   token_partition_prior=float(tp), memory_partition_prior=float(mp))
        if self.wait_group is not None:
            act = np.flatnonzero(self.n_mem)
            out["wait_term"] = float(sum(self._wterm(self.e_mem[g], self.W[g]) for g in act))
        elif self.wait_const:
            out["wait_term"] = self.wait_const
        return out

    def dl(self) -> float:
        return float(sum(self.dl_terms().values()))

    def partition(self) -> Partition:
        if self.unified:
            tg = self.bt
            return Partition.unified_from(self.chain, _compact(tg))
        return Partition(_compact(self.bt), _compact(self.bm))

    def snapshot(self) -> tuple:
        return self.bt.copy(), (None if self.unified else self.bm.copy())

    def restore(self, snap: tuple) -> None:
        bt, bm = snap
        if self.unified:
            self._load(Partition.unified_from(self.chain, _compact(bt)))
        else:
            self._load(Partition(_compact(bt), _compact(bm)))

    def labels(self) -> tuple:
        return self.bt.copy(), (None if self.unified else self.bm.copy())

    def n_items(self, side: int) -> int:
        return self.N if side == TOK else self.Ms

    def group_of(self, i: int, side: int) -> int:
        return int(self.bt[i] if side == TOK else self.bm[i])

    def n_groups(self, side: int) -> int:
        return self.B_N if side == TOK else self.B_M

    def active(self, side: int) -> np.ndarray:
        return np.flatnonzero(self.n_tok if side == TOK else self.n_mem)

    # ----------------------------------------------------- neighbor vectors
    def _tok_vec(self, x: int):
        a, b = self.tok_ptr[x], self.tok_ptr[x + 1]
        g = self.bm[self.tok_nbr[a:b]]
        v = np.bincount(g, weights=self.tok_w[a:b], minlength=self.capM)
        sup = np.flatnonzero(v)
        return sup, v[sup].astype(np.int64)

    def _mem_vec(self, m: int):
        a, b = self.mem_ptr[m], self.mem_ptr[m + 1]
        g = self.bt[self.mem_nbr[a:b]]
        v = np.bincount(g, weights=self.mem_w[a:b], minlength=self.capN)
        sup = np.flatnonzero(v)
        return sup, v[sup].astype(np.int64)

    def _unified_cells(self, i: int, r: int, s: int):
        """Cells of ``ers`` touched by moving symbol i from r to s and their increments."""
        a, b = self.tok_ptr[i], self.tok_ptr[i + 1]
        nb, w = self.tok_nbr[a:b], self.tok_w[a:b]
        keep = nb != i
        vin = np.bincount(self.bt[nb[keep]], weights=w[keep], minlength=self.capN)
        a, b = self.mem_ptr[i], self.mem_ptr[i + 1]
        nb, w = self.mem_nbr[a:b], self.mem_w[a:b]
        keep = nb != i
        vout = np.bincount(self.bt[nb[keep]], weights=w[keep], minlength=self.capN)
        sin = np.flatnonzero(vin)
        sout = np.flatnonzero(vout)
        vi = vin[sin].astype(np.int64)
        vo = vout[sout].astype(np.int64)
        ws = int(self.selfloop[i])
        ni, no = len(sin), len(sout)
        rows = np.concatenate([np.full(ni, r), np.full(ni, s), sout, sout, [r, s]])
        cols = np.concatenate([sin, sin, np.full(no, r), np.full(no, s), [r, s]])
        inc = np.concatenate([-vi, vi, -vo, vo, [-ws, ws]])
        key = rows * self.capM + cols
        ukey, inv = np.unique(key, return_inverse=True)
        dsum = np.bincount(inv, weights=inc).astype(np.int64)
        return ukey, dsum

    # ------------------------------------------------------------- deltas
    def delta(self, i: int, side: int, s: int) -> float:
        """Change of the total description length when moving item ``i`` to group ``s``.

        ``s == FRESH`` targets an empty group.
        """
        if self.unified:
            return self._delta_unified(i, s)
        if side == TOK:
            return self._delta_tok(i, s)
        return self._delta_mem(i, s)

    def _delta_tok(self, x: int, s: int) -> float:
        r = int(self.bt[x])
        if s == r:
            return 0.0
        if s == FRESH:
            if self.n_tok[r] == 1:
                return 0.0
            s = self._peek_free(TOK)
        lf = self.lf
        sup, vv = self._tok_vec(x)
        row_r = self.ers[r, sup]
        row_s = self.ers[s, sup]
        d = -(lf[row_r - vv].sum() - lf[row_r].sum() + lf[row_s + vv].sum() - lf[row_s].sum())
        kx = int(self.k[x])
        er, es = self.e_tok[r], self.e_tok[s]
        d += lf[er - kx] - lf[er] + lf[es + kx] - lf[es]
        d += self._kterm_shift(r, kx, -1) - self.kterm[r] + self._kterm_shift(s, kx, +1) - self.kterm[s]
        nr, ns = self.n_tok[r], self.n_tok[s]
        d -= lf[nr - 1] - lf[nr] + lf[ns + 1] - lf[ns]
        B = self.B_N
        nB = B - (nr == 1) + (ns == 0)
        if nB != B:
            d += self._lbinom(self.N - 1, nB - 1) - self._lbinom(self.N - 1, B - 1)
            d += self._ers_prior_all(nB, self.e_mem) - self._ers_prior_all(B, self.e_mem)
        return float(d)

    def _delta_mem(self, m: int, s: int) -> float:
        r = int(self.bm[m])
        if s == r:
            return 0.0
        if s == FRESH:
            if self.n_mem[r] == 1:
                return 0.0
            s = self._peek_free(MEM)
        lf = self.lf
        sup, vv = self._mem_vec(m)
        col_r = self.ers[sup, r]
        col_s = self.ers[sup, s]
        d = -(lf[col_r - vv].sum() - lf[col_r].sum() + lf[col_s + vv].sum() - lf[col_s].sum())
        dm = int(self.dmem[m])
        er, es = int(self.e_mem[r]), int(self.e_mem[s])
        d += lf[er - dm] - lf[er] + lf[es + dm] - lf[es]
        BN = self.B_N
        d += self._lm(BN, er - dm) - self._lm(BN, er) + self._lm(BN, es + dm) - self._lm(BN, es)
        nr, ns = self.n_mem[r], self.n_mem[s]
        d -= lf[nr - 1] - lf[nr] + lf[ns + 1] - lf[ns]
        B = self.B_M
        nB = B - (nr == 1) + (ns == 0)
        if nB != B:
            d += self._lbinom(self.Ms - 1, nB - 1) - self._lbinom(self.Ms - 1, B - 1)
            d += self._lm(nB, self.E) - self._lm(B, self.E)
        if self.wait_group is not None:
            wm = self.wmem[m]
            Wr, Ws = self.W[r], self.W[s]
            d += (self._wterm(er - dm, Wr - wm) - self._wterm(er, Wr)
                  + self._wterm(es + dm, Ws + wm) - self._wterm(es, Ws))
        return float(d)

    def _delta_unified(self, i: int, s: int) -> float:
        r = int(self.bt[i])
        if s == r:
            return 0.0
        if s == FRESH:
            if self.n_tok[r] == 1:
                return 0.0
            s = self._peek_free(TOK)
        lf = self.lf
        ukey, dsum = self._unified_cells(i, r, s)
        old = self.ers.ravel()[ukey]
        d = -(lf[old + dsum].sum() - lf[old].sum())
        kx = int(self.k[i])
        dm = int(self.dmem[i])
        etr, ets = self.e_tok[r], self.e_tok[s]
        emr, ems = int(self.e_mem[r]), int(self.e_mem[s])
        d += lf[etr - kx] - lf[etr] + lf[ets + kx] - lf[ets]
        d += lf[emr - dm] - lf[emr] + lf[ems + dm] - lf[ems]
        d += self._kterm_shift(r, kx, -1) - self.kterm[r] + self._kterm_shift(s, kx, +1) - self.kterm[s]
        nr, ns = self.n_tok[r], self.n_tok[s]
        d -= lf[nr - 1] - lf[nr] + lf[ns + 1] - lf[ns]
        B = self.B_N
        nB = B - (nr == 1) + (ns == 0)
        if nB != B:
            d += self._lbinom(self.N - 1, nB - 1) - self._lbinom(self.N - 1, B - 1)
            e_new = self.e_mem.copy()
            e_new[r] -= dm
            e_new[s] += dm
            d += self._ers_prior_all(nB, e_new) - self._ers_prior_all(B, self.e_mem)
            d += self._lm(nB, self.E) - self._lm(B, self.E)
        else:
            d += self._lm(B, emr - dm) - self._lm(B, emr) + self._lm(B, ems + dm) - self._lm(B, ems)
        if self.wait_group is not None:
            wm = self.wmem[i]
            Wr, Ws = self.W[r], self.W[s]
            d += (self._wterm(emr - dm, Wr - wm) - self._wterm(emr, Wr)
                  + self._wterm(ems + dm, Ws + wm) - self._wterm(ems, Ws))
        return float(d)

    # ------------------------------------------------------------- moves
    def _take_label(self, side: int, s: int) -> int:
        free = self.free_tok if side == TOK else self.free_mem
        if s == FRESH:
            return free.pop()
        # reactivating a specific empty label (used when reverting)
        free.remove(s)
        return s

    def move(self, i: int, side: int, s: int) -> int:
        """Move item ``i`` to group ``s`` (or a fresh group); returns the label used."""
        if self.unified:
            side = TOK
        labels = self.bt if side == TOK else self.bm
        occ = self.n_tok if side == TOK else self.n_mem
        r = int(labels[i])
        if s == r:
            return r
        if s == FRESH and occ[r] == 1:
            return r
        if s == FRESH or occ[s] == 0:
            s = self._take_label(side, s)
        if self.unified:
            self._move_unified(i, r, s)
        elif side == TOK:
            self._move_tok(i, r, s)
        else:
            self._move_mem(i, r, s)
        return s

    def _hist_update(self, r: int, kx: int, sign: int):
        h = self.hist[r]
        c = h.get(kx, 0) + sign
        self.hsum[r] += self.lf[c] - self.lf[c - sign]
        if c:
            h[kx] = c
        else:
            del h[kx]

    def _tok_bookkeeping(self, x: int, r: int, s: int):
        kx = int(self.k[x])
        self.e_tok[r] -= kx
        self.e_tok[s] += kx
        self.n_tok[r] -= 1
        self.n_tok[s] += 1
        self._hist_update(r, kx, -1)
        self._hist_update(s, kx, +1)
        if not self._deferred:
            self.kterm[r] = self._kterm_cached(r)
            self.kterm[s] = self._kterm_cached(s)
        if self.n_tok[s] == 1:
            self.B_N += 1
        if self.n_tok[r] == 0:
            self.B_N -= 1
            self.free_tok.append(r)
        self.bt[x] = s

    def _move_tok(self, x: int, r: int, s: int):
        sup, vv = self._tok_vec(x)
        self.ers[r, sup] -= vv
        self.ers[s, sup] += vv
        self._tok_bookkeeping(x, r, s)

    def _move_mem(self, m: int, r: int, s: int):
        sup, vv = self._mem_vec(m)
        self.ers[sup, r] -= vv
        self.ers[sup, s] += vv
        dm = int(self.dmem[m])
        self.e_mem[r] -= dm
        self.e_mem[s] += dm
        self.n_mem[r] -= 1
        self.n_mem[s] += 1
        if self.wait_group is not None:
            self.W[r] -= self.wmem[m]
            self.W[s] += self.wmem[m]
        if self.n_mem[s] == 1:
            self.B_M += 1
        if self.n_mem[r] == 0:
            self.B_M -= 1
            self.free_mem.append(r)
        self.bm[m] = s

    def _move_unified(self, i: int, r: int, s: int):
        ukey, dsum = self._unified_cells(i, r, s)
        flat = self.ers.ravel()
        flat[ukey] += dsum
        dm = int(self.dmem[i])
        self.e_mem[r] -= dm
        self.e_mem[s] += dm
        if self.wait_group is not None:
            self.W[r] -= self.wmem[i]
            self.W[s] += self.wmem[i]
        self._tok_bookkeeping(i, r, s)
        self.B_M = self.B_N

    # ------------------------------------------------------------- merges
    def merge_delta(self, side: int, r: int, s: int) -> float:
        """Change of the description length when group ``r`` is merged into ``s``."""
        if r == s:
            return 0.0
        lf = self.lf
        if self.unified:
            side = TOK
        if self.unified:
            ers = self.ers
            mask = np.ones(self.capN, dtype=bool)
            mask[[r, s]] = False
            rr, rs_, sr, ss = ers[r, r], ers[r, s], ers[s, r], ers[s, s]
            row_r, row_s = ers[r, mask], ers[s, mask]
            col_r, col_s = ers[mask, r], ers[mask, s]
            d = -(lf[row_r + row_s].sum() - lf[row_r].sum() - lf[row_s].sum()
                  + lf[col_r + col_s].sum() - lf[col_r].sum() - lf[col_s].sum()
                  + lf[rr + rs_ + sr + ss] - lf[rr] - lf[rs_] - lf[sr] - lf[ss])
            d += self._merge_tok_terms(r, s)
            emr, ems = int(self.e_mem[r]), int(self.e_mem[s])
            d += lf[emr + ems] - lf[emr] - lf[ems]
            B = self.B_N
            e_new = self.e_mem.copy()
            e_new[s] += emr
            e_new[r] = 0
            d += self._ers_prior_all(B - 1, e_new) - self._ers_prior_all(B, self.e_mem)
            d += self._lm(B - 1, self.E) - self._lm(B, self.E)
            d += self._lbinom(self.N - 1, B - 2) - self._lbinom(self.N - 1, B - 1)
            d += self._merge_wait(r, s)
            return float(d)
        if side == TOK:
            row_r, row_s = self.ers[r], self.ers[s]
            d = -(lf[row_r + row_s].sum() - lf[row_r].sum() - lf[row_s].sum())
            d += self._merge_tok_terms(r, s)
            B = self.B_N
            d += self._lbinom(self.N - 1, B - 2) - self._lbinom(self.N - 1, B - 1)
            d += self._ers_prior_all(B - 1, self.e_mem) - self._ers_prior_all(B, self.e_mem)
            return float(d)
        col_r, col_s = self.ers[:, r], self.ers[:, s]
        d = -(lf[col_r + col_s].sum() - lf[col_r].sum() - lf[col_s].sum())
        er, es = int(self.e_mem[r]), int(self.e_mem[s])
        d += lf[er + es] - lf[er] - lf[es]
        BN = self.B_N
        d += self._lm(BN, er + es) - self._lm(BN, er) - self._lm(BN, es)
        nr, ns = int(self.n_mem[r]), int(self.n_mem[s])
        d -= lf[nr + ns] - lf[nr] - lf[ns]
        B = self.B_M
        d += self._lbinom(self.Ms - 1, B - 2) - self._lbinom(self.Ms - 1, B - 1)
        d += self._lm(B - 1, self.E) - self._lm(B, self.E)
        d += self._merge_wait(r, s)
        return float(d)

    def _merge_tok_terms(self, r: int, s: int) -> float:
        lf = self.lf
        er, es = int(self.e_tok[r]), int(self.e_tok[s])
        d = lf[er + es] - lf[er] - lf[es]
        nr, ns = int(self.n_tok[r]), int(self.n_tok[s])
        if self.hyper:
            hr, hs = self.hist[r], self.hist[s]
            merged = dict(hs)
            for kx, c in hr.items():
                merged[kx] = merged.get(kx, 0) + c
            kt = self._kterm(nr + ns, er + es, merged)
        else:
            kt = self._lm(nr + ns, er + es)
        d += kt - self.kterm[r] - self.kterm[s]
        d -= lf[nr + ns] - lf[nr] - lf[ns]
        return d

    def _merge_wait(self, r: int, s: int) -> float:
        if self.wait_group is None:
            return 0.0
        er, es = float(self.e_mem[r]), float(self.e_mem[s])
        Wr, Ws = self.W[r], self.W[s]
        return self._wterm(er + es, Wr + Ws) - self._wterm(er, Wr) - self._wterm(es, Ws)

    def members(self, side: int, r: int) -> np.ndarray:
        labels = self.bt if (side == TOK or self.unified) else self.bm
        return np.flatnonzero(labels == r)

    def merge(self, side: int, r: int, s: int):
        # the k-prior of the two groups is settled once, not per member
        self._deferred = True
        try:
            for i in self.members(side, r):
                self.move(int(i), side, s)
        finally:
            self._deferred = False
        if side == TOK or self.unified:
            self.kterm[r] = self._kterm_cached(r)
            self.kterm[s] = self._kterm_cached(s)

    # -------------------------------------------------------- proposals
    def degree(self, i: int, side: int) -> int:
        if self.unified:
            return int(self.k[i] + self.dmem[i])
        return int(self.k[i] if side == TOK else self.dmem[i])

    def propose(self, i: int, side: int, rng: np.random.Generator, epsilon: float) -> int:
        """Draw a target group with the neighbor-block heuristic.

        With probability ``eps*B / (eps*B + deg)`` the target is uniform over
        the ``B`` existing groups plus one fresh group; otherwise a random
        neighbor's group ``t`` is chosen and the target is drawn in
        proportion to the block counts adjacent to ``t``.
        """
        if self.unified:
            side = TOK
        B = self.n_groups(side)
        d = self.degree(i, side)
        if d == 0 or rng.random() * (epsilon * B + d) < epsilon * B:
            j = int(rng.integers(B + 1))
            if j == B:
                return FRESH
            return int(self.active(side)[j])
        u = int(rng.integers(d))
        if self.unified:
            if u < self.k[i]:
                t = self._pick_nbr(self.tok_ptr, self.tok_nbr, self.tok_cw, i, u)
                return self._pick_from(self.ers[:, self.bt[t]], rng)
            t = self._pick_nbr(self.mem_ptr, self.mem_nbr, self.mem_cw, i, u - int(self.k[i]))
            return self._pick_from(self.ers[self.bt[t], :], rng)
        if side == TOK:
            j = self._pick_nbr(self.tok_ptr, self.tok_nbr, self.tok_cw, i, u)
            return self._pick_from(self.ers[:, self.bm[j]], rng)
        j = self._pick_nbr(self.mem_ptr, self.mem_nbr, self.mem_cw, i, u)
        return self._pick_from(self.ers[self.bt[j], :], rng)

    @staticmethod
    def _pick_nbr(ptr, nbr, cw, i, u):
        a, b = ptr[i], ptr[i + 1]
        return int(nbr[a + np.searchsorted(cw[a:b], u, side="right")])

    @staticmethod
    def _pick_from(weights: np.ndarray, rng: np.random.Generator) -> int:
        cw = np.cumsum(weights)
        return int(np.searchsorted(cw, rng.integers(cw[-1]), side="right"))

    def proposal_prob(self, i: int, side: int, s: int, epsilon: float) -> float:
        """Probability that :meth:`propose` returns ``s`` in the current state."""
        if self.unified:
            side = TOK
        B = self.n_groups(side)
        d = self.degree(i, side)
        p_rand = 1.0 if d == 0 else epsilon * B / (epsilon * B + d)
        p = p_rand / (B + 1)
        if s == FRESH or d == 0:
            return p
        if self.unified:
            a, b = self.tok_ptr[i], self.tok_ptr[i + 1]
            vin = np.bincount(self.bt[self.tok_nbr[a:b]], weights=self.tok_w[a:b], minlength=self.capM)
            a, b = self.mem_ptr[i], self.mem_ptr[i + 1]
            vout = np.bincount(self.bt[self.mem_nbr[a:b]], weights=self.mem_w[a:b], minlength=self.capN)
            t = np.flatnonzero(vin)
            q = np.sum(vin[t] * self.ers[s, t] / self.e_mem[t])
            u = np.flatnonzero(vout)
            q += np.sum(vout[u] * self.ers[u, s] / self.e_tok[u])
        elif side == TOK:
            t, v = self._tok_vec(i)
            q = np.sum(v * self.ers[s, t] / self.e_mem[t])
        else:
            t, v = self._mem_vec(i)
            q = np.sum(v * self.ers[t, s] / self.e_tok[t])
        return float(p + (1.0 - p_rand) * q / d)

    def check(self):
        """Recompute every aggregate from the labels; raise on mismatch."""
        ch = self.chain
        ers = np.zeros_like(self.ers)
        np.add.at(ers, (self.bt[ch.a_tok], self.bm[self.mem_of_chain[ch.a_mem_idx]]), ch.a_count)
        if not np.array_equal(ers, self.ers):
            raise InvariantError("block matrix out of sync")
        if not np.array_equal(ers.sum(axis=1), self.e_tok) or not np.array_equal(ers.sum(axis=0), self.e_mem):
            raise InvariantError("block margins out of sync")
        if not np.array_equal(np.bincount(self.bt, minlength=self.capN), self.n_tok):
            raise InvariantError("token occupancy out of sync")
        if self.B_N != np.count_nonzero(self.n_tok) or self.B_M != np.count_nonzero(self.n_mem):
            raise InvariantError("group counts out of sync")


def _compact(labels: np.ndarray) -> np.ndarray:
    if labels.size == 0:
        return labels.copy()
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    mapping = np.zeros(int(labels.max()) + 1, dtype=np.int64)
    mapping[order] = np.arange(len(order))
    return mapping[labels]
