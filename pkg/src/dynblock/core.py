"""Data ingestion, tokenization and sufficient statistics of order-n chains."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Optional, Sequence as Seq

import numpy as np

from .errors import ConfigError, InputError

SEPARATOR = "§"
ZERO_WAIT_FLOOR = 1e-6

BOUNDARIES = ("condition_on_prefix", "cyclic")


class TokenAlphabet:
    """Ordered registry of raw tokens -> dense ids ``[0, N)``.

    Ids are assigned in first-appearance order and never change. Entries are
    strings, or ``(base, epoch)`` pairs for epoch-annotated alphabets.
    """

    def __init__(self, entries: Iterable[Hashable] = (), separator_id: Optional[int] = None):
        self.entries: list = []
        self._index: dict = {}
        for e in entries:
            self.add(e)
        self.separator_id = separator_id
        # set by annotate_epochs: annotated id -> (base id, epoch)
        self.base_ids: Optional[np.ndarray] = None
        self.epoch_of: Optional[np.ndarray] = None
        self.base: Optional["TokenAlphabet"] = None

    def add(self, key: Hashable) -> int:
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.entries)
            self._index[key] = idx
            self.entries.append(key)
        return idx

    def id(self, key: Hashable) -> int:
        try:
            return self._index[key]
        except KeyError:
            raise InputError(f"unknown token {key!r}") from None

    def __contains__(self, key) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def N(self) -> int:
        return len(self.entries)

    def key(self, idx: int):
        return self.entries[idx]

    def label(self, idx: int) -> str:
        """Printable form of a token; annotated tokens print as ``base@epoch``."""
        e = self.entries[idx]
        if isinstance(e, tuple):
            return f"{e[0]}@{e[1]}"
        return str(e)

    def project(self, idx: int):
        """Drop the epoch annotation (identity for plain alphabets)."""
        e = self.entries[idx]
        return e[0] if isinstance(e, tuple) and self.base_ids is not None else e


@dataclass
class Sequence:
    """A discrete token sequence with optional waiting times and epochs.

    ``waits[t - 1]`` is the real time between ``tokens[t - 1]`` and
    ``tokens[t]``, so ``len(waits) == len(tokens) - 1``.
    """

    tokens: np.ndarray
    alphabet: Optional[TokenAlphabet] = None
    waits: Optional[np.ndarray] = None
    epochs: Optional[np.ndarray] = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1:
            raise InputError("tokens must be one-dimensional")
        if self.tokens.size and self.tokens.min() < 0:
            raise InputError("token ids must be nonnegative")
        if self.alphabet is not None and self.tokens.size and self.tokens.max() >= len(self.alphabet):
            raise InputError("token id outside the alphabet")
        if self.waits is not None:
            self.waits = np.asarray(self.waits, dtype=np.float64)
            if len(self.waits) != max(len(self.tokens) - 1, 0):
                raise InputError(
                    f"expected {max(len(self.tokens) - 1, 0)} waiting times "
                    f"(one per consecutive token pair), got {len(self.waits)}"
                )
            if np.any(self.waits < 0) or not np.all(np.isfinite(self.waits)):
                raise InputError("waiting times must be finite and nonnegative")
        if self.epochs is not None:
            self.epochs = np.asarray(self.epochs, dtype=np.int64)
            if len(self.epochs) != len(self.tokens):
                raise InputError("epochs must have one entry per token")
            used = np.unique(self.epochs)
            if used.size and not np.array_equal(used, np.arange(used.size)):
                raise InputError("epoch ids must cover [0, T_epochs) without gaps")

    def __len__(self):
        return len(self.tokens)

    @property
    def N(self) -> int:
        if self.alphabet is not None:
            return len(self.alphabet)
        return int(self.tokens.max()) + 1 if self.tokens.size else 0


@dataclass
class ChainCounts:
    """Sparse sufficient statistics of an order-``n`` chain.

    Transitions are stored in COO form sorted by (memory, token):
    ``a_mem_idx[i] -> a_tok[i]`` was observed ``a_count[i]`` times.
    """

    n: int
    N: int
    memories: np.ndarray  # (M, n) windows, most recent token first
    a_tok: np.ndarray
    a_mem_idx: np.ndarray
    a_count: np.ndarray
    k: np.ndarray  # (N,) emission counts
    a_mem: np.ndarray  # (M,) outgoing totals
    initial_memory: tuple = ()
    wait_sum: Optional[np.ndarray] = None  # (M,) total waiting time per memory
    emitted_tokens: Optional[np.ndarray] = field(default=None, repr=False)
    emitted_mems: Optional[np.ndarray] = field(default=None, repr=False)
    emitted_waits: Optional[np.ndarray] = field(default=None, repr=False)
    alphabet: Optional[TokenAlphabet] = field(default=None, repr=False)

    def __post_init__(self):
        self._mem_index = {tuple(int(v) for v in w): i for i, w in enumerate(self.memories)}

    @property
    def M(self) -> int:
        return len(self.memories)

    @property
    def E(self) -> int:
        return int(self.a_count.sum())

    def memory_id(self, window) -> int:
        try:
            return self._mem_index[tuple(int(v) for v in window)]
        except KeyError:
            raise InputError(f"memory {tuple(window)} was not observed") from None

    def has_memory(self, window) -> bool:
        return tuple(int(v) for v in window) in self._mem_index

    def a(self, x: int, m: int) -> int:
        sel = (self.a_tok == x) & (self.a_mem_idx == m)
        return int(self.a_count[sel].sum())

    def as_dict(self) -> dict:
        return {(int(x), int(m)): int(c) for x, m, c in zip(self.a_tok, self.a_mem_idx, self.a_count)}

    def check(self) -> None:
        """Recount margins from the COO triples; raise on mismatch."""
        from .errors import InvariantError

        k = np.bincount(self.a_tok, weights=self.a_count, minlength=self.N).astype(np.int64)
        am = np.bincount(self.a_mem_idx, weights=self.a_count, minlength=self.M).astype(np.int64)
        if not np.array_equal(k, self.k) or not np.array_equal(am, self.a_mem):
            raise InvariantError("chain margins disagree with transition counts")
        if k.sum() != am.sum() or k.sum() != self.E:
            raise InvariantError("sum of k_x differs from E")


def tokenize_records(
    records: Seq[Seq[str]],
    separator_policy: str = "insert_separator",
    separator: str = SEPARATOR,
) -> tuple[TokenAlphabet, Sequence]:
    """Concatenate records of raw tokens into one dense-id sequence.

    With ``insert_separator`` a reserved token is appended after every
    record, so record boundaries stay visible to the chain.
    """
    if separator_policy not in ("insert_separator", "none"):
        raise ConfigError(f"unknown separator policy {separator_policy!r}")
    if not records:
        raise InputError("no records to tokenize")
    alphabet = TokenAlphabet()
    out: list[int] = []
    insert = separator_policy == "insert_separator"
    for rec in records:
        for tok in rec:
            if not isinstance(tok, str) or not tok:
                raise InputError(f"tokens must be nonempty strings, got {tok!r}")
            if insert and tok == separator:
                raise InputError(f"raw token equals the reserved separator {separator!r}")
            out.append(alphabet.add(tok))
        if insert:
            out.append(alphabet.add(separator))
    if insert:
        alphabet.separator_id = alphabet.id(separator)
    return alphabet, Sequence(np.array(out, dtype=np.int64), alphabet=alphabet)


def _windows(x: np.ndarray, n: int, positions: np.ndarray, cyclic: bool) -> np.ndarray:
    T = len(x)
    cols = []
    for j in range(1, n + 1):
        idx = positions - j
        if cyclic:
            idx = idx % T
        cols.append(x[idx])
    return np.stack(cols, axis=1)


def build_chain(
    seq: Sequence,
    n: int,
    boundary: str = "condition_on_prefix",
    offset: int = 0,
    reset_at_separator: bool = False,
) -> ChainCounts:
    """Count the order-``n`` transitions of ``seq``.

    Parameters
    ----------
    seq : Sequence
    n : int
        Markov order, ``n >= 1``.
    boundary : {"condition_on_prefix", "cyclic"}
        ``condition_on_prefix`` treats the first ``n`` tokens as given
        (``E = T - n``); ``cyclic`` wraps the sequence (``E = T``).
    offset : int
        First emitted position is ``max(n, offset)``. Used to make chains of
        different orders describe the same emissions.
    reset_at_separator : bool
        Replace window entries older than the most recent separator by the
        separator itself, so memories never reach into the previous record.
    """
    if n < 1:
        raise ConfigError(f"order must be >= 1, got {n}")
    if boundary not in BOUNDARIES:
        raise ConfigError(f"unknown boundary {boundary!r}")
    x = seq.tokens
    T = len(x)
    N = seq.N
    cyclic = boundary == "cyclic"
    if cyclic:
        if T < 1:
            raise InputError("cyclic chain needs at least one token")
        if offset:
            raise ConfigError("offset is meaningless for cyclic chains")
        if seq.waits is not None:
            raise ConfigError("waiting times are not defined for the wrap-around transition")
        positions = np.arange(T)
    else:
        start = max(n, offset)
        if T <= start:
            raise InputError(f"sequence of length {T} too short for order {n}")
        positions = np.arange(start, T)

    W = _windows(x, n, positions, cyclic)
    if reset_at_separator:
        sep = seq.alphabet.separator_id if seq.alphabet is not None else None
        if sep is None:
            raise ConfigError("reset_at_separator needs an alphabet with a separator")
        hit = np.cumsum(W == sep, axis=1) > 0
        # keep the separator itself, blank everything older
        older = np.zeros_like(hit)
        older[:, 1:] = hit[:, :-1]
        W = np.where(older, sep, W)

    memories, mem_ids = np.unique(W, axis=0, return_inverse=True)
    mem_ids = mem_ids.reshape(-1).astype(np.int64)
    tok = x[positions]
    M = len(memories)
    keys = mem_ids * max(N, 1) + tok
    ukeys, counts = np.unique(keys, return_counts=True)
    a_mem_idx = ukeys // max(N, 1)
    a_tok = ukeys % max(N, 1)
    k = np.bincount(tok, minlength=N).astype(np.int64)
    a_mem = np.bincount(mem_ids, minlength=M).astype(np.int64)

    wait_sum = emitted_waits = None
    if seq.waits is not None:
        emitted_waits = seq.waits[positions - 1]
        wait_sum = np.bincount(mem_ids, weights=emitted_waits, minlength=M)

    return ChainCounts(
        n=n,
        N=N,
        memories=memories.astype(np.int64),
        a_tok=a_tok.astype(np.int64),
        a_mem_idx=a_mem_idx.astype(np.int64),
        a_count=counts.astype(np.int64),
        k=k,
        a_mem=a_mem,
        initial_memory=tuple(int(v) for v in W[0]),
        wait_sum=wait_sum,
        emitted_tokens=tok,
        emitted_mems=mem_ids,
        emitted_waits=emitted_waits,
        alphabet=seq.alphabet,
    )


def chain_from_transitions(N: int, n: int, counts, initial_memory: Optional[tuple] = None) -> ChainCounts:
    """Build :class:`ChainCounts` directly from ``{(token, window): count}``.

    Windows are ``n``-tuples, most recent token first. Useful when the
    counts come from somewhere other than a sequence, for example the
    adjacency matrix of a graph read as one-step transitions.
    """
    if n < 1:
        raise ConfigError(f"order must be >= 1, got {n}")
    items = [(int(x), tuple(int(v) for v in w), int(c)) for (x, w), c in counts.items() if c]
    if not items:
        raise InputError("no transitions")
    for x, w, c in items:
        if not 0 <= x < N or len(w) != n or min(w) < 0 or max(w) >= N or c < 0:
            raise InputError(f"bad transition {(x, w)} -> {c}")
    memories = sorted({w for _, w, _ in items})
    mem_index = {w: i for i, w in enumerate(memories)}
    items.sort(key=lambda t: (mem_index[t[1]], t[0]))
    a_tok = np.array([x for x, _, _ in items], dtype=np.int64)
    a_mem_idx = np.array([mem_index[w] for _, w, _ in items], dtype=np.int64)
    a_count = np.array([c for _, _, c in items], dtype=np.int64)
    M = len(memories)
    return ChainCounts(
        n=n, N=N,
        memories=np.array(memories, dtype=np.int64).reshape(M, n),
        a_tok=a_tok, a_mem_idx=a_mem_idx, a_count=a_count,
        k=np.bincount(a_tok, weights=a_count, minlength=N).astype(np.int64),
        a_mem=np.bincount(a_mem_idx, weights=a_count, minlength=M).astype(np.int64),
        initial_memory=tuple(initial_memory) if initial_memory is not None else memories[0],
    )


def annotate_epochs(seq: Sequence, epoch_labels) -> Sequence:
    """Replace each token ``x`` by the pair ``(x, epoch)``.

    The returned alphabet keeps ``base_ids`` / ``epoch_of`` so reports can
    project the annotation out again. Fitting code needs no change.
    """
    labels = np.asarray(epoch_labels)
    if len(labels) != len(seq.tokens):
        raise InputError(f"{len(labels)} epoch labels for {len(seq.tokens)} tokens")
    # dense epoch ids in first-appearance order
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    epochs = order[inv.reshape(-1)].astype(np.int64)

    base = seq.alphabet
    alphabet = TokenAlphabet()
    out = np.empty(len(seq.tokens), dtype=np.int64)
    base_ids, epoch_of = [], []
    for t, (x, tau) in enumerate(zip(seq.tokens, epochs)):
        raw = base.key(int(x)) if base is not None else int(x)
        key = (raw, int(tau))
        before = len(alphabet)
        out[t] = alphabet.add(key)
        if len(alphabet) > before:
            base_ids.append(int(x))
            epoch_of.append(int(tau))
    alphabet.base_ids = np.array(base_ids, dtype=np.int64)
    alphabet.epoch_of = np.array(epoch_of, dtype=np.int64)
    alphabet.base = base
    if base is not None and base.separator_id is not None:
        seps = [i for i, b in enumerate(base_ids) if b == base.separator_id]
        alphabet.separator_id = seps[0] if len(seps) == 1 else None
    return Sequence(out, alphabet=alphabet, waits=seq.waits, epochs=epochs)


@dataclass
class EdgeStream:
    """Time-ordered edge events over a node registry.

    Undirected events are stored canonically with ``src <= dst``.
    """

    nodes: list
    src: np.ndarray
    dst: np.ndarray
    directed: bool = False
    times: Optional[np.ndarray] = None

    def __post_init__(self):
        self._index = {v: i for i, v in enumerate(self.nodes)}
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)

    @property
    def N(self) -> int:
        return len(self.nodes)

    @property
    def E(self) -> int:
        return len(self.src)

    def node_id(self, v) -> int:
        try:
            return self._index[v]
        except KeyError:
            raise InputError(f"unknown node {v!r}") from None

    def aggregated(self) -> dict:
        """Multigraph ``A_ij`` as ``{(i, j): count}``."""
        keys = self.src * self.N + self.dst
        u, c = np.unique(keys, return_counts=True)
        return {(int(k // self.N), int(k % self.N)): int(v) for k, v in zip(u, c)}

    def degrees(self):
        """Total degree per node (undirected; a self-loop adds 2) or ``(out, in)``."""
        if self.directed:
            return (np.bincount(self.src, minlength=self.N).astype(np.int64),
                    np.bincount(self.dst, minlength=self.N).astype(np.int64))
        return (np.bincount(self.src, minlength=self.N) + np.bincount(self.dst, minlength=self.N)).astype(np.int64)

    def prefix(self, n_events: int) -> "EdgeStream":
        """First ``n_events`` events over the nodes they touch (registry order kept)."""
        s, d = self.src[:n_events], self.dst[:n_events]
        used = np.unique(np.concatenate([s, d]))
        remap = -np.ones(self.N, dtype=np.int64)
        remap[used] = np.arange(len(used))
        return EdgeStream(
            nodes=[self.nodes[i] for i in used],
            src=remap[s],
            dst=remap[d],
            directed=self.directed,
            times=None if self.times is None else self.times[:n_events],
        )


def ingest_edge_stream(rows: Iterable, directed: bool = False) -> EdgeStream:
    """Build an :class:`EdgeStream` from ``(source, target[, time])`` rows."""
    nodes: list = []
    index: dict = {}
    src, dst, times = [], [], []
    has_time = None
    last = -np.inf
    for lineno, row in enumerate(rows):
        if len(row) not in (2, 3):
            raise InputError(f"row {lineno}: expected 2 or 3 fields, got {len(row)}")
        if has_time is None:
            has_time = len(row) == 3
        elif has_time != (len(row) == 3):
            raise InputError(f"row {lineno}: timestamps must be given for all rows or none")
        ids = []
        for v in row[:2]:
            i = index.get(v)
            if i is None:
                i = index[v] = len(nodes)
                nodes.append(v)
            ids.append(i)
        i, j = ids
        if not directed and i > j:
            i, j = j, i
        src.append(i)
        dst.append(j)
        if has_time:
            t = float(row[2])
            if t < last:
                raise InputError(f"row {lineno}: timestamp {t} earlier than previous {last}")
            last = t
            times.append(t)
    return EdgeStream(
        nodes=nodes,
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        directed=directed,
        times=np.array(times) if has_time else None,
    )


def read_records(path, char_level: bool = False) -> list[list[str]]:
    """One record per nonblank line; whitespace-separated tokens (or characters)."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            records.append(list(line) if char_level else line.split())
    return records


def read_waits(path, floor: float = ZERO_WAIT_FLOOR) -> np.ndarray:
    """One decimal value per line; exact zeros are floored at ``floor``."""
    vals = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                vals.append(float(line))
            except ValueError:
                raise InputError(f"{path}:{lineno}: not a number: {line!r}") from None
    w = np.array(vals, dtype=np.float64)
    if np.any(w < 0):
        raise InputError(f"{path}: negative waiting time")
    return floor_waits(w, floor)


def floor_waits(waits: np.ndarray, floor: float = ZERO_WAIT_FLOOR) -> np.ndarray:
    waits = np.asarray(waits, dtype=np.float64)
    return np.where(waits <= 0.0, floor, waits)


def read_epochs(path) -> list[list[str]]:
    """Epoch labels laid out like the sequence file (one label per token)."""
    return read_records(path)


def read_edge_tsv(path, directed: bool = False) -> EdgeStream:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise InputError(f"{path}:{lineno}: expected source<TAB>target[<TAB>time]")
            if len(parts) == 3:
                try:
                    parts[2] = float(parts[2])
                except ValueError:
                    raise InputError(f"{path}:{lineno}: bad timestamp {parts[2]!r}") from None
            rows.append(tuple(parts))
    if not rows:
        raise InputError(f"{path}: no edges")
    return ingest_edge_stream(rows, directed=directed)
