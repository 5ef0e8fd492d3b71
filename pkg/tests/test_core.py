import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynblock.core import (
    SEPARATOR, Sequence, annotate_epochs, build_chain, chain_from_transitions, ingest_edge_stream,
    read_edge_tsv, read_records, read_waits, tokenize_records,
)
from dynblock.dl import Partition, total_dl
from dynblock.errors import ConfigError, InputError
from dynblock.inference import FitConfig, agglomerative_search

from oracles import raw_transitions


def test_tokenize_with_separator():
    alphabet, seq = tokenize_records([["a", "b"], ["a"]])
    assert [alphabet.key(int(t)) for t in seq.tokens] == ["a", "b", SEPARATOR, "a", SEPARATOR]
    assert alphabet.N == 3
    assert alphabet.separator_id == alphabet.id(SEPARATOR)


def test_tokenize_plain_concatenation():
    alphabet, seq = tokenize_records([["a", "b"]], separator_policy="none")
    assert seq.tokens.tolist() == [0, 1]
    assert alphabet.N == 2 and alphabet.separator_id is None


@pytest.mark.parametrize("records, policy", [
    ([], "insert_separator"),
    ([["a", SEPARATOR]], "insert_separator"),
    ([["a", ""]], "none"),
])
def test_tokenize_rejects(records, policy):
    with pytest.raises(InputError):
        tokenize_records(records, policy)


def test_tokenize_unknown_policy():
    with pytest.raises(ConfigError):
        tokenize_records([["a"]], "sometimes")


def test_separator_alphabet_size_counts_distinct_tokens_plus_one():
    rng = np.random.default_rng(0)
    airports = [f"A{i:03d}" for i in range(464)]
    records = [list(rng.choice(airports, size=int(rng.integers(2, 6)))) for _ in range(3000)]
    records.append(airports)  # every airport appears at least once
    alphabet, _ = tokenize_records(records)
    assert alphabet.N == 465


def test_build_chain_direct_count():
    alphabet, seq = tokenize_records([["a", "b", "a", "b"]], "none")
    ch = build_chain(seq, 1)
    a, b = alphabet.id("a"), alphabet.id("b")
    assert ch.E == 3 and ch.M == 2
    assert ch.a(b, ch.memory_id((a,))) == 2
    assert ch.a(a, ch.memory_id((b,))) == 1
    assert ch.k[a] == 1 and ch.k[b] == 2


def test_build_chain_repeated_token():
    ch = build_chain(Sequence([0, 0, 0]), 2)
    assert ch.E == 1 and ch.M == 1 and ch.k.tolist() == [1]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_build_chain_matches_recount(N, n, seed):
    rng = np.random.default_rng(seed)
    toks = rng.integers(0, N, size=int(rng.integers(n + 1, 80)))
    ch = build_chain(Sequence(toks), n)
    ch.check()
    got = {(int(x), tuple(ch.memories[m].tolist())): c for (x, m), c in ch.as_dict().items()}
    assert got == dict(raw_transitions(toks.tolist(), n))
    assert ch.k.sum() == ch.a_mem.sum() == ch.E == len(toks) - n


def test_cyclic_boundary_wraps():
    toks = np.array([0, 1, 2, 1, 0])
    ch = build_chain(Sequence(toks), 2, boundary="cyclic")
    assert ch.E == len(toks)
    # the first emissions condition on the tail of the sequence
    expect = raw_transitions(toks[-2:].tolist() + toks.tolist(), 2)
    got = {(int(x), tuple(ch.memories[m].tolist())): c for (x, m), c in ch.as_dict().items()}
    assert got == dict(expect)
    assert np.array_equal(ch.k, np.bincount(toks))


def test_build_chain_errors():
    with pytest.raises(InputError):
        build_chain(Sequence([0, 1]), 2)
    with pytest.raises(ConfigError):
        build_chain(Sequence([0, 1, 0]), 0)
    with pytest.raises(ConfigError):
        build_chain(Sequence([0, 1, 0]), 1, boundary="mirror")


def test_build_chain_is_deterministic():
    toks = np.random.default_rng(3).integers(0, 7, 500)
    a, b = build_chain(Sequence(toks), 3), build_chain(Sequence(toks.copy()), 3)
    for f in ("memories", "a_tok", "a_mem_idx", "a_count", "k", "a_mem"):
        assert np.array_equal(getattr(a, f), getattr(b, f))


def test_offset_aligns_orders():
    toks = np.random.default_rng(4).integers(0, 5, 300)
    for n in (1, 2, 3):
        ch = build_chain(Sequence(toks), n, offset=3)
        assert ch.E == len(toks) - 3
        assert np.array_equal(ch.k, np.bincount(toks[3:], minlength=5))


def test_reset_at_separator_keeps_memories_inside_records():
    alphabet, seq = tokenize_records([["a", "b", "c"], ["d", "e"]])
    ch = build_chain(seq, 2, reset_at_separator=True)
    sep = alphabet.separator_id
    for w in ch.memories:
        if w[0] == sep:
            assert w[1] == sep
    assert ch.E == len(seq) - 2


def test_waits_alignment():
    seq = Sequence([0, 1, 0, 1], waits=[1.0, 2.0, 4.0])
    ch = build_chain(seq, 1)
    assert ch.wait_sum[ch.memory_id((0,))] == pytest.approx(1.0 + 4.0)
    assert ch.wait_sum[ch.memory_id((1,))] == pytest.approx(2.0)
    with pytest.raises(InputError):
        Sequence([0, 1, 0], waits=[1.0])
    with pytest.raises(InputError):
        Sequence([0, 1], waits=[-1.0])


def test_chain_from_transitions():
    ch = chain_from_transitions(3, 1, {(1, (0,)): 2, (0, (1,)): 1, (2, (2,)): 3})
    ch.check()
    assert ch.k.tolist() == [1, 2, 3]
    assert ch.a(1, ch.memory_id((0,))) == 2
    with pytest.raises(InputError):
        chain_from_transitions(2, 1, {(2, (0,)): 1})


def test_annotate_epochs_definition():
    alphabet, seq = tokenize_records([["a", "b"]], "none")
    out = annotate_epochs(seq, [0, 1])
    assert out.alphabet.entries == [("a", 0), ("b", 1)]
    assert out.alphabet.N == 2
    assert out.alphabet.project(1) == "b"
    with pytest.raises(InputError):
        annotate_epochs(seq, [0])


def test_single_epoch_is_a_relabeling():
    toks = np.random.default_rng(5).integers(0, 6, 400)
    seq = Sequence(toks)
    ann = annotate_epochs(seq, np.zeros(len(toks), dtype=int))
    base = ann.alphabet.base_ids
    ch, ca = build_chain(seq, 2), build_chain(ann, 2)
    assert ch.E == ca.E and ch.M == ca.M
    assert np.array_equal(ch.k[base], ca.k)
    cfg = FitConfig(seed=0, restarts=2)
    assert agglomerative_search(ch, cfg).total == pytest.approx(agglomerative_search(ca, cfg).total, abs=1e-9)


def _text(rng, P, length):
    x = [0]
    for _ in range(length - 1):
        x.append(int(rng.choice(len(P), p=P[x[-1]])))
    return np.array(x)


def test_epochs_lower_the_description_length_of_two_languages():
    rng = np.random.default_rng(6)
    N = 6
    # two "languages" over one alphabet with opposite transition preferences
    P1 = np.full((N, N), 0.02)
    P2 = np.full((N, N), 0.02)
    for x in range(N):
        P1[x, (x + 1) % N] = 1.0
        P2[x, (x - 1) % N] = 1.0
    P1 /= P1.sum(axis=1, keepdims=True)
    P2 /= P2.sum(axis=1, keepdims=True)
    toks = np.concatenate([_text(rng, P1, 1500), _text(rng, P2, 1500)])
    seq = Sequence(toks)
    ann = annotate_epochs(seq, np.repeat([0, 1], 1500))
    cfg = FitConfig(seed=0, restarts=2)
    plain = agglomerative_search(build_chain(seq, 1), cfg).total
    annotated = agglomerative_search(build_chain(ann, 1), cfg).total
    assert annotated < plain


def test_edge_ingestion_examples():
    s = ingest_edge_stream([(1, 2), (4, 3)])
    assert s.N == 4 and s.E == 2
    A = s.aggregated()
    ids = {v: s.node_id(v) for v in (1, 2, 3, 4)}
    # undirected pairs are stored with the smaller dense id first
    assert A == {tuple(sorted((ids[1], ids[2]))): 1, tuple(sorted((ids[4], ids[3]))): 1}
    assert s.degrees().tolist() == [1, 1, 1, 1]

    s = ingest_edge_stream([(1, 2)] * 3)
    assert s.aggregated() == {(0, 1): 3}
    assert s.degrees().tolist() == [3, 3]


def test_edge_degree_sums():
    rng = np.random.default_rng(7)
    rows = [(int(a), int(b)) for a, b in rng.integers(0, 9, size=(60, 2))]
    und = ingest_edge_stream(rows)
    assert und.degrees().sum() == 2 * und.E
    d_out, d_in = ingest_edge_stream(rows, directed=True).degrees()
    assert d_out.sum() == d_in.sum() == len(rows)


def test_self_loop_counts_twice():
    s = ingest_edge_stream([("a", "a"), ("a", "b")])
    assert s.degrees().tolist() == [3, 1]


def test_edge_ingestion_errors():
    with pytest.raises(InputError):
        ingest_edge_stream([(1, 2, 5.0), (2, 3, 4.0)])
    with pytest.raises(InputError):
        ingest_edge_stream([(1, 2, 5.0), (2, 3)])
    with pytest.raises(InputError):
        ingest_edge_stream([(1,)])


def test_prefix_keeps_touched_nodes():
    s = ingest_edge_stream([("a", "b"), ("c", "d"), ("a", "c")])
    p = s.prefix(1)
    assert p.nodes == ["a", "b"] and p.E == 1


def test_file_readers(tmp_path):
    seq = tmp_path / "seq.txt"
    seq.write_text("a b c\n\nd e\n", encoding="utf-8")
    assert read_records(seq) == [["a", "b", "c"], ["d", "e"]]
    assert read_records(seq, char_level=True)[1] == ["d", " ", "e"]

    waits = tmp_path / "w.txt"
    waits.write_text("0.5\n0\n2\n")
    assert read_waits(waits).tolist() == [0.5, 1e-6, 2.0]
    waits.write_text("0.5\nabc\n")
    with pytest.raises(InputError):
        read_waits(waits)

    tsv = tmp_path / "e.tsv"
    tsv.write_text("# comment\nx\ty\t1\ny\tz\t2\n")
    s = read_edge_tsv(tsv)
    assert s.nodes == ["x", "y", "z"] and s.times.tolist() == [1.0, 2.0]
    tsv.write_text("x y\n")
    with pytest.raises(InputError):
        read_edge_tsv(tsv)


def test_partition_over_chain_covers_tokens_and_memories():
    ch = build_chain(Sequence([0, 1, 2, 0, 1]), 1)
    bd = total_dl(ch, Partition.trivial(ch))
    assert np.isfinite(bd.total)
