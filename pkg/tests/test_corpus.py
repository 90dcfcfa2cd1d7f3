import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deptrigger.corpus import (
    TRIGGER_TAG,
    AlignmentError,
    CorpusFormatError,
    DependencyEdge,
    EntityMention,
    ParsedSentence,
    bio_to_bioes,
    bioes_to_bio,
    compute_stats,
    is_valid_bioes,
    length_bucket,
    load_embeddings,
    read_column_corpus,
    read_conllu_parses,
    read_instances,
    replicate_per_entity,
    sample_fraction,
    spans_from_tags,
    tags_from_spans,
    write_column_corpus,
    write_instances,
)
from deptrigger.depgraph import TriggerSet

FIG1_CONLLU = """\
# text = Alice was born in Beijing
1\tAlice\t_\tPROPN\t_\t_\t3\tnsubj:pass\t_\t_
2\twas\t_\tAUX\t_\t_\t3\taux:pass\t_\t_
3\tborn\t_\tVERB\t_\t_\t0\troot\t_\t_
4\tin\t_\tADP\t_\t_\t5\tcase\t_\t_
5\tBeijing\t_\tPROPN\t_\t_\t3\tobl\t_\t_

"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- column corpus -----------------------------------------------------------

def test_minimal_sentence(tmp_path):
    sents = read_column_corpus(write(tmp_path, "a.txt", "Alice B-PER\nruns O\n"))
    assert len(sents) == 1
    assert sents[0].mentions == [EntityMention(0, 0, "PER")]
    assert sents[0].words == ["Alice", "runs"]


def test_empty_file(tmp_path):
    assert read_column_corpus(write(tmp_path, "e.txt", "")) == []


def test_docstart_and_four_columns(tmp_path):
    text = ("-DOCSTART- -X- -X- O\n\nEU NNP B-NP B-ORG\nrejects VBZ B-VP O\n"
            "German JJ B-NP B-MISC\n\nPeter NNP B-NP B-PER\nBlackburn NNP I-NP I-PER\n")
    sents = read_column_corpus(write(tmp_path, "c.txt", text))
    assert len(sents) == 2
    assert [m.as_tuple() for m in sents[0].mentions] == [(0, 0, "ORG"), (2, 2, "MISC")]
    assert sents[1].mentions == [EntityMention(0, 1, "PER")]


def test_wrong_column_count_names_line(tmp_path):
    p = write(tmp_path, "bad.txt", "a O\nb c O\n")
    with pytest.raises(CorpusFormatError, match=":2:"):
        read_column_corpus(p)


def test_single_column_rejected(tmp_path):
    with pytest.raises(CorpusFormatError, match=":1:"):
        read_column_corpus(write(tmp_path, "bad.txt", "lonely\n"))


def test_dangling_inside_repaired_with_warning(tmp_path):
    p = write(tmp_path, "r.txt", "the O\nUN I-ORG\nsaid O\n")
    with pytest.warns(UserWarning, match="repaired 1"):
        sents = read_column_corpus(p, scheme="bio")
    assert sents[0].mentions == [EntityMention(1, 1, "ORG")]


def test_dangling_inside_strict(tmp_path):
    p = write(tmp_path, "r.txt", "the O\nUN I-ORG\n")
    with pytest.raises(CorpusFormatError):
        read_column_corpus(p, scheme="bio", strict=True)


def test_iob1_leading_inside_is_not_a_repair(tmp_path):
    p = write(tmp_path, "r.txt", "Peter I-PER\nBlackburn I-PER\nand O\nJohn I-PER\nB-less B-PER\n")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sents = read_column_corpus(p, scheme="iob1")
    assert [m.as_tuple() for m in sents[0].mentions] == [(0, 1, "PER"), (3, 3, "PER"), (4, 4, "PER")]


def test_bioes_input(tmp_path):
    p = write(tmp_path, "b.txt", "New B-LOC\nYork E-LOC\nis O\nbig O\nBob S-PER\n")
    sents = read_column_corpus(p, scheme="bioes")
    assert [m.as_tuple() for m in sents[0].mentions] == [(0, 1, "LOC"), (4, 4, "PER")]


def test_unknown_tag(tmp_path):
    with pytest.raises(CorpusFormatError, match=":1:"):
        read_column_corpus(write(tmp_path, "u.txt", "a X-PER\n"))


mention_lists = st.integers(1, 12).flatmap(lambda n: st.tuples(
    st.just(n),
    st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, 3), st.sampled_from(["PER", "LOC", "ORG"])),
             max_size=4)))


def _non_overlapping(n, raw):
    used = set()
    out = []
    for start, extra, label in raw:
        end = min(n - 1, start + extra)
        span = set(range(start, end + 1))
        if span & used:
            continue
        used |= span
        out.append(EntityMention(start, end, label))
    return sorted(out)


@given(mention_lists)
def test_scheme_round_trips(case):
    n, raw = case
    spans = _non_overlapping(n, raw)
    bio = tags_from_spans(spans, n, "bio")
    bioes = tags_from_spans(spans, n, "bioes")
    assert is_valid_bioes(bioes)
    assert bioes_to_bio(bio_to_bioes(bio)) == bio
    assert bio_to_bioes(bio) == bioes
    assert spans_from_tags(bioes, "bioes") == spans
    assert spans_from_tags(bio, "bio") == spans


@given(mention_lists)
@settings(max_examples=30, deadline=None)
def test_write_read_round_trip(tmp_path_factory, case):
    n, raw = case
    spans = _non_overlapping(n, raw)
    s = ParsedSentence.from_words([f"w{i}" for i in range(n)], spans)
    path = tmp_path_factory.mktemp("rt") / "c.txt"
    for scheme in ("bio", "bioes"):
        write_column_corpus([s, s], path, scheme=scheme)
        back = read_column_corpus(path, scheme=scheme)
        assert len(back) == 2
        assert back[0].words == s.words
        assert back[0].mentions == spans


def test_greedy_recovery_of_invalid_sequences():
    tags = ["B-PER", "B-LOC", "E-LOC", "I-ORG", "O", "E-PER"]
    spans = spans_from_tags(tags, "bioes")
    assert [m.as_tuple() for m in spans] == [(0, 0, "PER"), (1, 2, "LOC"), (3, 3, "ORG"), (5, 5, "PER")]


# -- CoNLL-U -----------------------------------------------------------------

def test_fig1_parse(tmp_path):
    edges = read_conllu_parses(write(tmp_path, "f.conllu", FIG1_CONLLU))
    assert len(edges) == 1
    assert len(edges[0]) == 4
    assert DependencyEdge(2, 0, "nsubj:pass") in edges[0]


def test_root_only_sentence(tmp_path):
    text = "1\tHi\t_\t_\t_\t_\t0\troot\t_\t_\n\n"
    assert read_conllu_parses(write(tmp_path, "r.conllu", text)) == [[]]


def test_multiword_and_empty_nodes_skipped(tmp_path):
    text = ("1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n1\tde\t_\t_\t_\t_\t2\tcase\t_\t_\n"
            "2\tel\t_\t_\t_\t_\t0\troot\t_\t_\n2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n\n")
    assert read_conllu_parses(write(tmp_path, "m.conllu", text)) == [[DependencyEdge(1, 0, "case")]]


def test_alignment_error_names_sentence(tmp_path):
    sent = ParsedSentence.from_words("Alice was born in Beijing".split(), sent_id=0)
    six = FIG1_CONLLU.replace("\n\n", "\n6\t.\t_\tPUNCT\t_\t_\t3\tpunct\t_\t_\n\n")
    with pytest.raises(AlignmentError, match="sentence 0"):
        read_conllu_parses(write(tmp_path, "six.conllu", six), [sent])


def test_alignment_ok(tmp_path):
    sent = ParsedSentence.from_words("Alice was born in Beijing".split())
    edges = read_conllu_parses(write(tmp_path, "f.conllu", FIG1_CONLLU), [sent])
    assert len(edges[0]) == 4


def test_conllu_bad_column_count(tmp_path):
    with pytest.raises(CorpusFormatError, match=":1:"):
        read_conllu_parses(write(tmp_path, "x.conllu", "1\tAlice\t0\n"))


# -- replication -------------------------------------------------------------

def _tset(mention, members):
    return TriggerSet(mention, frozenset(members))


def test_two_mentions_two_instances():
    s = ParsedSentence.from_words("Alice met Bob".split(),
                                  [EntityMention(0, 0, "PER"), EntityMention(2, 2, "PER")])
    inst = replicate_per_entity(s, [_tset(s.mentions[0], {(1, 1)}), _tset(s.mentions[1], {(1, 1)})])
    assert len(inst) == 2
    for i, m in zip(inst, s.mentions):
        assert spans_from_tags(i.entity_tags, "bioes") == [m]
        assert i.kept_mention == m
        assert i.trigger_tags[1] == TRIGGER_TAG


def test_single_mention_keeps_tokens():
    s = ParsedSentence.from_words("Alice was born".split(), [EntityMention(0, 0, "PER")])
    (inst,) = replicate_per_entity(s, [_tset(s.mentions[0], {(2, 1)})])
    assert inst.tokens == s.words
    assert inst.entity_tags == ["S-PER", "O", "O"]
    assert inst.trigger_tags == ["O", "O", TRIGGER_TAG]


def test_shared_triggers_exclude_own_entity():
    words = "A and B met C yesterday".split()
    ms = [EntityMention(0, 0, "PER"), EntityMention(2, 2, "PER"), EntityMention(4, 4, "PER")]
    s = ParsedSentence.from_words(words, ms)
    # every trigger set (deliberately) lists all entity tokens plus "met"
    shared = {(0, 2), (2, 2), (4, 2), (3, 1)}
    out = replicate_per_entity(s, [_tset(m, shared) for m in ms])
    assert len(out) == 3
    for inst, m in zip(out, ms):
        idx = {i for i, _ in inst.triggers}
        assert m.start not in idx
        assert 3 in idx
        for t in range(len(words)):
            assert not (inst.entity_tags[t] != "O" and inst.trigger_tags[t] == TRIGGER_TAG)


def test_zero_mentions():
    s = ParsedSentence.from_words(["nothing", "here"])
    assert replicate_per_entity(s, []) == []


@given(mention_lists)
def test_instances_total_equals_mentions(case):
    n, raw = case
    spans = _non_overlapping(n, raw)
    s = ParsedSentence.from_words([f"w{i}" for i in range(n)], spans)
    out = replicate_per_entity(s, [_tset(m, set()) for m in spans])
    assert len(out) == len(spans)
    for inst in out:
        assert spans_from_tags(inst.entity_tags, "bioes") == [inst.kept_mention]
        assert is_valid_bioes(inst.entity_tags)


def test_instances_jsonl_round_trip(tmp_path):
    s = ParsedSentence.from_words("Alice met Bob".split(),
                                  [EntityMention(0, 0, "PER"), EntityMention(2, 2, "PER")], sent_id=4)
    inst = replicate_per_entity(s, [_tset(s.mentions[0], {(1, 1), (2, 2)}),
                                    _tset(s.mentions[1], {(1, 1)})])
    path = tmp_path / "i.jsonl"
    write_instances(inst, path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert {"tokens", "entity_tags", "trigger_tags"} <= set(rows[0])
    back = read_instances(path)
    assert [b.to_json() for b in back] == [i.to_json() for i in inst]


# -- sampling ----------------------------------------------------------------

def test_full_fraction_is_identity():
    corpus = list(range(37))
    assert sample_fraction(corpus, 1.0, seed=3) == corpus


def test_sampling_deterministic():
    corpus = list(range(100))
    a = sample_fraction(corpus, 0.2, seed=9)
    assert len(a) == 20
    assert a == sample_fraction(corpus, 0.2, seed=9)
    assert a == sorted(a)


def test_conll_sized_fraction():
    assert len(sample_fraction(list(range(14986)), 0.03, seed=0)) == 450


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
def test_fraction_out_of_range(bad):
    with pytest.raises(ValueError):
        sample_fraction([1, 2, 3], bad)


@given(st.integers(1, 300), st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.integers(0, 1000))
def test_nested_samples(n, a, b, seed):
    a, b = sorted((a, b))
    corpus = list(range(n))
    assert set(sample_fraction(corpus, a, seed)) <= set(sample_fraction(corpus, b, seed))


# -- embeddings --------------------------------------------------------------

def test_embedding_table(tmp_path):
    p = write(tmp_path, "v.txt", "the 1.0 2.0 3.0\nAlice 0.0 -2.0 1.0\n")
    table = load_embeddings(p, dim=3)
    assert table.vectors.shape == (4, 3)
    np.testing.assert_allclose(table.vectors[table.unk_row], [0.5, 0.0, 2.0])
    np.testing.assert_array_equal(table.vectors[table.pad_row], [0, 0, 0])
    assert table.lookup("zebra") == table.unk_row
    assert table.lookup("The") == table.lookup("the")
    assert table.lookup("Alice") != table.unk_row


def test_embedding_dim_mismatch(tmp_path):
    p = write(tmp_path, "v.txt", "a 1 2 3\nb 1 2\n")
    with pytest.raises(CorpusFormatError, match=":2:"):
        load_embeddings(p, dim=3)


def test_embedding_dim_inferred(tmp_path):
    table = load_embeddings(write(tmp_path, "v.txt", "a 1 2\n"))
    assert table.dim == 2


# -- statistics --------------------------------------------------------------

@pytest.mark.parametrize("n,bucket", [(1, "1-10"), (10, "1-10"), (11, "10-25"), (25, "10-25"),
                                      (26, "25-50"), (50, "25-50"), (51, "50+")])
def test_bucket_boundaries(n, bucket):
    assert length_bucket(n) == bucket


def test_stats_single_sentence():
    s = ParsedSentence.from_words(["a"] * 5, [EntityMention(0, 0, "PER")])
    st_ = compute_stats([s])
    assert st_.length_histogram == {"1-10": 100.0, "10-25": 0.0, "25-50": 0.0, "50+": 0.0}
    assert (st_.n_sentences, st_.n_entities, st_.n_classes) == (1, 1, 1)


def test_stats_empty():
    with pytest.raises(ValueError):
        compute_stats([])


@given(st.lists(st.integers(1, 80), min_size=1, max_size=50))
def test_histogram_sums_to_100(lengths):
    corpus = [ParsedSentence.from_words(["w"] * n) for n in lengths]
    assert abs(sum(compute_stats(corpus).length_histogram.values()) - 100.0) <= 0.01
