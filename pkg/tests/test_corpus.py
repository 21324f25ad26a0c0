"""Corpus parsing, serialization, and the per-token dependency view."""

import numpy as np
import pytest

from kcrf.corpus import (
    CorpusError,
    DependencyArc,
    Sentence,
    TagSet,
    Token,
    dependency_view,
    parse_corpus,
    serialize_corpus,
)

from helpers import sent

SAMPLE = """\
# a tablet stand review sentence
1\tThis\tDT\t3\tdet\tO
2\ttablet\tNN\t3\tcompound\tO
3\tstand\tNN\t4\tnsubj\tO
4\tworks\tVBZ\t0\troot\tO
5\twith\tIN\t7\tcase\tO
6\tmy\tPRP$\t7\tnmod:poss\tO
7\tiPhone\tNNP\t4\tnmod:with\tENT

1\tgreat\tJJ\t0\troot\tO
"""


def test_parse_maps_fields():
    sentences = parse_corpus(SAMPLE, expect_labels=True)
    assert len(sentences) == 2
    s = sentences[0]
    assert len(s) == 7
    assert s.tokens[6] == Token(7, "iPhone", "NNP")
    assert DependencyArc("nmod:with", 4, 7) in s.arcs
    assert s.labels == ("O", "O", "O", "O", "O", "O", "ENT")
    assert sentences[1].labels == ("O",)


def test_parse_empty_stream():
    assert parse_corpus("") == []
    assert parse_corpus("\n\n# only a comment\n\n") == []


def test_parse_without_expect_labels_ignores_column():
    sentences = parse_corpus(SAMPLE, expect_labels=False)
    assert all(s.labels is None for s in sentences)


def test_parse_unlabeled_marker_gives_no_labels():
    text = "1\tfoo\tNN\t0\troot\t_\n"
    (s,) = parse_corpus(text, expect_labels=True)
    assert s.labels is None


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("1\tfoo\tNN\t9\troot\tO\n", "HEAD 9 out of range"),
        ("1\tfoo\tNN\t0\troot\n", "6 tab-separated columns"),
        ("2\tfoo\tNN\t0\troot\tO\n", "non-contiguous"),
        ("1\tfoo\tNN\t1\troot\tO\n", "its own head"),
        ("1\tfoo\tNN\t0\troot\tBAD\n", "unknown label"),
        ("1\tfoo\tNN\tx\troot\tO\n", "HEAD is not an integer"),
        ("x\tfoo\tNN\t0\troot\tO\n", "INDEX is not an integer"),
        ("1\tfoo\tNN|X\t0\troot\tO\n", "reserved character"),
        ("1\tfoo\tNN\t0\tro=ot\tO\n", "reserved character"),
    ],
)
def test_parse_errors_name_the_line(text, fragment):
    with pytest.raises(CorpusError) as err:
        parse_corpus(text, expect_labels=True)
    assert fragment in str(err.value)
    assert "line 1" in str(err.value)


def test_parse_error_line_number_counts_comments_and_blanks():
    text = "# header\n\n1\tok\tNN\t0\troot\tO\n\n1\tbad\tNN\t5\troot\tO\n"
    with pytest.raises(CorpusError, match="line 5"):
        parse_corpus(text)


def test_mixed_labels_rejected():
    text = "1\tfoo\tNN\t2\tdep\tO\n2\tbar\tNN\t0\troot\t_\n"
    with pytest.raises(CorpusError, match="mixes labeled and unlabeled"):
        parse_corpus(text, expect_labels=True)


def test_round_trip_identity():
    first = parse_corpus(SAMPLE, expect_labels=True)
    text = serialize_corpus(first)
    assert parse_corpus(text, expect_labels=True) == first
    # and serialization is a fixed point
    assert serialize_corpus(parse_corpus(text, expect_labels=True)) == text


def test_serialize_empty():
    assert serialize_corpus([]) == ""


def test_serialize_rejects_multi_head_and_headless():
    tokens = (Token(1, "a", "X"), Token(2, "b", "X"))
    no_head = Sentence(tokens, (DependencyArc("dep", 1, 2),))
    with pytest.raises(ValueError, match="no head"):
        serialize_corpus([no_head])
    multi = Sentence(
        tokens,
        (
            DependencyArc("dep", 0, 1),
            DependencyArc("dep", 0, 2),
            DependencyArc("conj", 1, 2),
        ),
    )
    with pytest.raises(ValueError, match="multiple heads"):
        serialize_corpus([multi])


class TestDependencyView:
    def test_paper_example(self):
        s = sent(
            [
                ("This", "DT", 3, "det"),
                ("tablet", "NN", 3, "compound"),
                ("stand", "NN", 4, "nsubj"),
                ("works", "VBZ", 0, "root"),
                ("with", "IN", 7, "case"),
                ("my", "PRP$", 7, "nmod:poss"),
                ("iPhone", "NNP", 4, "nmod:with"),
            ]
        )
        assert ("DEP", "nmod:with", "works", "VBZ") in dependency_view(s, 7)
        # iPhone also governs its case marker and possessive
        assert ("GOV", "case", "with", "IN") in dependency_view(s, 7)
        assert ("GOV", "nmod:poss", "my", "PRP$") in dependency_view(s, 7)

    def test_root_arc_yields_nothing_for_dependent(self):
        s = sent([("works", "VBZ", 0, "root")])
        assert dependency_view(s, 1) == []

    def test_both_roles(self):
        s = sent(
            [("a", "X", 2, "det"), ("b", "X", 0, "root"), ("c", "X", 2, "dobj")]
        )
        view = dependency_view(s, 2)
        assert ("DEP", "det", "a", "X") not in view  # b governs a
        assert ("GOV", "det", "a", "X") in view
        assert ("GOV", "dobj", "c", "X") in view

    def test_out_of_range(self):
        s = sent([("a", "X", 0, "root")])
        with pytest.raises(IndexError):
            dependency_view(s, 2)
        with pytest.raises(IndexError):
            dependency_view(s, 0)

    def test_every_arc_visible_from_both_ends(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            from helpers import random_sentence

            s = random_sentence(rng)
            for arc in s.arcs:
                if arc.gov_index != 0:
                    gov_view = dependency_view(s, arc.gov_index)
                    dep = s.tokens[arc.dep_index - 1]
                    assert ("GOV", arc.dep_type, dep.form, dep.pos) in gov_view
                    dep_view = dependency_view(s, arc.dep_index)
                    gov = s.tokens[arc.gov_index - 1]
                    assert ("DEP", arc.dep_type, gov.form, gov.pos) in dep_view


class TestInvariants:
    def test_token_validation(self):
        with pytest.raises(ValueError):
            Token(0, "a", "X")
        with pytest.raises(ValueError):
            Token(1, "", "X")
        with pytest.raises(ValueError):
            Token(1, "a", "")

    def test_arc_validation(self):
        with pytest.raises(ValueError):
            DependencyArc("dep", 1, 1)
        with pytest.raises(ValueError):
            DependencyArc("", 0, 1)

    def test_sentence_validation(self):
        t1 = Token(1, "a", "X")
        with pytest.raises(ValueError, match="at least one token"):
            Sentence(())
        with pytest.raises(ValueError, match="contiguous"):
            Sentence((Token(2, "b", "X"),))
        with pytest.raises(ValueError, match="outside"):
            Sentence((t1,), (DependencyArc("dep", 0, 5),))
        with pytest.raises(ValueError, match="labels"):
            Sentence((t1,), (), ("O", "O"))

    def test_tagset(self):
        ts = TagSet(("ENT", "O"))
        assert ts.index("O") == 1 and "ENT" in ts and len(ts) == 2
        with pytest.raises(ValueError):
            TagSet(("ENT",))
        with pytest.raises(ValueError):
            TagSet(("A", "A"))
        with pytest.raises(ValueError):
            ts.index("nope")
