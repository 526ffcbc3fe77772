import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixcl.errors import IngestionError
from mixcl.spans import (
    RuleEntityExtractor,
    ShallowChunker,
    Span,
    extract_constituent_spans,
    extract_entity_spans,
    load_gazetteer,
    spans_by_label,
)
from mixcl.text import detokenize, split_words


def test_paris_is_one_place():
    spans = extract_entity_spans("He was born and raised in Paris")
    assert [(s.label, s.text) for s in spans] == [("place", "Paris")]


def test_comma_joined_run_is_one_span():
    spans = extract_entity_spans("He was born in Montreal, Quebec, Canada")
    assert [s.text for s in spans] == ["Montreal, Quebec, Canada"]
    assert spans[0].label == "place"


def test_year_is_time():
    spans = extract_entity_spans("it was published in 1847")
    assert [(s.label, s.text) for s in spans] == [("time", "1847")]


def test_chunker_np_vp():
    spans = extract_constituent_spans("the big dog barked")
    assert [(s.label, s.text) for s in spans] == [("NP", "the big dog"), ("VP", "barked")]


@pytest.mark.parametrize("fn", [extract_entity_spans, extract_constituent_spans])
def test_empty_text_rejected(fn):
    with pytest.raises(ValueError):
        fn("")


def test_no_content_words():
    assert extract_constituent_spans("the of and") == []
    assert extract_entity_spans("the of and") == []


def test_chunker_label_filter():
    spans = ShallowChunker(labels=["VP"]).extract("the big dog barked")
    assert [s.label for s in spans] == ["VP"]


def test_spans_by_label():
    a = Span(0, 1, "place", "entity", "Paris")
    b = Span(2, 3, "place", "entity", "Rome")
    c = Span(4, 5, "time", "entity", "1847")
    groups = spans_by_label([a, b, c])
    assert {k: len(v) for k, v in groups.items()} == {"place": 2, "time": 1}
    assert spans_by_label([]) == {}
    assert len(spans_by_label([a, a])["place"]) == 2


def test_gazetteer_precedence_and_file(tmp_path):
    path = tmp_path / "g.tsv"
    path.write_text("# comment\nThe Silent River\twork\n\nAlma Adler\tperson\n")
    table = load_gazetteer(path)
    assert table == {"The Silent River": "work", "Alma Adler": "person"}
    spans = RuleEntityExtractor(gazetteer=table).extract("The Silent River was written by Alma Adler.")
    assert [(s.label, s.text) for s in spans] == [("work", "The Silent River"), ("person", "Alma Adler")]


def test_gazetteer_bad_line(tmp_path):
    path = tmp_path / "g.tsv"
    path.write_text("no tab here\n")
    with pytest.raises(IngestionError, match=":1:"):
        load_gazetteer(path)


vocab = "He she was born raised in Paris Montreal , Quebec Canada the big dog barked 1847 May Thierry Henry said . and".split()
sentences = st.lists(st.sampled_from(vocab), min_size=1, max_size=15).map(" ".join)


@given(sentences)
def test_span_invariants(text):
    tokens = split_words(text)
    for extractor in (RuleEntityExtractor(), ShallowChunker()):
        spans = extractor.extract(text)
        assert spans == extractor.extract(text)
        for s in spans:
            assert 0 <= s.start < s.end <= len(tokens)
            assert s.label
            assert s.kind == extractor.kind
            assert s.text == detokenize(tokens[s.start : s.end])
        ordered = sorted(spans, key=lambda s: s.start)
        for a, b in zip(ordered, ordered[1:]):
            assert a.end <= b.start
