import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mixcl.corpus import (
    INDEX_MAGIC,
    KnowledgeCorpus,
    TfIdfRetriever,
    build_index,
    ingest_corpus,
    load_index,
    retrieve,
    save_index,
)
from mixcl.errors import IngestionError

NO_STOP = frozenset()


def test_ingest_three_records(write_jsonl):
    path = write_jsonl("c.jsonl", [{"id": "a", "text": "one"}, {"text": "two"}, {"id": "c", "title": "T", "text": "three"}])
    corpus = ingest_corpus(path)
    assert len(corpus) == 3
    assert [s.id for s in corpus] == ["a", "1", "c"]
    assert corpus[2].title == "T"


def test_ingest_skips_blank_lines(write_jsonl):
    path = write_jsonl("c.jsonl", None, raw_lines=['{"text": "one"}', "", '{"text": "two"}'])
    assert len(ingest_corpus(path)) == 2


def test_ingest_duplicate_id_names_it(write_jsonl):
    path = write_jsonl("c.jsonl", [{"id": "x", "text": "one"}, {"id": "x", "text": "two"}])
    with pytest.raises(IngestionError, match="'x'"):
        ingest_corpus(path)


def test_ingest_malformed_line_number(write_jsonl):
    path = write_jsonl("c.jsonl", None, raw_lines=['{"text": "one"}', "{not json"])
    with pytest.raises(IngestionError, match=":2:"):
        ingest_corpus(path)


def test_ingest_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        ingest_corpus(tmp_path / "nope.jsonl")


def test_single_document_index():
    idx = build_index(KnowledgeCorpus.from_texts(["a b"]), stopwords=NO_STOP)
    assert set(idx.vocabulary) == {"a", "b"}
    assert all(idx.doc_freq[idx.vocabulary[t]] == 1 for t in "ab")


def test_two_document_doc_freq():
    idx = build_index(KnowledgeCorpus.from_texts(["a b", "a c"]), stopwords=NO_STOP)
    df = {t: idx.doc_freq[i] for t, i in idx.vocabulary.items()}
    assert df == {"a": 2, "b": 1, "c": 1}
    # smoothed idf on N = 2
    assert idx.idf(idx.vocabulary["a"]) == pytest.approx(math.log(3 / 3) + 1)
    assert idx.idf(idx.vocabulary["b"]) == pytest.approx(math.log(3 / 2) + 1)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        build_index(KnowledgeCorpus([]))


def _brute_cosine(docs, query):
    n = len(docs)
    vocab = sorted({w for d in docs for w in d})
    df = {w: sum(w in d for d in docs) for w in vocab}
    idf = {w: math.log((1 + n) / (1 + df[w])) + 1 for w in vocab}

    def vec(words):
        return {w: words.count(w) * idf[w] for w in set(words) if w in idf}

    q = vec(query)
    out = []
    for d in docs:
        v = vec(d)
        dot = sum(q[w] * v.get(w, 0.0) for w in q)
        nq = math.sqrt(sum(x * x for x in q.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        out.append(dot / (nq * nv) if nq and nv else 0.0)
    return out


def test_retrieve_matches_brute_force_cosine():
    texts = ["thierry henry paris", "weather forecast rain"]
    idx = build_index(KnowledgeCorpus.from_texts(texts))
    hits = retrieve(idx, "thierry henry", 2)
    assert hits[0][0].text == "thierry henry paris"
    expected = _brute_cosine([t.split() for t in texts], ["thierry", "henry"])
    assert hits[0][1] == pytest.approx(expected[0], rel=1e-12)
    assert len(hits) == 1  # the second snippet scores 0


def test_no_overlap_is_empty():
    idx = build_index(KnowledgeCorpus.from_texts(["alpha beta", "gamma delta"]))
    assert retrieve(idx, "zeta", 5) == []
    assert retrieve(idx, "the of and", 5) == []


def test_k_larger_than_corpus_returns_positive_only():
    idx = build_index(KnowledgeCorpus.from_texts(["red apple", "red car", "blue sky"]))
    hits = retrieve(idx, "red", 10)
    assert [h[0].text for h in hits] == ["red apple", "red car"]


def test_ties_break_by_snippet_index():
    idx = build_index(KnowledgeCorpus.from_texts(["x y", "x y", "x z"]))
    hits = retrieve(idx, "x y", 3)
    assert [h[0].id for h in hits][:2] == ["0", "1"]


def test_index_invariants():
    idx = build_index(KnowledgeCorpus.from_texts(["the cat sat", "a dog ran far", "the the the"]))
    assert all(df >= 1 for df in idx.doc_freq)
    assert all(n > 0 for n in idx.doc_norm)
    for plist in idx.postings:
        docs = [d for d, _ in plist]
        assert docs == sorted(docs)
    covered = {d for plist in idx.postings for d, _ in plist}
    assert covered == {0, 1, 2}


def test_save_load_roundtrip(tmp_path):
    idx = build_index(KnowledgeCorpus.from_texts(["red apple", "red car", "blue sky"]))
    path = tmp_path / "i.idx"
    save_index(idx, path, {"seed": 1})
    assert path.read_text().splitlines()[0] == INDEX_MAGIC
    back = load_index(path)
    assert retrieve(back, "red car", 3) == retrieve(idx, "red car", 3)


def test_load_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_text("nope\n{}")
    with pytest.raises(IngestionError):
        load_index(path)


def test_retriever_estimator():
    corpus = KnowledgeCorpus.from_texts(["red apple", "blue sky"])
    r = TfIdfRetriever(k=1).fit(corpus)
    assert r.get_params()["k"] == 1
    assert [h[0].text for h in r.retrieve("apple")] == ["red apple"]


words = st.sampled_from("paris rome henry thierry canada quebec born raised sky rain apple car".split())
docs = st.lists(st.lists(words, min_size=1, max_size=6).map(" ".join), min_size=1, max_size=12)


@given(docs, st.lists(words, min_size=1, max_size=4).map(" ".join))
def test_scores_non_increasing_and_deterministic(texts, query):
    idx = build_index(KnowledgeCorpus.from_texts(texts))
    hits = retrieve(idx, query, len(texts))
    scores = [s for _, s in hits]
    assert scores == sorted(scores, reverse=True)
    assert hits == retrieve(idx, query, len(texts))
    brute = _brute_cosine([t.split() for t in texts], query.split())
    for snippet, score in hits:
        assert score == pytest.approx(brute[int(snippet.id)], rel=1e-9)


@given(docs)
def test_self_retrieval(texts):
    idx = build_index(KnowledgeCorpus.from_texts(texts))
    for i, t in enumerate(texts):
        top = retrieve(idx, t, 1)[0]
        # proportional term vectors (duplicates, "x" vs "x x") tie at 1.0 and
        # resolve to the lowest index
        assert top[1] == pytest.approx(1.0)
        assert int(top[0].id) <= i
