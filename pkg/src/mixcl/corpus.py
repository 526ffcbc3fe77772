"""Knowledge corpus ingestion and TF-IDF retrieval.

The retriever scores snippets by cosine similarity between tf-idf vectors
with raw term counts and smoothed inverse document frequency
``ln((1 + N) / (1 + df)) + 1``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int
from .errors import ConfigError, IngestionError
from .text import DEFAULT_STOPWORDS, is_punct, split_words

INDEX_MAGIC = "MIXCL-IDX v1"


@dataclass
class KnowledgeSnippet:
    id: str
    text: str
    title: str = ""
    tokens: list[int] | None = field(default=None, repr=False, compare=False)


@dataclass
class KnowledgeCorpus:
    snippets: list[KnowledgeSnippet]

    def __post_init__(self):
        seen = set()
        for s in self.snippets:
            if s.id in seen:
                raise IngestionError(f"duplicate snippet id {s.id!r}")
            seen.add(s.id)

    def __len__(self):
        return len(self.snippets)

    def __iter__(self):
        return iter(self.snippets)

    def __getitem__(self, i):
        return self.snippets[i]

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "KnowledgeCorpus":
        return cls([KnowledgeSnippet(id=str(i), text=t) for i, t in enumerate(texts)])


def ingest_corpus(path) -> KnowledgeCorpus:
    """Read a JSON-lines corpus file with ``{"id"?, "title"?, "text"}`` records.

    Blank lines are skipped. Records without an ``id`` receive their
    0-based position among the ingested snippets as id.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"corpus file not found: {path}")
    snippets: list[KnowledgeSnippet] = []
    seen: dict[str, int] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            if not isinstance(record, dict):
                raise IngestionError(f"{path}:{lineno}: record must be an object")
            text = record.get("text")
            if not isinstance(text, str) or not text.strip():
                raise IngestionError(f"{path}:{lineno}: field 'text' must be a non-empty string")
            sid = record.get("id", str(len(snippets)))
            title = record.get("title", "")
            if not isinstance(sid, str) or not isinstance(title, str):
                raise IngestionError(f"{path}:{lineno}: fields 'id' and 'title' must be strings")
            if sid in seen:
                raise IngestionError(
                    f"{path}:{lineno}: duplicate id {sid!r} (first seen on line {seen[sid]})"
                )
            seen[sid] = lineno
            snippets.append(KnowledgeSnippet(id=sid, text=text.strip(), title=title))
    return KnowledgeCorpus(snippets)


def write_corpus(corpus: KnowledgeCorpus, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in corpus:
            rec = {"id": s.id, "title": s.title, "text": s.text}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_stopwords(path) -> frozenset[str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"stopword file not found: {path}")
    words = path.read_text(encoding="utf-8").split()
    return frozenset(w.lower() for w in words)


def analyze(text: str, stopwords: frozenset[str] = DEFAULT_STOPWORDS) -> list[str]:
    """Lowercased word terms of ``text`` with punctuation and stopwords removed."""
    return [w for w in (t.lower() for t in split_words(text)) if not is_punct(w) and w not in stopwords]


@dataclass(frozen=True)
class TfIdfIndex:
    """Immutable inverted index over a :class:`KnowledgeCorpus`."""

    corpus: KnowledgeCorpus
    vocabulary: dict[str, int]
    doc_freq: list[int]
    postings: list[list[tuple[int, int]]]
    doc_norm: list[float]
    stopwords: frozenset[str] = DEFAULT_STOPWORDS
    analyzer: Callable[[str], Sequence[str]] | None = field(default=None, compare=False)

    @property
    def n_docs(self) -> int:
        return len(self.corpus)

    def idf(self, term_id: int) -> float:
        return math.log((1 + self.n_docs) / (1 + self.doc_freq[term_id])) + 1.0

    def terms(self, text: str) -> list[str]:
        if self.analyzer is not None:
            return [t for t in self.analyzer(text) if t not in self.stopwords]
        return analyze(text, self.stopwords)


def _document_terms(snippet: KnowledgeSnippet, tokenizer, stopwords) -> list[str]:
    if tokenizer is not None:
        return [t for t in tokenizer(snippet.text) if t not in stopwords]
    terms = analyze(snippet.text, stopwords)
    if not terms:
        # all-stopword snippets are indexed on their raw words so coverage holds
        terms = [w.lower() for w in split_words(snippet.text) if not is_punct(w)]
    return terms


def build_index(
    corpus: KnowledgeCorpus,
    tokenizer: Callable[[str], Sequence[str]] | None = None,
    stopwords: Iterable[str] | None = None,
) -> TfIdfIndex:
    """Build the inverted index.

    ``tokenizer`` maps text to terms; the default lowercases word tokens and
    drops punctuation. Stopwords are removed from both documents and queries.
    """
    if len(corpus) == 0:
        raise ValueError("cannot index an empty corpus")
    stop = DEFAULT_STOPWORDS if stopwords is None else frozenset(stopwords)
    if tokenizer is not None and hasattr(tokenizer, "tokenize"):
        tokenizer = tokenizer.tokenize
    vocabulary: dict[str, int] = {}
    doc_freq: list[int] = []
    postings: list[list[tuple[int, int]]] = []
    doc_counts: list[Counter] = []
    for doc_idx, snippet in enumerate(corpus):
        counts = Counter(_document_terms(snippet, tokenizer, stop))
        if not counts:
            raise IngestionError(f"snippet {snippet.id!r} contains no indexable term")
        doc_counts.append(counts)
        for term in sorted(counts):
            tid = vocabulary.setdefault(term, len(vocabulary))
            if tid == len(doc_freq):
                doc_freq.append(0)
                postings.append([])
            doc_freq[tid] += 1
            postings[tid].append((doc_idx, counts[term]))
    n = len(corpus)
    idf = [math.log((1 + n) / (1 + df)) + 1.0 for df in doc_freq]
    doc_norm = [
        math.sqrt(sum((tf * idf[vocabulary[t]]) ** 2 for t, tf in counts.items())) for counts in doc_counts
    ]
    return TfIdfIndex(
        corpus=corpus,
        vocabulary=vocabulary,
        doc_freq=doc_freq,
        postings=postings,
        doc_norm=doc_norm,
        stopwords=stop,
        analyzer=tokenizer,
    )


def retrieve(index: TfIdfIndex, query: str, k: int) -> list[tuple[KnowledgeSnippet, float]]:
    """Top-``k`` snippets by cosine similarity, ties broken by corpus position.

    Only snippets with a positive score are returned, so the result can be
    shorter than ``k`` and is empty when the query shares no term with the
    index.
    """
    k = check_positive_int(k, "k")
    q_counts = Counter(t for t in index.terms(query) if t in index.vocabulary)
    if not q_counts:
        return []
    weights = {index.vocabulary[t]: tf * index.idf(index.vocabulary[t]) for t, tf in q_counts.items()}
    q_norm = math.sqrt(sum(w * w for w in weights.values()))
    dots: dict[int, float] = {}
    for tid in sorted(weights):
        wq = weights[tid]
        idf = index.idf(tid)
        for doc_idx, tf in index.postings[tid]:
            dots[doc_idx] = dots.get(doc_idx, 0.0) + wq * tf * idf
    scored = [(dot / (q_norm * index.doc_norm[d]), d) for d, dot in dots.items() if dot > 0]
    scored.sort(key=lambda p: (-p[0], p[1]))
    return [(index.corpus[d], score) for score, d in scored[:k]]


def save_index(index: TfIdfIndex, path, provenance: dict | None = None) -> None:
    body = {
        "provenance": provenance or {},
        "stopwords": sorted(index.stopwords),
        "snippets": [{"id": s.id, "title": s.title, "text": s.text} for s in index.corpus],
        "vocabulary": index.vocabulary,
        "doc_freq": index.doc_freq,
        "postings": index.postings,
        "doc_norm": index.doc_norm,
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(INDEX_MAGIC + "\n")
        json.dump(body, fh, ensure_ascii=False, sort_keys=True)
        fh.write("\n")


def load_index(path) -> TfIdfIndex:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"index file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        magic = fh.readline().rstrip("\n")
        if magic != INDEX_MAGIC:
            raise IngestionError(f"{path}: not an index file (header {magic!r})")
        body = json.loads(fh.read())
    corpus = KnowledgeCorpus([KnowledgeSnippet(**s) for s in body["snippets"]])
    return TfIdfIndex(
        corpus=corpus,
        vocabulary=body["vocabulary"],
        doc_freq=body["doc_freq"],
        postings=[[tuple(p) for p in plist] for plist in body["postings"]],
        doc_norm=body["doc_norm"],
        stopwords=frozenset(body["stopwords"]),
    )


class TfIdfRetriever(BaseEstimator):
    """Estimator wrapper around :func:`build_index` / :func:`retrieve`.

    Parameters
    ----------
    k : int
        Number of snippets returned per query by :meth:`transform`.
    stopwords : iterable of str, optional
        Replaces the built-in English stopword list.
    """

    def __init__(self, k: int = 8, stopwords=None):
        self.k = k
        self.stopwords = stopwords

    def fit(self, corpus, y=None):
        if not isinstance(corpus, KnowledgeCorpus):
            corpus = KnowledgeCorpus.from_texts(corpus)
        self.index_ = build_index(corpus, stopwords=self.stopwords)
        return self

    def retrieve(self, query: str, k: int | None = None):
        check_is_fitted(self, "index_")
        return retrieve(self.index_, query, self.k if k is None else k)

    def transform(self, queries):
        return [self.retrieve(q) for q in queries]
