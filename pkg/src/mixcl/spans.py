"""Typed span extraction for span-level mixing.

Two deterministic rule-based extractors ship by default:

* :class:`RuleEntityExtractor` finds person/place/org/number/time spans from
  capitalisation, digit shapes, month names and a case-insensitive gazetteer.
* :class:`ShallowChunker` finds NP, VP and PP chunks with a small lexicon and
  suffix heuristics.

Anything with a ``kind`` attribute and ``extract_tokens``/``extract`` methods
can replace them (for example an adapter over an industrial NER model).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_non_empty_text
from .text import DEFAULT_STOPWORDS, detokenize, is_punct, split_words

ENTITY = "entity"
CONSTITUENT = "constituent"
KINDS = (ENTITY, CONSTITUENT)


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    label: str
    kind: str
    text: str

    def __len__(self):
        return self.end - self.start


@runtime_checkable
class SpanExtractor(Protocol):
    kind: str

    def extract_tokens(self, tokens: Sequence[str]) -> list[Span]: ...

    def extract(self, text: str) -> list[Span]: ...


MONTHS = frozenset(
    "january february march april may june july august september october november december".split()
)

_BUILTIN_GAZETTEER = {
    "paris": "place",
    "montreal": "place",
    "quebec": "place",
    "canada": "place",
    "france": "place",
    "london": "place",
    "rome": "place",
    "seattle": "place",
    "washington": "place",
    "winnipeg": "place",
    "united states": "place",
    "thierry henry": "person",
    "charlotte bronte": "person",
    "jane eyre": "work",
    "leonardo dicaprio": "person",
}

_PLACE_CUES = frozenset({"in", "at", "from", "near", "to", "into"})
_ORG_SUFFIXES = frozenset(
    {"inc", "corp", "company", "university", "college", "department", "club", "party", "fc", "institute"}
)


def _year(token: str) -> bool:
    return len(token) == 4 and token.isdigit() and 1000 <= int(token) <= 2100


class RuleEntityExtractor(BaseEstimator, TransformerMixin):
    """Deterministic entity spans (person, place, org, number, time).

    Parameters
    ----------
    gazetteer : mapping of str to str, optional
        Extra ``phrase -> label`` entries, matched case-insensitively on word
        boundaries; they take precedence over the capitalisation heuristics.
    use_builtin : bool
        Include the small built-in gazetteer of places and people.
    """

    kind = ENTITY

    def __init__(self, gazetteer: Mapping[str, str] | None = None, use_builtin: bool = True):
        self.gazetteer = gazetteer
        self.use_builtin = use_builtin

    def _table(self) -> tuple[dict[tuple[str, ...], str], int]:
        cached = getattr(self, "_table_cache", None)
        key = (id(self.gazetteer), self.use_builtin)
        if cached is not None and cached[0] == key:
            return cached[1]
        entries: dict[tuple[str, ...], str] = {}
        source = dict(_BUILTIN_GAZETTEER) if self.use_builtin else {}
        source.update(self.gazetteer or {})
        for phrase, label in source.items():
            words = tuple(w.lower() for w in split_words(phrase))
            if words and label:
                entries[words] = label
        longest = max((len(w) for w in entries), default=0)
        self._table_cache = (key, (entries, longest))
        return entries, longest

    def fit(self, X=None, y=None):
        return self

    def transform(self, texts: Iterable[str]) -> list[list[Span]]:
        return [self.extract(t) for t in texts]

    def extract(self, text: str) -> list[Span]:
        check_non_empty_text(text)
        return self.extract_tokens(split_words(text))

    def _gazetteer_match(self, lowered: Sequence[str], i: int) -> tuple[int, str | None]:
        entries, longest = self._table()
        for n in range(min(longest, len(lowered) - i), 0, -1):
            label = entries.get(tuple(lowered[i : i + n]))
            if label is not None:
                return n, label
        return 0, None

    def _unit(self, tokens, lowered, i) -> tuple[int, str | None]:
        """Length and gazetteer label of a name unit starting at ``i`` (0 if none)."""
        n, label = self._gazetteer_match(lowered, i)
        if n:
            return n, label
        tok = tokens[i]
        if tok[:1].isupper() and tok.isalpha() and len(tok) > 1 and lowered[i] not in DEFAULT_STOPWORDS:
            if lowered[i] not in MONTHS:
                return 1, None
        return 0, None

    def extract_tokens(self, tokens: Sequence[str]) -> list[Span]:
        tokens = list(tokens)
        lowered = [t.lower() for t in tokens]
        spans: list[Span] = []
        i = 0
        n_tok = len(tokens)
        while i < n_tok:
            sentence_initial = i == 0 or tokens[i - 1] in {".", "!", "?", ":"}
            tok = lowered[i]
            if tok in MONTHS:
                end = i + 1
                if end < n_tok and lowered[end].isdigit() and len(lowered[end]) <= 2:
                    end += 1
                if end + 1 < n_tok and lowered[end] == "," and _year(lowered[end + 1]):
                    end += 2
                elif end < n_tok and _year(lowered[end]):
                    end += 1
                spans.append(self._span(tokens, i, end, "time"))
                i = end
                continue
            if tok.isdigit():
                spans.append(self._span(tokens, i, i + 1, "time" if _year(tok) else "number"))
                i += 1
                continue
            length, label = self._unit(tokens, lowered, i)
            if not length:
                i += 1
                continue
            if sentence_initial and label is None:
                nxt, _ = self._unit(tokens, lowered, i + 1) if i + 1 < n_tok else (0, None)
                if not nxt:
                    i += 1
                    continue
            end = i + length
            while end < n_tok:
                step = 1 if end + 1 < n_tok and tokens[end] == "," else 0
                nlen, nlabel = self._unit(tokens, lowered, end + step)
                if not nlen or (label is not None and nlabel is not None and nlabel != label):
                    break
                label = label or nlabel
                end = end + step + nlen
            if label is None:
                label = self._guess_label(lowered, i, end)
            spans.append(self._span(tokens, i, end, label))
            i = end
        return spans

    @staticmethod
    def _guess_label(lowered, start, end) -> str:
        if any(w in _ORG_SUFFIXES for w in lowered[start:end]):
            return "org"
        if start > 0 and lowered[start - 1] in _PLACE_CUES:
            return "place"
        return "person"

    @staticmethod
    def _span(tokens, start, end, label) -> Span:
        return Span(start, end, label, ENTITY, detokenize(tokens[start:end]))


DETERMINERS = frozenset(
    "a an the this that these those my your his her its our their some any each every no".split()
)
PREPOSITIONS = frozenset(
    """in on at by for with from of to into onto about over under after before during since
    through across against among between without within near behind beyond like""".split()
)
PARTICLES = frozenset("up out off away back down around".split())
AUXILIARIES = frozenset(
    "is are was were be been being am has have had do does did will would can could should may might must".split()
)
PRONOUNS = frozenset("i you he she it we they me him her us them who what which".split())
CONJUNCTIONS = frozenset("and or but nor so yet because although while if then than".split())
_COMMON_VERBS = frozenset(
    """born raised lived died wrote published founded made said know like love go went see saw
    think play played enjoy get got give gave take took find found live write make become became
    work worked tell told come came run ran eat ate bark barks""".split()
)
_COMMON_ADJECTIVES = frozenset(
    """big small large little old new young good bad great high low long short first last early
    late major famous popular best other french english american red blue green black white
    hot cold happy real own same different""".split()
)
_ADJ_SUFFIXES = ("ous", "ful", "ive", "able", "ible", "ical", "less", "ish")
_VERB_SUFFIXES = ("ed", "ing")
_ADVERBS = frozenset("not very also really too just never always often still even actually".split())


def _pos(token: str) -> str:
    """Coarse part of speech: DET, ADJ, NOUN, VERB, AUX, PREP, PRT, OTHER."""
    w = token.lower()
    if is_punct(token):
        return "OTHER"
    if w in DETERMINERS:
        return "DET"
    if w in AUXILIARIES:
        return "AUX"
    if w in PARTICLES:
        return "PRT"
    if w in PREPOSITIONS:
        return "PREP"
    if w in PRONOUNS or w in CONJUNCTIONS or w in _ADVERBS or w in DEFAULT_STOPWORDS:
        return "OTHER"
    if w in _COMMON_VERBS:
        return "VERB"
    if w in _COMMON_ADJECTIVES:
        return "ADJ"
    if w.isdigit() or token[:1].isupper():
        return "NOUN"
    if w.endswith(_VERB_SUFFIXES) and len(w) > 4:
        return "VERB"
    if w.endswith(_ADJ_SUFFIXES) and len(w) > 5:
        return "ADJ"
    if w.isalpha():
        return "NOUN"
    return "OTHER"


class ShallowChunker(BaseEstimator, TransformerMixin):
    """Longest-match, left-to-right NP / VP / PP chunker.

    NP = DET? ADJ* NOUN+, VP = AUX* VERB PRT* (or AUX+ alone), PP = PREP NP.
    ``labels`` restricts which chunk labels are returned.
    """

    kind = CONSTITUENT

    def __init__(self, labels: Sequence[str] | None = None):
        self.labels = labels

    def fit(self, X=None, y=None):
        return self

    def transform(self, texts: Iterable[str]) -> list[list[Span]]:
        return [self.extract(t) for t in texts]

    def extract(self, text: str) -> list[Span]:
        check_non_empty_text(text)
        return self.extract_tokens(split_words(text))

    @staticmethod
    def _np(tags, i) -> int:
        j = i
        if j < len(tags) and tags[j] == "DET":
            j += 1
        while j < len(tags) and tags[j] == "ADJ":
            j += 1
        k = j
        while k < len(tags) and tags[k] == "NOUN":
            k += 1
        return k - i if k > j else 0

    @staticmethod
    def _vp(tags, i) -> int:
        j = i
        while j < len(tags) and tags[j] == "AUX":
            j += 1
        k = j
        while k < len(tags) and tags[k] == "VERB":
            k += 1
        if k == i:
            return 0
        while k < len(tags) and tags[k] == "PRT":
            k += 1
        return k - i

    def extract_tokens(self, tokens: Sequence[str]) -> list[Span]:
        tokens = list(tokens)
        tags = [_pos(t) for t in tokens]
        spans: list[Span] = []
        i = 0
        while i < len(tokens):
            candidates = [(self._np(tags, i), "NP"), (self._vp(tags, i), "VP")]
            if tags[i] == "PREP":
                inner = self._np(tags, i + 1)
                candidates.append((1 + inner if inner else 0, "PP"))
            length, label = max(candidates, key=lambda c: c[0])
            if length == 0:
                i += 1
                continue
            if self.labels is None or label in self.labels:
                spans.append(Span(i, i + length, label, CONSTITUENT, detokenize(tokens[i : i + length])))
            i += length
        return spans


_DEFAULT_ENTITY = RuleEntityExtractor()
_DEFAULT_CHUNKER = ShallowChunker()


def extract_entity_spans(text: str, extractor: SpanExtractor | None = None) -> list[Span]:
    return (extractor or _DEFAULT_ENTITY).extract(text)


def extract_constituent_spans(text: str, extractor: SpanExtractor | None = None) -> list[Span]:
    return (extractor or _DEFAULT_CHUNKER).extract(text)


def spans_by_label(spans: Iterable[Span]) -> dict[str, list[Span]]:
    groups: dict[str, list[Span]] = {}
    for span in spans:
        groups.setdefault(span.label, []).append(span)
    return groups


def load_gazetteer(path) -> dict[str, str]:
    """Tab-separated ``phrase<TAB>label`` lines; blank lines and ``#`` comments are skipped."""
    from pathlib import Path

    from .errors import IngestionError

    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"gazetteer not found: {path}")
    table = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise IngestionError(f"{path}:{lineno}: expected 'phrase<TAB>label'")
        table[parts[0].strip()] = parts[1].strip()
    return table
