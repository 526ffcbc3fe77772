"""Word splitting shared by the tokenizer, the span extractors and the metrics."""

from __future__ import annotations

import re
import string

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)

#: Default stopword list used by the TF-IDF index at both indexing and query time.
DEFAULT_STOPWORDS = frozenset(
    """
    a an the and or but if then else of at by for with about against between into through
    during before after above below to from up down in out on off over under again further
    once here there when where why how all any both each few more most other some such no nor
    not only own same so than too very s t can will just don should now i me my myself we our
    ours ourselves you your yours yourself yourselves he him his himself she her hers herself
    it its itself they them their theirs themselves what which who whom this that these those
    am is are was were be been being have has had having do does did doing would could
    u1 u2
    """.split()
)


def split_words(text: str) -> list[str]:
    """Split ``text`` into word and punctuation tokens, preserving case.

    >>> split_words("He was born in Montreal, Quebec, Canada")
    ['He', 'was', 'born', 'in', 'Montreal', ',', 'Quebec', ',', 'Canada']
    """
    return _WORD_RE.findall(text)


def is_punct(token: str) -> bool:
    return not any(ch.isalnum() or ch == "_" for ch in token)


_NO_SPACE_BEFORE = frozenset(",.!?;:)]}%'")
_NO_SPACE_AFTER = frozenset("([{$")


def detokenize(tokens) -> str:
    """Join tokens with spaces, attaching closing punctuation to the left.

    >>> detokenize(["Montreal", ",", "Quebec", ",", "Canada"])
    'Montreal, Quebec, Canada'
    """
    out: list[str] = []
    for tok in tokens:
        if out and tok not in _NO_SPACE_BEFORE and out[-1] not in _NO_SPACE_AFTER:
            out.append(" ")
        out.append(tok)
    return "".join(out)


def metric_tokens(text: str) -> list[str]:
    """Lowercase, delete punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())
