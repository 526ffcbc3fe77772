"""Span-level mixing of a positive and a negative knowledge snippet.

A mixed sequence replaces one span of the positive snippet by a span of the
same type taken from the negative snippet. Each token carries a sign: 1 when
it comes from the positive snippet, 0 when it was inserted from the negative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from sklearn.base import BaseEstimator

from ._validation import check_random_state, check_unit_interval
from .corpus import KnowledgeSnippet
from .errors import MixFailure
from .spans import CONSTITUENT, ENTITY, RuleEntityExtractor, ShallowChunker, Span, spans_by_label
from .text import detokenize, split_words

FALLBACK = "fallback"


@dataclass(frozen=True)
class Replacement:
    positive_span: Span | None
    negative_span: Span | None
    strategy: str


@dataclass
class MixedSequence:
    words: list[str]
    signs: list[int]
    replaced: Replacement
    source_ids: tuple[str, str]
    tokens: list[int] | None = None

    def __post_init__(self):
        if len(self.words) != len(self.signs):
            raise ValueError("signs must align with tokens")
        if self.tokens is not None and len(self.tokens) != len(self.signs):
            raise ValueError("signs must align with tokens")

    @property
    def text(self) -> str:
        return detokenize(self.words)

    def render(self) -> str:
        """Text with runs of sign-0 tokens wrapped in brackets."""
        out, run = [], []
        for word, sign in zip(self.words, self.signs):
            if sign == 0:
                run.append(word)
                continue
            if run:
                out.append("[" + detokenize(run) + "]")
                run = []
            out.append(word)
        if run:
            out.append("[" + detokenize(run) + "]")
        return detokenize(out)


def _as_snippet(z) -> KnowledgeSnippet:
    if isinstance(z, KnowledgeSnippet):
        return z
    return KnowledgeSnippet(id="", text=str(z))


def _extractor_for(extractors, strategy: str):
    if isinstance(extractors, Mapping):
        return extractors[strategy]
    for ex in extractors:
        if ex.kind == strategy:
            return ex
    raise KeyError(f"no extractor of kind {strategy!r}")


def _spans(extractor, words: Sequence[str], cache: dict | None) -> list[Span]:
    if cache is None:
        return extractor.extract_tokens(words)
    key = (extractor.kind, tuple(words))
    if key not in cache:
        cache[key] = extractor.extract_tokens(words)
    return cache[key]


def mix(z_pos, z_neg, strategy: str, extractors, tokenizer=None, rng=None, cache: dict | None = None) -> MixedSequence:
    """Replace one span of ``z_pos`` by a same-type span from ``z_neg``.

    Labels shared by both snippets are preferred; when none is shared, any
    span of the same kind is eligible. Raises :class:`MixFailure` when either
    snippet has no span of that kind.
    """
    if strategy not in (ENTITY, CONSTITUENT):
        raise ValueError(f"unknown mixing strategy {strategy!r}")
    rng = check_random_state(rng)
    z_pos, z_neg = _as_snippet(z_pos), _as_snippet(z_neg)
    pos_words, neg_words = split_words(z_pos.text), split_words(z_neg.text)
    if not pos_words or not neg_words:
        raise ValueError("cannot mix empty snippets")
    extractor = _extractor_for(extractors, strategy)
    pos_spans = _spans(extractor, pos_words, cache)
    neg_spans = _spans(extractor, neg_words, cache)
    if not pos_spans or not neg_spans:
        raise MixFailure(f"no {strategy} span on {'positive' if not pos_spans else 'negative'} side")
    neg_groups = spans_by_label(neg_spans)
    eligible = [s for s in pos_spans if s.label in neg_groups]
    if eligible:
        p_span = eligible[rng.integers(len(eligible))]
        pool = neg_groups[p_span.label]
    else:
        p_span = pos_spans[rng.integers(len(pos_spans))]
        pool = neg_spans
    n_span = pool[rng.integers(len(pool))]

    inserted = neg_words[n_span.start : n_span.end]
    identical = [w.lower() for w in inserted] == [w.lower() for w in pos_words[p_span.start : p_span.end]]
    words = pos_words[: p_span.start] + inserted + pos_words[p_span.end :]
    signs = [1] * p_span.start + [1 if identical else 0] * len(inserted) + [1] * (len(pos_words) - p_span.end)
    return MixedSequence(
        words=words,
        signs=signs,
        replaced=Replacement(p_span, n_span, strategy),
        source_ids=(z_pos.id, z_neg.id),
        tokens=tokenizer.encode_tokens(words) if tokenizer is not None else None,
    )


def choose_strategy(beta_span: float, rng=None) -> str:
    beta_span = check_unit_interval(beta_span, "beta_span")
    rng = check_random_state(rng)
    return ENTITY if rng.random() < beta_span else CONSTITUENT


def mix_with_fallback(z_pos, z_neg, beta_span: float, extractors, tokenizer=None, rng=None, cache=None) -> MixedSequence:
    """Mix with the sampled strategy, then the other one, then the whole negative.

    The last resort returns ``z_neg`` unchanged with every sign 0.
    """
    rng = check_random_state(rng)
    first = choose_strategy(beta_span, rng)
    second = CONSTITUENT if first == ENTITY else ENTITY
    for strategy in (first, second):
        try:
            return mix(z_pos, z_neg, strategy, extractors, tokenizer, rng, cache)
        except MixFailure:
            continue
    z_pos, z_neg = _as_snippet(z_pos), _as_snippet(z_neg)
    words = split_words(z_neg.text)
    return MixedSequence(
        words=words,
        signs=[0] * len(words),
        replaced=Replacement(None, None, FALLBACK),
        source_ids=(z_pos.id, z_neg.id),
        tokens=tokenizer.encode_tokens(words) if tokenizer is not None else None,
    )


class SpanMixer(BaseEstimator):
    """Bundles the extractors, the strategy ratio and a span cache.

    Parameters
    ----------
    beta_span : float
        Probability of trying entity mixing first.
    entity_extractor, constituent_extractor : SpanExtractor, optional
        Defaults to the rule-based extractors.
    """

    def __init__(self, beta_span: float = 0.5, entity_extractor=None, constituent_extractor=None):
        self.beta_span = beta_span
        self.entity_extractor = entity_extractor
        self.constituent_extractor = constituent_extractor

    @property
    def extractors(self) -> dict:
        return {
            ENTITY: self.entity_extractor or RuleEntityExtractor(),
            CONSTITUENT: self.constituent_extractor or ShallowChunker(),
        }

    def fit(self, X=None, y=None):
        self.extractors_ = self.extractors
        self.cache_: dict = {}
        return self

    def mix(self, z_pos, z_neg, tokenizer=None, rng=None) -> MixedSequence:
        if not hasattr(self, "extractors_"):
            self.fit()
        return mix_with_fallback(z_pos, z_neg, self.beta_span, self.extractors_, tokenizer, rng, self.cache_)
