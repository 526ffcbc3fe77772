"""Hard-negative mining: retrieved negatives, model-generated negatives and their mixture."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from sklearn.base import BaseEstimator

from ._validation import check_positive_int, check_random_state, check_unit_interval, derive_rng
from .corpus import KnowledgeSnippet, TfIdfIndex, retrieve
from .data import DialogueExample, encode_example
from .errors import EmptyNegativePool, IngestionError
from .metrics import unigram_f1
from .model import sample_decode_batch
from .text import normalize_whitespace

RETRIEVED = "retrieved"
GENERATED = "generated"


@dataclass(frozen=True)
class NegativeItem:
    snippet: KnowledgeSnippet
    source: str


@dataclass
class NegativeSet:
    context_id: str
    items: list[NegativeItem]

    def __len__(self):
        return len(self.items)

    @property
    def texts(self) -> list[str]:
        return [item.snippet.text for item in self.items]

    def pools(self) -> tuple[list[KnowledgeSnippet], list[KnowledgeSnippet]]:
        """Distinct retrieved and generated snippets, in first-seen order."""
        ret, gen, seen = [], [], set()
        for item in self.items:
            if item.snippet.text in seen:
                continue
            seen.add(item.snippet.text)
            (ret if item.source == RETRIEVED else gen).append(item.snippet)
        return ret, gen


class EntailmentFilter(Protocol):
    def accepts(self, candidate: str, positives: Sequence[str]) -> bool:
        """True when ``candidate`` is safe to use as a negative."""


class OverlapEntailmentFilter:
    """Rejects candidates that equal, or overlap strongly with, a positive.

    A unigram F1 above ``threshold`` against any positive counts as
    entailment. Stands in for an NLI model.
    """

    def __init__(self, threshold: float = 0.8):
        self.threshold = threshold

    def accepts(self, candidate: str, positives: Sequence[str]) -> bool:
        cand = normalize_whitespace(candidate).lower()
        if not cand:
            return False
        for pos in positives:
            if cand == normalize_whitespace(pos).lower() or unigram_f1(candidate, pos) > self.threshold:
                return False
        return True


def query_text(example: DialogueExample, context_mode: str = "full") -> str:
    if context_mode not in ("full", "last"):
        raise ValueError("context_mode must be 'full' or 'last'")
    return example.context_text(last_only=context_mode == "last")


def retrieved_negatives(x: str, index: TfIdfIndex, positives: Sequence[KnowledgeSnippet], pool: int) -> list[KnowledgeSnippet]:
    """Top-``pool`` retrieval hits for ``x`` minus any snippet whose text is a positive's."""
    pool = check_positive_int(pool, "pool")
    banned = {p.text for p in positives}
    return [s for s, _ in retrieve(index, x, pool) if s.text not in banned]


def _dedup_accepted(texts, positives, entail_filter, id_prefix) -> list[KnowledgeSnippet]:
    pos_texts = [p.text for p in positives]
    out, seen = [], set()
    for text in texts:
        key = normalize_whitespace(text)
        if not key or key in seen:
            continue
        if entail_filter.accepts(key, pos_texts):
            seen.add(key)
            out.append(KnowledgeSnippet(id=f"{id_prefix}/gen{len(out)}", text=key))
    return out


def model_generated_negatives(
    model,
    x,
    positives: Sequence[KnowledgeSnippet],
    entail_filter: EntailmentFilter,
    n_samples: int,
    rng=None,
    tokenizer=None,
    temperature: float = 1.0,
) -> list[KnowledgeSnippet]:
    """Sample knowledge from the model and keep what the filter accepts.

    ``x`` is a :class:`DialogueExample`, a context turn list, or already
    encoded input ids (then ``tokenizer`` only decodes).
    """
    n_samples = check_positive_int(n_samples, "n_samples")
    rng = check_random_state(rng)
    if isinstance(x, DialogueExample) or (x and isinstance(x[0], tuple)):
        input_ids = encode_example(x, "", "knowledge_identification", tokenizer).input_ids
        prefix = x.id if isinstance(x, DialogueExample) else "x"
    else:
        input_ids, prefix = list(x), "x"
    samples = sample_decode_batch(model, [input_ids] * n_samples, 64, temperature, rng)
    texts = [tokenizer.decode(s) for s in samples]
    return _dedup_accepted(texts, positives, entail_filter, prefix)


def sample_negative_set(
    ret: Sequence[KnowledgeSnippet],
    gen: Sequence[KnowledgeSnippet],
    beta_neg: float,
    M: int,
    rng=None,
    context_id: str = "",
) -> NegativeSet:
    """Fill ``M`` slots, each from the retrieved pool with probability ``beta_neg``.

    Within a pool, draws are without replacement until the pool is used up,
    after which it is reused (sampling with replacement in rounds). An empty
    pool defers every slot to the other one.
    """
    beta_neg = check_unit_interval(beta_neg, "beta_neg")
    M = check_positive_int(M, "M")
    rng = check_random_state(rng)
    pools = {RETRIEVED: list(ret), GENERATED: list(gen)}
    if not pools[RETRIEVED] and not pools[GENERATED]:
        raise EmptyNegativePool(f"no negative candidates for context {context_id!r}")
    remaining = {k: list(v) for k, v in pools.items()}
    items = []
    for _ in range(M):
        source = RETRIEVED if rng.random() < beta_neg else GENERATED
        if not pools[source]:
            source = GENERATED if source == RETRIEVED else RETRIEVED
        if not remaining[source]:
            remaining[source] = list(pools[source])
        snippet = remaining[source].pop(int(rng.integers(len(remaining[source]))))
        items.append(NegativeItem(snippet, source))
    return NegativeSet(context_id=context_id, items=items)


def random_negative_set(corpus, positives, M: int, rng=None, context_id: str = "") -> NegativeSet:
    """Uniformly random corpus snippets (excluding positives), for the no-hard-negative ablation."""
    rng = check_random_state(rng)
    banned = {p.text for p in positives}
    pool = [s for s in corpus if s.text not in banned]
    return sample_negative_set(pool, [], 1.0, M, rng, context_id)


def mine_negatives(
    examples: Iterable[DialogueExample],
    index: TfIdfIndex,
    *,
    M: int = 8,
    beta_neg: float = 0.5,
    seed: int = 13,
    pool: int = 32,
    model=None,
    tokenizer=None,
    entail_filter: EntailmentFilter | None = None,
    n_samples: int = 4,
    temperature: float = 1.0,
    context_mode: str = "full",
    epoch: int = 0,
) -> dict[str, NegativeSet]:
    """Mine one :class:`NegativeSet` per example that has at least one positive.

    Each example draws from its own generator derived from
    ``(seed, epoch, example id)``, so results do not depend on order.
    Without ``model`` only retrieved negatives are used.
    """
    entail_filter = entail_filter or OverlapEntailmentFilter()
    examples = [ex for ex in examples if ex.positives]
    generated: dict[str, list[KnowledgeSnippet]] = {ex.id: [] for ex in examples}
    if model is not None:
        generated = generate_negative_pools(
            model, examples, tokenizer, entail_filter, n_samples, seed, temperature, epoch
        )
    out = {}
    for ex in examples:
        ret = retrieved_negatives(query_text(ex, context_mode), index, ex.positives, pool)
        try:
            out[ex.id] = sample_negative_set(
                ret, generated[ex.id], beta_neg, M, derive_rng(seed, epoch, ex.id, "negatives"), ex.id
            )
        except EmptyNegativePool:
            continue
    return out


def generate_negative_pools(model, examples, tokenizer, entail_filter, n_samples, seed, temperature=1.0, epoch=0, batch_size=256):
    """Batched model bootstrapping for many examples at once."""
    inputs, owners = [], []
    for ex in examples:
        ids = encode_example(ex, "", "knowledge_identification", tokenizer).input_ids
        inputs += [ids] * n_samples
        owners += [ex] * n_samples
    rng = derive_rng(seed, epoch, "bootstrap")
    texts: dict[str, list[str]] = {ex.id: [] for ex in examples}
    for start in range(0, len(inputs), batch_size):
        chunk = sample_decode_batch(model, inputs[start : start + batch_size], 64, temperature, rng)
        for ex, ids in zip(owners[start : start + batch_size], chunk):
            texts[ex.id].append(tokenizer.decode(ids))
    return {ex.id: _dedup_accepted(texts[ex.id], ex.positives, entail_filter, ex.id) for ex in examples}


class HardNegativeMiner(BaseEstimator):
    """Estimator wrapper: ``fit`` takes the index, ``transform`` mines per example.

    Parameters
    ----------
    n_negatives : int
        Set size ``M``.
    beta_neg : float
        Probability that a slot is filled from the retrieved pool.
    pool : int
        Retrieval depth before exclusion.
    seed : int
    context_mode : {"full", "last"}
        Query with the whole context or only its last utterance.
    """

    def __init__(self, n_negatives=8, beta_neg=0.5, pool=32, seed=13, context_mode="full", n_samples=4):
        self.n_negatives = n_negatives
        self.beta_neg = beta_neg
        self.pool = pool
        self.seed = seed
        self.context_mode = context_mode
        self.n_samples = n_samples

    def fit(self, index: TfIdfIndex, y=None, model=None, tokenizer=None):
        self.index_ = index
        self.model_ = model
        self.tokenizer_ = tokenizer
        return self

    def transform(self, examples) -> dict[str, NegativeSet]:
        return mine_negatives(
            examples,
            self.index_,
            M=self.n_negatives,
            beta_neg=self.beta_neg,
            seed=self.seed,
            pool=self.pool,
            model=self.model_,
            tokenizer=self.tokenizer_,
            n_samples=self.n_samples,
            context_mode=self.context_mode,
        )


def write_negatives(sets: Mapping[str, NegativeSet], path, provenance: dict | None = None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"provenance": provenance or {}}, sort_keys=True) + "\n")
        for cid in sorted(sets, key=_id_key):
            rec = {
                "context_id": cid,
                "negatives": [{"text": it.snippet.text, "source": it.source} for it in sets[cid].items],
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _id_key(cid: str):
    parts = cid.split("-")
    if all(p.isdigit() for p in parts):
        return (0, tuple(int(p) for p in parts), "")
    return (1, (), cid)


def read_negatives(path) -> dict[str, NegativeSet]:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"negatives file not found: {path}")
    out = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "provenance" in rec:
                continue
            try:
                cid = rec["context_id"]
                items = [
                    NegativeItem(KnowledgeSnippet(id=f"{cid}/neg{i}", text=n["text"]), n["source"])
                    for i, n in enumerate(rec["negatives"])
                ]
            except (KeyError, TypeError) as exc:
                raise IngestionError(f"{path}:{lineno}: malformed negatives record ({exc})") from None
            out[cid] = NegativeSet(cid, items)
    return out
