"""Automatic response metrics and the hallucination taxonomy report.

Every metric shares one tokenization: lowercase, delete punctuation, split
on whitespace.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import IngestionError
from .text import metric_tokens, split_words


def _f1_tokens(pred: Sequence[str], ref: Sequence[str]) -> float:
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


def unigram_f1(pred: str, ref: str) -> float:
    """Multiset unigram F1; 0 when either side has no token."""
    return _f1_tokens(metric_tokens(pred), metric_tokens(ref))


def knowledge_f1(pred: str, gold_knowledge: str) -> float:
    return unigram_f1(pred, gold_knowledge)


def _entity_tokens(text: str, extractor) -> list[str]:
    if not text.strip():
        return []
    words = split_words(text)
    kept = []
    for span in extractor.extract_tokens(words):
        kept.extend(words[span.start : span.end])
    return metric_tokens(" ".join(kept))


def entity_f1(pred: str, ref: str, extractor=None) -> float:
    """Unigram F1 restricted to the entity tokens of both sides."""
    if extractor is None:
        from .spans import RuleEntityExtractor

        extractor = RuleEntityExtractor()
    if getattr(extractor, "kind", "entity") != "entity":
        raise ValueError("entity_f1 needs an entity extractor")
    return _f1_tokens(_entity_tokens(pred, extractor), _entity_tokens(ref, extractor))


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(preds: Sequence[str], refs: Sequence[str], max_n: int = 4) -> float:
    """Corpus BLEU with uniform weights and a brevity penalty.

    An order above 1 with no clipped match is smoothed to
    ``(0 + 1) / (total + 1)``; a zero unigram match count gives 0.
    """
    if max_n not in (2, 4):
        raise ValueError("max_n must be 2 or 4")
    if len(preds) != len(refs):
        raise ValueError("preds and refs differ in length")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for pred, ref in zip(preds, refs):
        p_tok, r_tok = metric_tokens(pred), metric_tokens(ref)
        c_len += len(p_tok)
        r_len += len(r_tok)
        for n in range(1, max_n + 1):
            p_ng, r_ng = _ngrams(p_tok, n), _ngrams(r_tok, n)
            matches[n - 1] += sum((p_ng & r_ng).values())
            totals[n - 1] += sum(p_ng.values())
    if c_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        num, den = matches[n], totals[n]
        if n > 0 and num == 0:
            num, den = num + 1, den + 1
        log_p += math.log(num / den) / max_n
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(log_p)


def bleu(pred: str, ref: str, max_n: int = 4) -> float:
    return corpus_bleu([pred], [ref], max_n)


def _lcs(a: Sequence[str], b: Sequence[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(pred: str, ref: str) -> float:
    p_tok, r_tok = metric_tokens(pred), metric_tokens(ref)
    if not p_tok or not r_tok:
        return 0.0
    lcs = _lcs(p_tok, r_tok)
    if lcs == 0:
        return 0.0
    precision, recall = lcs / len(p_tok), lcs / len(r_tok)
    return 2 * precision * recall / (precision + recall)


def knowledge_accuracy(pred: str, candidates: Sequence[str], gold_index: int) -> int:
    """1 when the best-matching candidate (lowest index on ties) is the gold one."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if isinstance(gold_index, bool) or not 0 <= gold_index < len(candidates):
        raise ValueError(f"gold_index {gold_index!r} out of range for {len(candidates)} candidates")
    scores = [unigram_f1(pred, c) for c in candidates]
    best = max(range(len(scores)), key=lambda i: (scores[i], -i))
    return int(best == gold_index)


@dataclass
class MetricsReport:
    f1: float
    rouge_l: float
    bleu2: float
    bleu4: float
    kf1: float
    ef1: float
    acc: float | None
    n_examples: int

    def as_record(self) -> dict:
        """Fields scaled by 100 and rounded to one decimal."""
        rec = {k: (None if v is None else round(100 * v, 1)) for k, v in asdict(self).items() if k != "n_examples"}
        rec["n_examples"] = self.n_examples
        return rec

    def as_table(self) -> str:
        rec = self.as_record()
        cols = ["f1", "rouge_l", "bleu2", "bleu4", "kf1", "ef1", "acc"]
        head = ["F1", "RL", "B2", "B4", "KF1", "EF1", "Acc"]
        row = ["-" if rec[c] is None else f"{rec[c]:.1f}" for c in cols]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        return fmt.format(*head) + "\n" + fmt.format(*row) + f"\n(n = {self.n_examples})"


def gold_knowledge(example) -> str | None:
    if example.gold_candidate is not None:
        return example.candidates[example.gold_candidate].text
    if example.positives:
        return example.positives[0].text
    return None


def evaluate(predictions: Mapping[str, str], examples: Iterable, extractor=None) -> MetricsReport:
    """Score predicted responses (keyed by example id) against dialogue examples."""
    if extractor is None:
        from .spans import RuleEntityExtractor

        extractor = RuleEntityExtractor()
    examples = [ex for ex in examples if ex.id in predictions]
    if not examples:
        raise ValueError("no prediction matches an example id")
    preds = [predictions[ex.id] for ex in examples]
    refs = [ex.response for ex in examples]
    n = len(examples)
    kf1s, accs = [], []
    for ex, pred in zip(examples, preds):
        gold = gold_knowledge(ex)
        if gold is not None:
            kf1s.append(knowledge_f1(pred, gold))
        if ex.gold_candidate is not None:
            accs.append(knowledge_accuracy(pred, [c.text for c in ex.candidates], ex.gold_candidate))
    return MetricsReport(
        f1=sum(unigram_f1(p, r) for p, r in zip(preds, refs)) / n,
        rouge_l=sum(rouge_l(p, r) for p, r in zip(preds, refs)) / n,
        bleu2=corpus_bleu(preds, refs, 2),
        bleu4=corpus_bleu(preds, refs, 4),
        kf1=sum(kf1s) / len(kf1s) if kf1s else 0.0,
        ef1=sum(entity_f1(p, r, extractor) for p, r in zip(preds, refs)) / n,
        acc=sum(accs) / len(accs) if accs else None,
        n_examples=n,
    )


# --- hallucination taxonomy -------------------------------------------------

TAXONOMY = {
    "intrinsic": ("intrinsic_nonfactual", "intrinsic_entity", "intrinsic_ambiguous"),
    "extrinsic": ("extrinsic_out_of_context", "extrinsic_confusion", "extrinsic_nonspecific"),
    "other": ("other_ok", "other_mechanical", "other_no_knowledge", "other_repeat"),
}
CATEGORIES = tuple(c for group in TAXONOMY.values() for c in group)


@dataclass(frozen=True)
class HallucinationLabel:
    category: str
    example_id: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown hallucination category {self.category!r}")


@dataclass
class TaxonomyReport:
    fractions: dict[str, float]
    subtotals: dict[str, float]
    n_labels: int

    def as_table(self) -> str:
        lines = [f"{'category':<28}{'share':>8}"]
        for group, cats in TAXONOMY.items():
            lines.append(f"{group + ' (total)':<28}{100 * self.subtotals[group]:>7.1f}%")
            for c in cats:
                lines.append(f"  {c:<26}{100 * self.fractions[c]:>7.1f}%")
        lines.append(f"(n = {self.n_labels})")
        return "\n".join(lines)


def taxonomy_report(labels: Sequence[HallucinationLabel]) -> TaxonomyReport:
    if not labels:
        raise ValueError("at least one label is required")
    seen = set()
    for lab in labels:
        if lab.example_id in seen:
            raise ValueError(f"example {lab.example_id!r} labeled more than once")
        seen.add(lab.example_id)
    counts = Counter(lab.category for lab in labels)
    n = len(labels)
    fractions = {c: counts[c] / n for c in CATEGORIES}
    subtotals = {g: sum(counts[c] for c in cats) / n for g, cats in TAXONOMY.items()}
    return TaxonomyReport(fractions, subtotals, n)


def read_labels(path) -> list[HallucinationLabel]:
    """JSON-lines file of ``{"example_id", "category"}`` records."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"labels file not found: {path}")
    out = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(HallucinationLabel(rec["category"], str(rec["example_id"])))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise IngestionError(f"{path}:{lineno}: bad label record ({exc})") from None
    return out
