"""Dialogue ingestion, tokenization and model-input encoding."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import KnowledgeSnippet
from .errors import IngestionError
from .text import detokenize, split_words

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
RESERVED = (PAD, UNK, BOS, EOS)

MAX_INPUT_LEN = 128
MAX_OUTPUT_LEN = 64

PROMPTS = {
    "response_generation": "Response generation",
    "knowledge_identification": "Knowledge identification",
    "corpus_denoising": "Wikipedia denoising",
}
SPEAKER_TAGS = ("U1", "U2")


def prompt_words() -> list[str]:
    words = [w.lower() for text in PROMPTS.values() for w in split_words(text)]
    for tag in SPEAKER_TAGS:
        words += [w.lower() for w in split_words(tag + ":")]
    return list(dict.fromkeys(words))


class Tokenizer(BaseEstimator, TransformerMixin):
    """Lowercased word/punctuation tokenizer with a frequency-ranked vocabulary.

    Ids 0-3 are reserved for padding, unknown, begin and end of sequence.
    ``specials`` are placed immediately after the reserved ids, followed by
    the most frequent words (ties broken lexicographically) up to
    ``max_vocab`` entries in total.
    """

    def __init__(self, max_vocab: int = 2000, specials: Sequence[str] = ()):
        self.max_vocab = max_vocab
        self.specials = specials

    pad_id, unk_id, bos_id, eos_id = 0, 1, 2, 3
    # corruption masks with the unknown id; no fifth reserved slot
    mask_id = unk_id

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return [w.lower() for w in split_words(text)]

    def fit(self, texts: Iterable[str], y=None):
        if isinstance(self.max_vocab, bool) or not isinstance(self.max_vocab, int) or self.max_vocab < 5:
            raise ValueError(f"max_vocab must be an integer >= 5, got {self.max_vocab!r}")
        counts: Counter = Counter()
        n_texts = 0
        for text in texts:
            counts.update(self.tokenize(text))
            n_texts += 1
        if n_texts == 0:
            raise ValueError("cannot build a tokenizer from zero texts")
        vocab = {tok: i for i, tok in enumerate(RESERVED)}
        for tok in self.specials:
            if len(vocab) >= self.max_vocab:
                break
            vocab.setdefault(tok.lower(), len(vocab))
        ranked = sorted((c for c in counts.items() if c[0] not in vocab), key=lambda c: (-c[1], c[0]))
        for tok, _ in ranked[: max(0, self.max_vocab - len(vocab))]:
            vocab[tok] = len(vocab)
        self.vocabulary_ = vocab
        self.inverse_ = [None] * len(vocab)
        for tok, i in vocab.items():
            self.inverse_[i] = tok
        return self

    @classmethod
    def from_vocabulary(cls, tokens: Sequence[str]) -> "Tokenizer":
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        tok = cls(max_vocab=len(tokens))
        tok.vocabulary_ = {t: i for i, t in enumerate(tokens)}
        tok.inverse_ = list(tokens)
        return tok

    @property
    def vocab_size(self) -> int:
        check_is_fitted(self, "vocabulary_")
        return len(self.vocabulary_)

    def encode_tokens(self, tokens: Iterable[str]) -> list[int]:
        check_is_fitted(self, "vocabulary_")
        get = self.vocabulary_.get
        return [get(t.lower(), self.unk_id) for t in tokens]

    def encode(self, text: str) -> list[int]:
        return self.encode_tokens(self.tokenize(text))

    def decode(self, ids: Iterable[int], skip_special: bool = True) -> str:
        check_is_fitted(self, "vocabulary_")
        out = []
        for i in ids:
            i = int(i)
            if i == self.eos_id and skip_special:
                break
            if skip_special and i in (self.pad_id, self.bos_id):
                continue
            out.append(self.inverse_[i])
        return detokenize(out)

    def transform(self, texts: Iterable[str]) -> list[list[int]]:
        return [self.encode(t) for t in texts]


def build_tokenizer(texts: Iterable[str], max_vocab: int, specials: Sequence[str] = ()) -> Tokenizer:
    return Tokenizer(max_vocab=max_vocab, specials=tuple(specials)).fit(texts)


@dataclass
class DialogueExample:
    id: str
    context: list[tuple[str, str]]
    response: str
    positives: list[KnowledgeSnippet] = field(default_factory=list)
    candidates: list[KnowledgeSnippet] = field(default_factory=list)
    gold_candidate: int | None = None
    topic: str = ""

    def __post_init__(self):
        if not self.context:
            raise ValueError(f"example {self.id}: empty context")
        if not self.response or not self.response.strip():
            raise ValueError(f"example {self.id}: empty response")
        if self.gold_candidate is not None:
            if not 0 <= self.gold_candidate < len(self.candidates):
                raise ValueError(f"example {self.id}: gold_candidate out of range")
            gold = self.candidates[self.gold_candidate].text
            if gold not in {p.text for p in self.positives}:
                raise ValueError(f"example {self.id}: gold candidate text is not among the positives")

    def context_text(self, last_only: bool = False) -> str:
        turns = self.context[-1:] if last_only else self.context
        return " ".join(utt for _, utt in turns)

    @property
    def responder(self) -> str:
        return "U2" if self.context[-1][0] == "U1" else "U1"


@dataclass
class DialogueStats:
    dialogues: int = 0
    turns: int = 0
    examples: int = 0
    skipped: int = 0


def _speaker_map(turns) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for turn in turns:
        spk = turn.get("speaker")
        if isinstance(spk, str) and spk not in mapping:
            if spk.upper() in SPEAKER_TAGS:
                mapping[spk] = spk.upper()
    for turn in turns:
        spk = turn.get("speaker")
        if isinstance(spk, str) and spk not in mapping:
            free = [t for t in SPEAKER_TAGS if t not in mapping.values()]
            mapping[spk] = free[0] if free else SPEAKER_TAGS[len(mapping) % 2]
    return mapping


def _text_list(value, where: str, name: str) -> list[str]:
    if value is None:
        return []
    if not isinstance(value, list) or not all(isinstance(v, str) and v.strip() for v in value):
        raise IngestionError(f"{where}: '{name}' must be a list of non-empty strings")
    return [v.strip() for v in value]


def parse_dialogue(record, where: str, index: int, stats: DialogueStats | None = None) -> list[DialogueExample]:
    """Expand one dialogue record into one example per labeled turn."""
    if not isinstance(record, dict):
        raise IngestionError(f"{where}: record must be an object")
    topic = record.get("topic", "")
    turns = record.get("turns")
    if not isinstance(topic, str):
        raise IngestionError(f"{where}: 'topic' must be a string")
    if not isinstance(turns, list) or not turns:
        raise IngestionError(f"{where}: 'turns' must be a non-empty list")
    speakers = _speaker_map([t for t in turns if isinstance(t, dict)])
    history: list[tuple[str, str]] = []
    out = []
    for t_idx, turn in enumerate(turns):
        loc = f"{where} turn {t_idx}"
        if not isinstance(turn, dict):
            raise IngestionError(f"{loc}: turn must be an object")
        spk, text = turn.get("speaker"), turn.get("text")
        if not isinstance(spk, str) or not isinstance(text, str) or not text.strip():
            raise IngestionError(f"{loc}: 'speaker' and non-empty 'text' are required")
        tag = speakers[spk]
        history.append((tag, text.strip()))
        response = turn.get("response")
        if stats is not None:
            stats.turns += 1
        if response is None or (isinstance(response, str) and not response.strip()):
            if stats is not None:
                stats.skipped += 1
            continue
        if not isinstance(response, str):
            raise IngestionError(f"{loc}: 'response' must be a string")
        cid = f"{index}-{t_idx}"
        positives = [
            KnowledgeSnippet(id=f"{cid}/pos{i}", text=s)
            for i, s in enumerate(_text_list(turn.get("positives"), loc, "positives"))
        ]
        candidates = [
            KnowledgeSnippet(id=f"{cid}/cand{i}", text=s)
            for i, s in enumerate(_text_list(turn.get("candidates"), loc, "candidates"))
        ]
        gold = turn.get("gold_candidate")
        if gold is not None and (isinstance(gold, bool) or not isinstance(gold, int)):
            raise IngestionError(f"{loc}: 'gold_candidate' must be an integer")
        try:
            ex = DialogueExample(
                id=cid,
                context=list(history),
                response=response.strip(),
                positives=positives,
                candidates=candidates,
                gold_candidate=gold,
                topic=topic,
            )
        except ValueError as exc:
            raise IngestionError(f"{loc}: {exc}") from None
        out.append(ex)
        if stats is not None:
            stats.examples += 1
        history.append(("U2" if tag == "U1" else "U1", response.strip()))
    if stats is not None:
        stats.dialogues += 1
    return out


def load_dialogues(path, return_stats: bool = False):
    """Load a JSON-lines dialogue file.

    Each line is ``{"topic", "turns": [{speaker, text, response?, positives?,
    candidates?, gold_candidate?}]}``. A turn's ``response`` is the reply to
    the context ending with that turn; it joins the history for later turns.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"dialogue file not found: {path}")
    stats = DialogueStats()
    examples: list[DialogueExample] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: malformed record ({exc.msg})") from None
            examples.extend(parse_dialogue(record, f"{path}:{lineno}", stats.dialogues, stats))
    return (examples, stats) if return_stats else examples


@dataclass
class EncodedExample:
    input_ids: list[int]
    output_ids: list[int]
    prompt_tag: str
    truncated: bool = False


def _prompt_ids(prompt_tag: str, tokenizer: Tokenizer) -> list[int]:
    if not prompt_tag or prompt_tag not in PROMPTS:
        raise ValueError(f"prompt_tag must be one of {sorted(PROMPTS)}, got {prompt_tag!r}")
    return tokenizer.encode(PROMPTS[prompt_tag])


def encode_input(prompt_tag: str, body_ids: Sequence[int], tokenizer: Tokenizer, max_len: int = MAX_INPUT_LEN):
    """Prompt ids followed by ``body_ids``; the body is cut from the left to fit."""
    prompt = _prompt_ids(prompt_tag, tokenizer)
    room = max_len - len(prompt)
    body = list(body_ids)
    truncated = len(body) > room
    if truncated:
        body = body[len(body) - room :]
    return prompt + body, truncated


def encode_context(context: Sequence[tuple[str, str]], tokenizer: Tokenizer) -> list[int]:
    ids: list[int] = []
    for speaker, utterance in context:
        ids += tokenizer.encode(f"{speaker}: {utterance}")
    return ids


def encode_target(target_ids: Sequence[int], tokenizer: Tokenizer, max_len: int = MAX_OUTPUT_LEN) -> list[int]:
    return list(target_ids)[: max_len - 1] + [tokenizer.eos_id]


def encode_example(context, target: str, prompt_tag: str, tokenizer: Tokenizer) -> EncodedExample:
    """Encode a (context, target) pair for one of the three task prompts.

    ``context`` is a list of ``(speaker_tag, utterance)`` turns or a
    :class:`DialogueExample`.
    """
    if isinstance(context, DialogueExample):
        context = context.context
    input_ids, truncated = encode_input(prompt_tag, encode_context(context, tokenizer), tokenizer)
    target_ids = tokenizer.encode(target)
    output_ids = encode_target(target_ids, tokenizer)
    return EncodedExample(
        input_ids=input_ids,
        output_ids=output_ids,
        prompt_tag=prompt_tag,
        truncated=truncated or len(target_ids) > MAX_OUTPUT_LEN - 1,
    )
