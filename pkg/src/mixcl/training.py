"""Joint training: MLE + mixed contrast + denoising LM under a linear weight schedule."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch
from sklearn.base import BaseEstimator

from ._validation import check_positive_int, check_positive_real, check_unit_interval, derive_rng
from .corpus import KnowledgeCorpus, TfIdfIndex, build_index
from .data import DialogueExample, Tokenizer, build_tokenizer, encode_example, encode_input, encode_target, prompt_words
from .errors import ConfigError, NumericalFailure
from .losses import (
    PROB_FLOOR,
    CorruptionConfig,
    LossWeightSchedule,
    batch_mle_losses,
    corrupt,
    loss_weights,
    mixed_losses,
    mixed_targets,
)
from .mixup import SpanMixer
from .model import ReferenceModel, greedy_decode_batch, pad_batch
from .negatives import NegativeSet, mine_negatives, random_negative_set

ABLATION_FLAGS = ("disable_mcl", "disable_lm", "random_negatives", "disable_model_negatives", "mle_only")
LOG_FIELDS = ("step", "alpha1", "alpha2", "alpha3", "L_MLE", "L_MCL", "L_LM", "J", "grad_norm")


@dataclass
class TrainConfig:
    learning_rate: float = 2e-5
    clip_norm: float = 0.1
    epochs: int = 5
    batch_size: int = 16
    seed: int = 13
    M: int = 8
    beta_neg: float = 0.5
    beta_span: float = 0.5
    prob_floor: float = PROB_FLOOR
    alpha_init: tuple = (0.4, 0.3, 0.3)
    alpha_final: tuple = (0.5, 0.5, 0.0)
    mask_rate: float = 0.15
    infill_mean: float = 3.0
    # model-generated negatives are re-sampled from the current model each epoch
    refresh_negatives: bool = True
    n_samples: int = 4
    pool: int = 32
    # retrieval query: the whole context ("full") or its last utterance ("last")
    context_mode: str = "full"
    # architecture and vocabulary
    max_vocab: int = 2000
    d_model: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    n_heads: int = 2
    # ablations
    disable_mcl: bool = False
    disable_lm: bool = False
    random_negatives: bool = False
    disable_model_negatives: bool = False
    mle_only: bool = False

    def __post_init__(self):
        try:
            check_positive_real(self.learning_rate, "learning_rate")
            check_positive_real(self.clip_norm, "clip_norm")
            for name in ("epochs", "batch_size", "M", "n_samples", "pool", "max_vocab", "d_model", "n_heads"):
                check_positive_int(getattr(self, name), name)
            check_unit_interval(self.beta_neg, "beta_neg")
            check_unit_interval(self.beta_span, "beta_span")
            if self.context_mode not in ("full", "last"):
                raise ValueError(f"context_mode must be 'full' or 'last', got {self.context_mode!r}")
            if not 0.0 < self.prob_floor < 0.5:
                raise ValueError(f"prob_floor must lie in (0, 0.5), got {self.prob_floor!r}")
            self.alpha_init = tuple(float(a) for a in self.alpha_init)
            self.alpha_final = tuple(float(a) for a in self.alpha_final)
            LossWeightSchedule(self.alpha_init, self.alpha_final, 1)
            CorruptionConfig(mask_rate=self.mask_rate, infill_mean=self.infill_mean)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @property
    def use_mcl(self) -> bool:
        return not (self.disable_mcl or self.mle_only)

    @property
    def use_lm(self) -> bool:
        return not (self.disable_lm or self.mle_only)

    @property
    def use_model_negatives(self) -> bool:
        return self.use_mcl and self.refresh_negatives and not (self.disable_model_negatives or self.random_negatives)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["alpha_init"], d["alpha_final"] = list(self.alpha_init), list(self.alpha_final)
        return d


# --- batches -----------------------------------------------------------------


@dataclass
class PreparedBatch:
    """Token ids for every loss term of one batch; fixed once built."""

    mle_inputs: list[list[int]]
    mle_targets: list[list[int]]
    mcl_inputs: list[list[int]] = field(default_factory=list)
    mcl_targets: list[list[int]] = field(default_factory=list)
    mcl_signs: list[list[int]] = field(default_factory=list)
    mcl_owner: list[int] = field(default_factory=list)
    lm_inputs: list[list[int]] = field(default_factory=list)
    lm_targets: list[list[int]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.mle_inputs)


def prepare_batch(
    examples: Sequence[DialogueExample],
    tokenizer: Tokenizer,
    config: TrainConfig,
    *,
    negatives: Mapping[str, NegativeSet] | None = None,
    corpus: KnowledgeCorpus | None = None,
    mixer: SpanMixer | None = None,
    epoch: int = 0,
) -> PreparedBatch:
    """Encode one batch. Randomness is drawn per example from ``(seed, epoch, id)``."""
    batch = PreparedBatch([], [])
    mixer = mixer or SpanMixer(config.beta_span)
    corruption = CorruptionConfig(mask_rate=config.mask_rate, infill_mean=config.infill_mean)
    for ex in examples:
        rng = derive_rng(config.seed, epoch, ex.id, "batch")
        enc = encode_example(ex, ex.response, "response_generation", tokenizer)
        batch.mle_inputs.append(enc.input_ids)
        batch.mle_targets.append(enc.output_ids)
        if config.use_mcl and ex.positives:
            negs = _negatives_for(ex, config, negatives, corpus, epoch)
            if negs is not None and len(negs):
                z_pos = ex.positives[int(rng.integers(len(ex.positives)))]
                mixes = [mixer.mix(z_pos, item.snippet, tokenizer=tokenizer, rng=rng) for item in negs.items]
                targets, signs = mixed_targets(mixes, tokenizer.eos_id)
                batch.mcl_owner += [len(batch.mcl_inputs)] * len(targets)
                batch.mcl_inputs.append(encode_example(ex, "", "knowledge_identification", tokenizer).input_ids)
                batch.mcl_targets += targets
                batch.mcl_signs += signs
        if config.use_lm:
            if corpus is None or len(corpus) == 0:
                raise ConfigError("the denoising term needs a knowledge corpus")
            k = corpus[int(rng.integers(len(corpus)))]
            k_ids = tokenizer.encode(k.text)[:63]
            k_hat = corrupt(k_ids, corruption, rng, mask_id=tokenizer.mask_id)
            batch.lm_inputs.append(encode_input("corpus_denoising", k_hat, tokenizer)[0])
            batch.lm_targets.append(encode_target(k_ids, tokenizer))
    return batch


def _negatives_for(ex, config, negatives, corpus, epoch) -> NegativeSet | None:
    if config.random_negatives:
        if corpus is None:
            raise ConfigError("random negatives need a knowledge corpus")
        return random_negative_set(
            corpus, ex.positives, config.M, derive_rng(config.seed, epoch, ex.id, "random"), ex.id
        )
    if negatives is None:
        return None
    negs = negatives.get(ex.id)
    if negs is not None and len(negs) > config.M:
        negs = NegativeSet(negs.context_id, negs.items[: config.M])
    return negs


# --- objective -----------------------------------------------------------------


def objective(
    model, batch: PreparedBatch, weights: Sequence[float], config: TrainConfig
) -> tuple[torch.Tensor, dict]:
    """``J = a1 L_MLE + a2 L_MCL + a3 L_LM``, each term averaged over the batch.

    Disabled or zero-weight terms are not computed and contribute exactly 0.
    Returns ``J`` and the float value of each term (``None`` when skipped).
    """
    a1, a2, a3 = weights
    floor = config.prob_floor
    terms: dict[str, torch.Tensor | None] = {"L_MLE": None, "L_MCL": None, "L_LM": None}
    terms["L_MLE"] = batch_mle_losses(model, batch.mle_inputs, batch.mle_targets, floor).mean()
    J = a1 * terms["L_MLE"]
    if config.use_mcl and a2 > 0 and batch.mcl_targets:
        src, pad = pad_batch(batch.mcl_inputs, model.pad_id)
        memory, mem_pad = model.encode(src, pad)
        owner = torch.as_tensor(batch.mcl_owner, dtype=torch.long)
        state = (memory.index_select(0, owner), mem_pad.index_select(0, owner))
        per_mix = mixed_losses(model, state, batch.mcl_targets, batch.mcl_signs, floor)
        per_example = torch.zeros(len(batch.mcl_inputs), dtype=per_mix.dtype).index_add(0, owner, per_mix)
        terms["L_MCL"] = per_example.mean()
        J = J + a2 * terms["L_MCL"]
    if config.use_lm and a3 > 0 and batch.lm_targets:
        terms["L_LM"] = batch_mle_losses(model, batch.lm_inputs, batch.lm_targets, floor).mean()
        J = J + a3 * terms["L_LM"]
    for name, value in list(terms.items()) + [("J", J)]:
        if value is not None and not torch.isfinite(value):
            raise NumericalFailure(f"non-finite {name} ({float(value.detach())})")
    return J, {k: (None if v is None else float(v.detach())) for k, v in terms.items()}


def clip_grad_norm(parameters: Iterable[torch.nn.Parameter], max_norm: float) -> float:
    """Scale gradients by ``max_norm / norm`` when the global norm exceeds ``max_norm``.

    Returns the pre-clip norm.
    """
    grads = [p.grad for p in parameters if p.grad is not None]
    if not grads:
        return 0.0
    norm = float(torch.sqrt(sum((g.double() ** 2).sum() for g in grads)))
    if not math.isfinite(norm):
        raise NumericalFailure(f"non-finite gradient norm ({norm})")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g.mul_(scale)
    return norm


def make_optimizer(model, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=config.learning_rate, weight_decay=0.0)


def joint_step(model, optimizer, batch: PreparedBatch, step: int, schedule: LossWeightSchedule, config: TrainConfig) -> dict:
    """One update; returns the training-log record for this step."""
    weights = loss_weights(step, schedule)
    optimizer.zero_grad(set_to_none=True)
    J, terms = objective(model, batch, weights, config)
    if J.requires_grad:
        J.backward()
    grad_norm = clip_grad_norm(model.parameters(), config.clip_norm)
    optimizer.step()
    return {
        "step": step,
        "alpha1": weights[0],
        "alpha2": weights[1],
        "alpha3": weights[2],
        **terms,
        "J": float(J.detach()),
        "grad_norm": grad_norm,
    }


# --- loop --------------------------------------------------------------------


def fit_tokenizer(examples, corpus, max_vocab: int) -> Tokenizer:
    texts = [s.text for s in corpus] if corpus is not None else []
    for ex in examples:
        texts += [u for _, u in ex.context] + [ex.response]
        texts += [p.text for p in ex.positives] + [c.text for c in ex.candidates]
    return build_tokenizer(texts, max_vocab, specials=prompt_words())


def build_model(tokenizer: Tokenizer, config: TrainConfig) -> ReferenceModel:
    return ReferenceModel(
        tokenizer.vocab_size,
        d_model=config.d_model,
        encoder_layers=config.encoder_layers,
        decoder_layers=config.decoder_layers,
        n_heads=config.n_heads,
        seed=config.seed,
    )


def n_batches(n_examples: int, batch_size: int) -> int:
    return max(1, math.ceil(n_examples / batch_size))


def train(
    model,
    tokenizer: Tokenizer,
    examples: Sequence[DialogueExample],
    config: TrainConfig,
    *,
    corpus: KnowledgeCorpus | None = None,
    negatives: Mapping[str, NegativeSet] | None = None,
    index: TfIdfIndex | None = None,
    validation: Sequence[DialogueExample] | None = None,
    log=None,
) -> list[dict]:
    """Run ``config.epochs`` epochs and return the per-step log records.

    With ``validation`` examples, the parameters with the best validation
    unigram F1 (checked after every epoch) are restored at the end.
    """
    examples = list(examples)
    if not examples:
        raise ConfigError("no training examples")
    torch.manual_seed(config.seed)
    per_epoch = n_batches(len(examples), config.batch_size)
    schedule = LossWeightSchedule(config.alpha_init, config.alpha_final, per_epoch * config.epochs)
    optimizer = make_optimizer(model, config)
    mixer = SpanMixer(config.beta_span).fit()
    if config.use_model_negatives and index is None and corpus is not None:
        index = build_index(corpus)
    history, step = [], 0
    best = (-1.0, None)
    for epoch in range(config.epochs):
        if epoch > 0 and config.use_model_negatives and index is not None:
            model.eval()
            negatives = mine_negatives(
                examples, index, M=config.M, beta_neg=config.beta_neg, seed=config.seed, pool=config.pool,
                model=model, tokenizer=tokenizer, n_samples=config.n_samples, epoch=epoch, context_mode=config.context_mode,
            )
        model.train()
        order = derive_rng(config.seed, epoch, "order").permutation(len(examples))
        for b in range(per_epoch):
            chunk = [examples[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
            batch = prepare_batch(
                chunk, tokenizer, config, negatives=negatives, corpus=corpus, mixer=mixer, epoch=epoch
            )
            record = joint_step(model, optimizer, batch, step, schedule, config)
            history.append(record)
            if log is not None:
                log.write(json.dumps(record) + "\n")
            step += 1
        if validation:
            from .metrics import unigram_f1

            preds = predict_responses(model, tokenizer, validation)
            score = float(np.mean([unigram_f1(p, ex.response) for p, ex in zip(preds, validation)]))
            if score > best[0]:
                best = (score, model.flat_parameters())
    if best[1] is not None:
        model.set_flat_parameters(best[1])
    return history


def predict_responses(model, tokenizer: Tokenizer, examples, prompt_tag: str = "response_generation", batch_size: int = 64) -> list[str]:
    model.eval()
    inputs = [encode_example(ex, "", prompt_tag, tokenizer).input_ids for ex in examples]
    out = []
    for start in range(0, len(inputs), batch_size):
        out += [tokenizer.decode(ids) for ids in greedy_decode_batch(model, inputs[start : start + batch_size], 64)]
    return out


class MixCLGenerator(BaseEstimator):
    """Response generator trained with the joint objective.

    Parameters
    ----------
    config : TrainConfig, optional
        Every training, schedule, architecture and ablation setting.

    Examples
    --------
    >>> gen = MixCLGenerator(TrainConfig(epochs=1, mle_only=True))  # doctest: +SKIP
    >>> gen.fit(train_examples, corpus=corpus).predict(test_examples)  # doctest: +SKIP
    """

    def __init__(self, config: TrainConfig | None = None):
        self.config = config

    def fit(self, X: Sequence[DialogueExample], y=None, *, corpus=None, negatives=None, index=None, validation=None, log=None):
        config = self.config or TrainConfig()
        self.tokenizer_ = fit_tokenizer(X, corpus, config.max_vocab)
        self.model_ = build_model(self.tokenizer_, config)
        self.history_ = train(
            self.model_, self.tokenizer_, X, config,
            corpus=corpus, negatives=negatives, index=index, validation=validation, log=log,
        )
        return self

    def predict(self, X: Sequence[DialogueExample]) -> list[str]:
        return predict_responses(self.model_, self.tokenizer_, X)

    def predict_knowledge(self, X: Sequence[DialogueExample]) -> list[str]:
        return predict_responses(self.model_, self.tokenizer_, X, "knowledge_identification")
