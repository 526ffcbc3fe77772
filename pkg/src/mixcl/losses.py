"""Loss family: MLE, denoising LM, mixed contrast, sentence-level contrast.

All log computations clamp probabilities to ``[prob_floor, 1 - prob_floor]``
first, so ``log(1 - p)`` stays finite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from ._validation import check_non_negative_int, check_positive_int, check_random_state
from .model import SequenceModel, pad_batch, teacher_forced_log_probs

PROB_FLOOR = 1e-7


def _clamped(p: torch.Tensor, prob_floor: float) -> torch.Tensor:
    return p.clamp(prob_floor, 1.0 - prob_floor)


def nll_terms(logp: torch.Tensor, prob_floor: float = PROB_FLOOR) -> torch.Tensor:
    """``-log clamp(p)`` elementwise for log-probabilities ``logp``."""
    return -torch.log(_clamped(logp.exp(), prob_floor))


def mixed_contrast_terms(probs: torch.Tensor, signs: torch.Tensor, prob_floor: float = PROB_FLOOR) -> torch.Tensor:
    p = _clamped(probs, prob_floor)
    return -(signs * torch.log(p) + (1 - signs) * torch.log(1 - p))


def mixed_contrast_loss(step_probs, signs, prob_floor: float = PROB_FLOOR) -> torch.Tensor:
    """Token-level contrast over one mixed sequence.

    ``-sum_j [s_j log p_j + (1 - s_j) log(1 - p_j)]`` where ``p_j`` is the
    probability of the realised token at position ``j`` and ``s_j`` its sign.

    >>> round(float(mixed_contrast_loss([0.5, 0.25], [1, 0])), 4)
    0.9808
    """
    probs = torch.as_tensor(step_probs, dtype=torch.float64) if not torch.is_tensor(step_probs) else step_probs
    signs = torch.as_tensor(signs, dtype=probs.dtype)
    if probs.shape != signs.shape:
        raise ValueError(f"length mismatch: {tuple(probs.shape)} probabilities vs {tuple(signs.shape)} signs")
    if probs.numel() and (probs.min() < 0 or probs.max() > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    return mixed_contrast_terms(probs, signs, prob_floor).sum()


def mle_loss(model: SequenceModel, x_ids: Sequence[int], y_ids: Sequence[int], prob_floor: float = PROB_FLOOR):
    """``-sum_t log p(y_t | y_<t, x)`` under teacher forcing."""
    if len(y_ids) == 0:
        raise ValueError("y_ids must be non-empty")
    logp = teacher_forced_log_probs(model, [list(x_ids)], [list(y_ids)])[0]
    return nll_terms(logp, prob_floor).sum()


def batch_mle_losses(model, inputs, targets, prob_floor: float = PROB_FLOOR, state=None) -> torch.Tensor:
    """One MLE loss per (input, target) pair, computed in a single forward pass."""
    logp = teacher_forced_log_probs(model, inputs, targets, state=state)
    mask = _target_mask(targets, logp.dtype)
    return (nll_terms(logp, prob_floor) * mask).sum(dim=1)


def _target_mask(targets, dtype) -> torch.Tensor:
    width = max(len(t) for t in targets)
    mask = torch.zeros((len(targets), width), dtype=dtype)
    for i, t in enumerate(targets):
        mask[i, : len(t)] = 1
    return mask


def lm_loss(model, k_ids, k_hat_ids, prob_floor: float = PROB_FLOOR, prompt_ids: Sequence[int] = ()):
    """Denoising loss ``-log p(k | k_hat)``; the corrupted text is the model input."""
    if len(k_ids) == 0 or len(k_hat_ids) == 0:
        raise ValueError("k_ids and k_hat_ids must be non-empty")
    return mle_loss(model, list(prompt_ids) + list(k_hat_ids), k_ids, prob_floor)


def contrastive_ce(score_pos, scores_neg) -> torch.Tensor:
    """``-log(exp(s+) / (exp(s+) + sum_i exp(s-_i)))``, computed stably."""
    s_pos = torch.as_tensor(score_pos, dtype=torch.float64) if not torch.is_tensor(score_pos) else score_pos
    s_neg = (
        torch.as_tensor(list(scores_neg), dtype=s_pos.dtype)
        if not torch.is_tensor(scores_neg)
        else scores_neg
    )
    if s_neg.numel() == 0:
        raise ValueError("at least one negative score is required")
    return torch.logsumexp(torch.cat([s_pos.reshape(1), s_neg.reshape(-1)]), dim=0) - s_pos


def sentence_contrastive_loss(model, x_ids, z_pos_ids, negatives_ids) -> torch.Tensor:
    """Sentence-level baseline: each snippet is scored by its total log-probability given ``x``."""
    negatives_ids = [list(n) for n in negatives_ids]
    if not negatives_ids:
        raise ValueError("at least one negative is required")
    targets = [list(z_pos_ids)] + negatives_ids
    logp = teacher_forced_log_probs(model, [list(x_ids)] * len(targets), targets)
    scores = logp.sum(dim=1)
    return contrastive_ce(scores[0], scores[1:])


def mixed_targets(mixed_sequences, eos_id: int, max_len: int = 64) -> tuple[list[list[int]], list[list[int]]]:
    """Target ids and signs for mixed sequences, truncated and closed with EOS (sign 1)."""
    targets, signs = [], []
    for m in mixed_sequences:
        if m.tokens is None:
            raise ValueError("mixed sequence was built without a tokenizer")
        targets.append(list(m.tokens[: max_len - 1]) + [eos_id])
        signs.append(list(m.signs[: max_len - 1]) + [1])
    return targets, signs


def mixed_losses(model, state, targets, signs, prob_floor: float = PROB_FLOOR) -> torch.Tensor:
    """One ``l_mix`` value per mixed target, sharing a precomputed encoder state."""
    logp = teacher_forced_log_probs(model, None, targets, state=state)
    mask = _target_mask(targets, logp.dtype)
    sign_t = torch.zeros_like(mask)
    for i, s in enumerate(signs):
        sign_t[i, : len(s)] = torch.as_tensor(s, dtype=mask.dtype)
    return (mixed_contrast_terms(logp.exp(), sign_t, prob_floor) * mask).sum(dim=1)


def mcl_loss(model, x_ids, z_pos, negative_set, mixer, rng=None, tokenizer=None, prob_floor: float = PROB_FLOOR):
    """Sum of ``l_mix`` over the mixes of ``z_pos`` with every negative in the set."""
    rng = check_random_state(rng)
    negatives = [item.snippet for item in negative_set.items] if hasattr(negative_set, "items") else list(negative_set)
    if not negatives:
        raise ValueError("negative set is empty")
    mixed = [mixer.mix(z_pos, z_neg, tokenizer=tokenizer, rng=rng) for z_neg in negatives]
    targets, signs = mixed_targets(mixed, model.eos_id)
    src, pad = pad_batch([list(x_ids)], model.pad_id)
    state = model.repeat_state(model.encode(src, pad), len(targets))
    return mixed_losses(model, state, targets, signs, prob_floor).sum()


# --- corruption ------------------------------------------------------------

CORRUPTION_MODES = ("mask", "delete", "infill")


@dataclass
class CorruptionConfig:
    mode_weights: dict = field(default_factory=lambda: {"mask": 1 / 3, "delete": 1 / 3, "infill": 1 / 3})
    mask_rate: float = 0.15
    infill_mean: float = 3.0

    def __post_init__(self):
        unknown = set(self.mode_weights) - set(CORRUPTION_MODES)
        if unknown:
            raise ValueError(f"unknown corruption modes {sorted(unknown)}")
        if any(w < 0 for w in self.mode_weights.values()):
            raise ValueError("corruption mode weights must be non-negative")
        if abs(sum(self.mode_weights.values()) - 1.0) > 1e-9:
            raise ValueError("corruption mode weights must sum to 1")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError("mask_rate must lie in [0, 1]")
        if self.infill_mean < 0:
            raise ValueError("infill_mean must be non-negative")


def mask_positions(ids, positions, mask_id: int) -> list[int]:
    out = list(ids)
    for p in positions:
        out[p] = mask_id
    return out


def delete_positions(ids, positions) -> list[int]:
    drop = set(positions)
    return [t for i, t in enumerate(ids) if i not in drop]


def infill_span(ids, start: int, length: int, mask_id: int) -> list[int]:
    """Replace ``ids[start:start + length]`` by a single mask id."""
    ids = list(ids)
    return ids[:start] + [mask_id] + ids[start + length :]


def corrupt(k_ids, config: CorruptionConfig | None = None, rng=None, mask_id: int = 1, reserved=(0, 2, 3)) -> list[int]:
    """Corrupt ``k_ids`` with one mode drawn from ``config.mode_weights``.

    Positions holding a ``reserved`` id (padding, BOS, EOS) are never touched.
    """
    config = config or CorruptionConfig()
    rng = check_random_state(rng)
    ids = list(k_ids)
    if not ids:
        raise ValueError("k_ids must be non-empty")
    if config.mask_rate == 0:
        return ids
    modes = [m for m in CORRUPTION_MODES if config.mode_weights.get(m, 0) > 0]
    weights = np.array([config.mode_weights[m] for m in modes], dtype=float)
    mode = modes[rng.choice(len(modes), p=weights / weights.sum())]
    reserved = set(reserved)
    editable = [i for i, t in enumerate(ids) if t not in reserved]
    if not editable:
        return ids
    if mode == "infill":
        length = int(min(rng.poisson(config.infill_mean), len(editable)))
        # spans stay inside one run of editable positions
        start_idx = int(rng.integers(len(editable)))
        start = editable[start_idx]
        run = 0
        while run < length and start + run < len(ids) and ids[start + run] not in reserved:
            run += 1
        return infill_span(ids, start, run, mask_id)
    chosen = [i for i in editable if rng.random() < config.mask_rate]
    if mode == "mask":
        return mask_positions(ids, chosen, mask_id)
    if len(chosen) == len(ids):
        chosen = chosen[:-1]
    return delete_positions(ids, chosen)


# --- schedule --------------------------------------------------------------


@dataclass(frozen=True)
class LossWeightSchedule:
    alpha_init: tuple = (0.4, 0.3, 0.3)
    alpha_final: tuple = (0.5, 0.5, 0.0)
    total_steps: int = 1

    def __post_init__(self):
        check_positive_int(self.total_steps, "total_steps")
        for name in ("alpha_init", "alpha_final"):
            value = tuple(float(a) for a in getattr(self, name))
            if len(value) != 3 or any(a < 0 for a in value):
                raise ValueError(f"{name} must be three non-negative weights")
            object.__setattr__(self, name, value)


def loss_weights(step: int, schedule: LossWeightSchedule) -> tuple[float, float, float]:
    """Linear interpolation of ``(alpha1, alpha2, alpha3)``; steps past the end clamp."""
    step = check_non_negative_int(step, "step")
    frac = min(step, schedule.total_steps) / schedule.total_steps
    return tuple((1.0 - frac) * a + frac * b for a, b in zip(schedule.alpha_init, schedule.alpha_final))
