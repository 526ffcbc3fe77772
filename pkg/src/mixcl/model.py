"""Sequence model contract, a small reference encoder-decoder and decoding."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ._validation import check_positive_int, check_positive_real, check_random_state
from .errors import IngestionError

BOS_ID, EOS_ID, PAD_ID = 2, 3, 0
CKPT_MAGIC = "MIXCL-CKPT v1"


class SequenceModel(nn.Module):
    """Conditional next-token model ``p(target_t | target_<t, input)``.

    Subclasses implement :meth:`encode` and :meth:`decode`; everything else
    (teacher-forced scoring, decoding, flat parameter access) is shared.
    """

    vocab_size: int
    bos_id: int = BOS_ID
    eos_id: int = EOS_ID
    pad_id: int = PAD_ID

    def encode(self, src: torch.Tensor, src_pad: torch.Tensor):
        raise NotImplementedError

    def decode(self, state, tgt_in: torch.Tensor) -> torch.Tensor:
        """Log-probabilities of shape ``(batch, len(tgt_in), vocab)``."""
        raise NotImplementedError

    @staticmethod
    def repeat_state(state, repeats: int):
        return tuple(t.repeat_interleave(repeats, dim=0) for t in state)

    @property
    def dtype(self) -> torch.dtype:
        for p in self.parameters():
            return p.dtype
        return torch.get_default_dtype()

    # flat parameter view -------------------------------------------------
    def flat_parameters(self) -> torch.Tensor:
        params = [p for p in self.parameters()]
        if not params:
            return torch.zeros(0)
        return nn.utils.parameters_to_vector(params).detach().clone()

    def set_flat_parameters(self, vector: torch.Tensor) -> None:
        nn.utils.vector_to_parameters(torch.as_tensor(vector, dtype=self.dtype), list(self.parameters()))

    def loss_gradient(self, closure: Callable[[], torch.Tensor]) -> torch.Tensor:
        """Gradient of ``closure()`` as a vector aligned with :meth:`flat_parameters`."""
        params = list(self.parameters())
        loss = closure()
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        return torch.cat(
            [(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)]
        ).detach()

    def step_distribution(self, input_ids: Sequence[int], prefix_ids: Sequence[int]) -> np.ndarray:
        """Next-token distribution after ``prefix_ids`` (which excludes BOS)."""
        with torch.no_grad():
            src, pad = pad_batch([list(input_ids)], self.pad_id)
            state = self.encode(src, pad)
            tgt_in = torch.tensor([[self.bos_id] + list(prefix_ids)], dtype=torch.long)
            logp = self.decode(state, tgt_in)[0, -1]
        return logp.double().exp().numpy()


class CallableModel(SequenceModel):
    """Parameter-free model whose distributions come from a Python function.

    ``fn(input_ids, prefix_ids)`` returns a probability vector of length
    ``vocab_size``. Meant for tests and oracles.
    """

    def __init__(self, fn: Callable[[tuple, tuple], Sequence[float]], vocab_size: int):
        super().__init__()
        self.fn = fn
        self.vocab_size = vocab_size

    def encode(self, src, src_pad):
        return (src, src_pad)

    def decode(self, state, tgt_in):
        src, pad = state
        rows = []
        for b in range(src.shape[0]):
            inp = tuple(int(t) for t, m in zip(src[b], pad[b]) if not m)
            steps = []
            for t in range(tgt_in.shape[1]):
                prefix = tuple(int(x) for x in tgt_in[b, 1 : t + 1])
                p = torch.as_tensor(np.asarray(self.fn(inp, prefix), dtype=np.float64))
                steps.append(torch.log(p))
            rows.append(torch.stack(steps))
        return torch.stack(rows)


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = PAD_ID) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad to a ``(batch, max_len)`` id tensor and a boolean padding mask."""
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    mask = torch.ones((len(seqs), width), dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        mask[i, : len(s)] = False
    return ids, mask


class _Attention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        if d_model % n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        self.n_heads = n_heads
        self.q = nn.Linear(d_model, d_model)
        self.kv = nn.Linear(d_model, 2 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x, memory, key_pad=None, causal=False):
        b, t, d = x.shape
        s = memory.shape[1]
        h = self.n_heads
        q = self.q(x).view(b, t, h, d // h).transpose(1, 2)
        k, v = self.kv(memory).view(b, s, 2, h, d // h).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        if key_pad is not None:
            scores = scores.masked_fill(key_pad[:, None, None, :], float("-inf"))
        if causal:
            future = torch.ones(t, s, dtype=torch.bool).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        return self.out((attn @ v).transpose(1, 2).reshape(b, t, d))


class _FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.up = nn.Linear(d_model, d_ff)
        self.down = nn.Linear(d_ff, d_model)

    def forward(self, x):
        return self.down(F.gelu(self.up(x)))


class _EncoderLayer(nn.Module):
    def __init__(self, d, heads, d_ff):
        super().__init__()
        self.ln1, self.ln2 = nn.LayerNorm(d), nn.LayerNorm(d)
        self.attn = _Attention(d, heads)
        self.ff = _FeedForward(d, d_ff)

    def forward(self, x, pad):
        h = self.ln1(x)
        x = x + self.attn(h, h, key_pad=pad)
        return x + self.ff(self.ln2(x))


class _DecoderLayer(nn.Module):
    def __init__(self, d, heads, d_ff):
        super().__init__()
        self.ln1, self.ln2, self.ln3 = nn.LayerNorm(d), nn.LayerNorm(d), nn.LayerNorm(d)
        self.self_attn = _Attention(d, heads)
        self.cross_attn = _Attention(d, heads)
        self.ff = _FeedForward(d, d_ff)

    def forward(self, x, memory, mem_pad):
        h = self.ln1(x)
        x = x + self.self_attn(h, h, causal=True)
        x = x + self.cross_attn(self.ln2(x), memory, key_pad=mem_pad)
        return x + self.ff(self.ln3(x))


class ReferenceModel(SequenceModel):
    """Pre-norm transformer encoder-decoder with tied input/output embeddings.

    Parameters
    ----------
    vocab_size : int
    d_model : int
        Embedding width (default 64).
    encoder_layers, decoder_layers : int
        Depth of each stack (default 2).
    n_heads : int
        Attention heads (default 2).
    max_input_positions, max_output_positions : int
        Learned position table sizes (128 / 64).
    seed : int
        Seed for parameter initialisation.
    """

    def __init__(
        self,
        vocab_size: int,
        d_model: int = 64,
        encoder_layers: int = 2,
        decoder_layers: int = 2,
        n_heads: int = 2,
        max_input_positions: int = 128,
        max_output_positions: int = 64,
        seed: int = 0,
    ):
        super().__init__()
        self.vocab_size = check_positive_int(vocab_size, "vocab_size")
        self.config = dict(
            vocab_size=vocab_size,
            d_model=d_model,
            encoder_layers=encoder_layers,
            decoder_layers=decoder_layers,
            n_heads=n_heads,
            max_input_positions=max_input_positions,
            max_output_positions=max_output_positions,
        )
        d_ff = 4 * d_model
        self.embed = nn.Embedding(vocab_size, d_model)
        self.src_pos = nn.Embedding(max_input_positions, d_model)
        self.tgt_pos = nn.Embedding(max_output_positions, d_model)
        self.encoder = nn.ModuleList(_EncoderLayer(d_model, n_heads, d_ff) for _ in range(encoder_layers))
        self.decoder = nn.ModuleList(_DecoderLayer(d_model, n_heads, d_ff) for _ in range(decoder_layers))
        self.enc_norm = nn.LayerNorm(d_model)
        self.dec_norm = nn.LayerNorm(d_model)
        self.out_bias = nn.Parameter(torch.zeros(vocab_size))
        self._init(seed)

    def _init(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if p.dim() < 2:
                    # layer-norm gains stay 1; every bias starts at 0
                    if not name.endswith("weight"):
                        p.zero_()
                    continue
                std = 0.02 if "pos" in name else 1.0 / math.sqrt(p.shape[-1])
                p.normal_(0.0, std, generator=gen)

    @property
    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def encode(self, src, src_pad):
        if src.shape[1] > self.src_pos.num_embeddings:
            raise ValueError("input longer than the position table")
        pos = torch.arange(src.shape[1])
        x = self.embed(src) + self.src_pos(pos)
        for layer in self.encoder:
            x = layer(x, src_pad)
        return (self.enc_norm(x), src_pad)

    def decode(self, state, tgt_in):
        memory, pad = state
        if tgt_in.shape[1] > self.tgt_pos.num_embeddings:
            raise ValueError("target longer than the position table")
        pos = torch.arange(tgt_in.shape[1])
        x = self.embed(tgt_in) + self.tgt_pos(pos)
        for layer in self.decoder:
            x = layer(x, memory, pad)
        logits = self.dec_norm(x) @ self.embed.weight.T + self.out_bias
        return torch.log_softmax(logits, dim=-1)


def _check_ids(model: SequenceModel, seqs: Sequence[Sequence[int]]) -> None:
    for s in seqs:
        for t in s:
            if not 0 <= int(t) < model.vocab_size:
                raise ValueError(f"token id {t} outside vocabulary of size {model.vocab_size}")


def teacher_forced_log_probs(model: SequenceModel, inputs, targets, state=None) -> torch.Tensor:
    """Log-probabilities of each target token, shape ``(batch, max_target_len)``.

    Padded positions hold 0. ``state`` may carry a precomputed encoder state
    aligned with ``targets``.
    """
    if any(len(t) == 0 for t in targets):
        raise ValueError("targets must be non-empty")
    _check_ids(model, targets)
    if state is None:
        _check_ids(model, inputs)
        src, pad = pad_batch(inputs, model.pad_id)
        state = model.encode(src, pad)
    tgt, tgt_pad = pad_batch(targets, model.pad_id)
    tgt_in = torch.cat([torch.full((tgt.shape[0], 1), model.bos_id, dtype=torch.long), tgt[:, :-1]], dim=1)
    logp = model.decode(state, tgt_in)
    picked = logp.gather(-1, tgt.unsqueeze(-1)).squeeze(-1)
    return picked.masked_fill(tgt_pad, 0.0)


def sequence_logprob(model: SequenceModel, input_ids: Sequence[int], target_ids: Sequence[int]) -> torch.Tensor:
    """Per-step ``log p(target_t | target_<t, input)``; length ``len(target_ids)``."""
    if len(target_ids) == 0:
        raise ValueError("target must be non-empty")
    return teacher_forced_log_probs(model, [list(input_ids)], [list(target_ids)])[0]


def _decode_loop(model, inputs, max_len, pick) -> list[list[int]]:
    max_len = check_positive_int(max_len, "max_len")
    if max_len > 64:
        raise ValueError("max_len must be <= 64")
    _check_ids(model, inputs)
    with torch.no_grad():
        src, pad = pad_batch(inputs, model.pad_id)
        state = model.encode(src, pad)
        n = len(inputs)
        prefix = torch.full((n, 1), model.bos_id, dtype=torch.long)
        done = np.zeros(n, dtype=bool)
        outputs: list[list[int]] = [[] for _ in range(n)]
        for _ in range(max_len):
            logp = model.decode(state, prefix)[:, -1].double()
            chosen = pick(logp)
            for b in range(n):
                if not done[b]:
                    outputs[b].append(int(chosen[b]))
                    done[b] = chosen[b] == model.eos_id
            if done.all():
                break
            prefix = torch.cat([prefix, torch.as_tensor(chosen, dtype=torch.long)[:, None]], dim=1)
    return outputs


def greedy_decode_batch(model: SequenceModel, inputs, max_len: int = 64) -> list[list[int]]:
    # torch.argmax returns the first maximal index, i.e. the smallest token id on ties
    return _decode_loop(model, inputs, max_len, lambda logp: logp.argmax(dim=-1).numpy())


def greedy_decode(model: SequenceModel, input_ids: Sequence[int], max_len: int = 64) -> list[int]:
    """Argmax decoding; the returned ids include the final EOS when one is produced."""
    return greedy_decode_batch(model, [list(input_ids)], max_len)[0]


def sample_decode_batch(model, inputs, max_len: int = 64, temperature: float = 1.0, rng=None) -> list[list[int]]:
    temperature = check_positive_real(temperature, "temperature")
    rng = check_random_state(rng)

    def pick(logp):
        probs = torch.softmax(logp / temperature, dim=-1).numpy()
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(len(probs)) * cdf[:, -1]
        idx = np.array([np.searchsorted(c, x, side="right") for c, x in zip(cdf, u)])
        return np.minimum(idx, probs.shape[-1] - 1)

    return _decode_loop(model, inputs, max_len, pick)


def sample_decode(model, input_ids, max_len: int = 64, temperature: float = 1.0, rng=None) -> list[int]:
    """Ancestral sampling from the temperature-scaled next-token distributions."""
    return sample_decode_batch(model, [list(input_ids)], max_len, temperature, rng)[0]


def save_checkpoint(path, model: ReferenceModel, vocabulary: Sequence[str], meta: dict | None = None) -> None:
    """Write header line, JSON config line, then little-endian float32 parameters."""
    flat = model.flat_parameters().to(torch.float32).numpy().astype("<f4")
    config = {
        "architecture": model.config,
        "vocabulary": list(vocabulary),
        "n_parameters": int(flat.size),
        "meta": meta or {},
    }
    with Path(path).open("wb") as fh:
        fh.write((CKPT_MAGIC + "\n").encode())
        fh.write((json.dumps(config, sort_keys=True) + "\n").encode())
        fh.write(flat.tobytes())


def load_checkpoint(path) -> tuple[ReferenceModel, list[str], dict]:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"checkpoint not found: {path}")
    with path.open("rb") as fh:
        magic = fh.readline().decode().rstrip("\n")
        if magic != CKPT_MAGIC:
            raise IngestionError(f"{path}: not a checkpoint (header {magic!r})")
        config = json.loads(fh.readline().decode())
        flat = np.frombuffer(fh.read(), dtype="<f4")
    if flat.size != config["n_parameters"]:
        raise IngestionError(f"{path}: expected {config['n_parameters']} parameters, found {flat.size}")
    model = ReferenceModel(**config["architecture"])
    model.set_flat_parameters(torch.from_numpy(flat.astype(np.float32)))
    return model, config["vocabulary"], config["meta"]
