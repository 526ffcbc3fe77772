"""Span-level mixed contrastive learning for knowledge-grounded response generation."""

__version__ = "0.1.0"

from .corpus import KnowledgeCorpus, KnowledgeSnippet, TfIdfIndex, TfIdfRetriever, build_index, retrieve
from .desk import SeedResult, desk_ablation
from .data import DialogueExample, Tokenizer, load_dialogues
from .errors import (
    ConfigError,
    DependencyError,
    EmptyNegativePool,
    IngestionError,
    MixCLError,
    MixFailure,
    NumericalFailure,
)
from .gradcheck import GradCheckResult, finite_difference_check
from .losses import LossWeightSchedule, loss_weights, mixed_contrast_loss, mle_loss
from .metrics import MetricsReport, evaluate
from .mixup import MixedSequence, SpanMixer, mix, mix_with_fallback
from .model import ReferenceModel, SequenceModel, greedy_decode, sample_decode
from .negatives import HardNegativeMiner, NegativeSet, mine_negatives
from .spans import RuleEntityExtractor, ShallowChunker, Span
from .training import MixCLGenerator, TrainConfig

__all__ = [
    "ConfigError",
    "DependencyError",
    "DialogueExample",
    "EmptyNegativePool",
    "GradCheckResult",
    "HardNegativeMiner",
    "IngestionError",
    "KnowledgeCorpus",
    "KnowledgeSnippet",
    "LossWeightSchedule",
    "MetricsReport",
    "MixCLError",
    "MixCLGenerator",
    "MixFailure",
    "MixedSequence",
    "NegativeSet",
    "NumericalFailure",
    "ReferenceModel",
    "RuleEntityExtractor",
    "SeedResult",
    "SequenceModel",
    "ShallowChunker",
    "Span",
    "SpanMixer",
    "TfIdfIndex",
    "TfIdfRetriever",
    "Tokenizer",
    "TrainConfig",
    "build_index",
    "desk_ablation",
    "evaluate",
    "finite_difference_check",
    "greedy_decode",
    "load_dialogues",
    "loss_weights",
    "mine_negatives",
    "mix",
    "mix_with_fallback",
    "mixed_contrast_loss",
    "mle_loss",
    "retrieve",
    "sample_decode",
]
