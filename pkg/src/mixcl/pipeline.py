"""End-to-end orchestration: index -> mine -> train -> decode -> eval, plus the ablation matrix."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .corpus import build_index, ingest_corpus, load_index, load_stopwords, save_index
from .data import Tokenizer, load_dialogues
from .errors import ConfigError, DependencyError, IngestionError, MixCLError
from .metrics import MetricsReport, evaluate
from .model import load_checkpoint, save_checkpoint
from .negatives import mine_negatives, read_negatives, write_negatives
from .spans import RuleEntityExtractor, load_gazetteer
from .training import ABLATION_FLAGS, TrainConfig, build_model, fit_tokenizer, predict_responses, train

STAGES = ("index", "mine", "train", "decode", "eval")
PATH_KEYS = (
    "corpus", "dialogues", "eval_dialogues", "validation", "index", "negatives",
    "checkpoint", "log", "predictions", "report", "stopwords", "gazetteer",
)
SEED_ENV = "MIXCL_SEED"


# --- config file ---------------------------------------------------------------


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    if "," in raw:
        return tuple(_parse_value(p) for p in raw.split(","))
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def read_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; commas make tuples."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = _parse_value(value)
    return out


@dataclass
class PipelineConfig:
    """Paths, seed and the training configuration, from one flat key-value surface."""

    paths: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 13
    mine_model: bool = False

    @classmethod
    def from_dict(cls, values: dict, base_dir=None) -> "PipelineConfig":
        values = dict(values)
        train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
        paths, train_kw = {}, {}
        seed = values.pop("seed", 13)
        mine_model = bool(values.pop("mine_model", False))
        for key, value in values.items():
            if key in PATH_KEYS:
                if value is not None:
                    p = Path(str(value))
                    paths[key] = str(p if p.is_absolute() or base_dir is None else Path(base_dir) / p)
            elif key in train_fields:
                train_kw[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        env_seed = os.environ.get(SEED_ENV)
        if env_seed is not None:
            try:
                seed = int(env_seed)
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from None
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError(f"seed must be an integer, got {seed!r}")
        train_kw["seed"] = seed
        return cls(paths=paths, train=TrainConfig(**train_kw), seed=seed, mine_model=mine_model)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        values = read_config_file(path)
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(values, base_dir=Path(path).parent)

    def to_dict(self) -> dict:
        return {"paths": dict(sorted(self.paths.items())), "train": self.train.to_dict(), "seed": self.seed, "mine_model": self.mine_model}

    def config_hash(self) -> str:
        # file names only, so a relocated workspace keeps its provenance
        d = self.to_dict()
        d["paths"] = {k: Path(v).name for k, v in d["paths"].items()}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self, stage: str) -> dict:
        return {"tool": "mixcl", "version": __version__, "stage": stage, "seed": self.seed, "config_hash": self.config_hash()}

    def path(self, key: str, stage: str) -> Path:
        if key not in self.paths:
            raise ConfigError(f"stage '{stage}' needs the '{key}' path")
        return Path(self.paths[key])

    def with_train(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, **changes))


def _require(path: Path, stage: str, producer: str | None) -> Path:
    if not path.is_file():
        hint = f"; run the '{producer}' stage first" if producer else ""
        raise DependencyError(f"stage '{stage}' needs {path}{hint}")
    return path


# --- stages ----------------------------------------------------------------------


def stage_index(cfg: PipelineConfig) -> Path:
    corpus = ingest_corpus(_require(cfg.path("corpus", "index"), "index", None))
    stopwords = load_stopwords(cfg.paths["stopwords"]) if "stopwords" in cfg.paths else None
    out = cfg.path("index", "index")
    save_index(build_index(corpus, stopwords=stopwords), out, cfg.provenance("index"))
    return out


def stage_mine(cfg: PipelineConfig) -> Path:
    index = load_index(_require(cfg.path("index", "mine"), "mine", "index"))
    examples = load_dialogues(_require(cfg.path("dialogues", "mine"), "mine", None))
    model = tokenizer = None
    if cfg.mine_model:
        model, vocab, _ = load_checkpoint(_require(cfg.path("checkpoint", "mine"), "mine", "train"))
        tokenizer = Tokenizer.from_vocabulary(vocab)
    t = cfg.train
    sets = mine_negatives(
        examples, index, M=t.M, beta_neg=t.beta_neg, seed=cfg.seed, pool=t.pool,
        model=model, tokenizer=tokenizer, n_samples=t.n_samples, context_mode=t.context_mode,
    )
    out = cfg.path("negatives", "mine")
    write_negatives(sets, out, cfg.provenance("mine"))
    return out


def stage_train(cfg: PipelineConfig) -> Path:
    t = cfg.train
    examples = load_dialogues(_require(cfg.path("dialogues", "train"), "train", None))
    corpus = ingest_corpus(_require(cfg.path("corpus", "train"), "train", None))
    negatives = index = None
    if t.use_mcl and not t.random_negatives:
        negatives = read_negatives(_require(cfg.path("negatives", "train"), "train", "mine"))
    if t.use_model_negatives and "index" in cfg.paths:
        index = load_index(_require(cfg.path("index", "train"), "train", "index"))
    validation = load_dialogues(cfg.paths["validation"]) if "validation" in cfg.paths else None
    tokenizer = fit_tokenizer(examples, corpus, t.max_vocab)
    model = build_model(tokenizer, t)
    log_path = Path(cfg.paths.get("log", str(cfg.path("checkpoint", "train")) + ".log"))
    with log_path.open("w", encoding="utf-8") as log:
        log.write(json.dumps({"provenance": cfg.provenance("train")}, sort_keys=True) + "\n")
        train(model, tokenizer, examples, t, corpus=corpus, negatives=negatives, index=index, validation=validation, log=log)
    out = cfg.path("checkpoint", "train")
    meta = {
        "provenance": cfg.provenance("train"),
        "optimizer": {"name": "AdamW", "learning_rate": t.learning_rate, "weight_decay": 0.0, "clip_norm": t.clip_norm},
        "train_config": t.to_dict(),
    }
    save_checkpoint(out, model, tokenizer.inverse_, meta)
    return out


def write_predictions(predictions: Sequence[tuple[str, str]], path, provenance: dict) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"provenance": provenance}, sort_keys=True) + "\n")
        for example_id, text in predictions:
            fh.write(json.dumps({"example_id": example_id, "text": text}, ensure_ascii=False) + "\n")


def read_predictions(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"predictions file not found: {path}")
    out = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                if "provenance" in rec:
                    continue
                out[str(rec["example_id"])] = str(rec["text"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestionError(f"{path}:{lineno}: bad prediction record ({exc})") from None
    return out


def _eval_dialogues(cfg: PipelineConfig, stage: str) -> Path:
    key = "eval_dialogues" if "eval_dialogues" in cfg.paths else "dialogues"
    return _require(cfg.path(key, stage), stage, None)


def stage_decode(cfg: PipelineConfig) -> Path:
    model, vocab, _ = load_checkpoint(_require(cfg.path("checkpoint", "decode"), "decode", "train"))
    tokenizer = Tokenizer.from_vocabulary(vocab)
    examples = load_dialogues(_eval_dialogues(cfg, "decode"))
    preds = predict_responses(model, tokenizer, examples)
    out = cfg.path("predictions", "decode")
    write_predictions([(ex.id, p) for ex, p in zip(examples, preds)], out, cfg.provenance("decode"))
    return out


def entity_extractor(cfg: PipelineConfig) -> RuleEntityExtractor:
    gaz = load_gazetteer(cfg.paths["gazetteer"]) if "gazetteer" in cfg.paths else None
    return RuleEntityExtractor(gazetteer=gaz)


def stage_eval(cfg: PipelineConfig) -> tuple[Path, MetricsReport]:
    preds = read_predictions(_require(cfg.path("predictions", "eval"), "eval", "decode"))
    examples = load_dialogues(_eval_dialogues(cfg, "eval"))
    report = evaluate(preds, examples, entity_extractor(cfg))
    out = cfg.path("report", "eval")
    write_report(report, out, cfg.provenance("eval"))
    return out, report


def write_report(report: MetricsReport, path, provenance: dict) -> None:
    path = Path(path)
    path.write_text(json.dumps({"provenance": provenance, **report.as_record()}, sort_keys=True) + "\n", encoding="utf-8")
    path.with_suffix(path.suffix + ".txt").write_text(report.as_table() + "\n", encoding="utf-8")


STAGE_FUNCS = {"index": stage_index, "mine": stage_mine, "train": stage_train, "decode": stage_decode, "eval": stage_eval}


def run_pipeline(cfg: PipelineConfig, stages: Iterable[str] = STAGES) -> dict[str, Path]:
    """Run the requested stages in canonical order; each reads its inputs from disk."""
    stages = set(stages)
    unknown = stages - set(STAGES)
    if unknown:
        raise ConfigError(f"unknown stages {sorted(unknown)}; choose from {list(STAGES)}")
    if not stages:
        raise ConfigError("no stage selected")
    out = {}
    for stage in STAGES:
        if stage in stages:
            result = STAGE_FUNCS[stage](cfg)
            out[stage] = result[0] if isinstance(result, tuple) else result
    return out


# --- ablation matrix -------------------------------------------------------------------

VARIANT_LABELS = {
    "disable_mcl": "-w/o L_MCL",
    "disable_lm": "-w/o L_LM",
    "random_negatives": "-w/o hard negatives",
    "disable_model_negatives": "-w/o model negatives",
    "mle_only": "-Only L_MLE",
}


@dataclass
class AblationRow:
    variant: str
    report: MetricsReport | None
    error: str | None = None


@dataclass
class AblationTable:
    base: MetricsReport
    rows: list[AblationRow]

    def deltas(self, row: AblationRow) -> dict[str, float] | None:
        if row.report is None:
            return None
        b, r = self.base.as_record(), row.report.as_record()
        return {k: round(r[k] - b[k], 1) for k in ("f1", "bleu4", "kf1")}

    def render(self) -> str:
        b = self.base.as_record()
        lines = [f"{'model':<24}{'F1':>8}{'B4':>8}{'KF1':>8}", f"{'Base model':<24}{b['f1']:>8.1f}{b['bleu4']:>8.1f}{b['kf1']:>8.1f}"]
        for row in self.rows:
            label = VARIANT_LABELS.get(row.variant, row.variant)
            d = self.deltas(row)
            if d is None:
                lines.append(f"{label:<24}{'failed':>8}{'failed':>8}{'failed':>8}  ({row.error})")
            else:
                lines.append(f"{label:<24}" + "".join(f"{d[k]:>+8.1f}" for k in ("f1", "bleu4", "kf1")))
        return "\n".join(lines)


def _variant_flags(variant) -> dict:
    names = [variant] if isinstance(variant, str) else list(variant)
    bad = [n for n in names if n not in ABLATION_FLAGS]
    if bad:
        raise ConfigError(f"unknown ablation flags {bad}; choose from {list(ABLATION_FLAGS)}")
    return {n: True for n in names}


def _train_and_eval(cfg: PipelineConfig, work: Path, name: str) -> MetricsReport:
    paths = dict(cfg.paths)
    paths.update(
        checkpoint=str(work / f"{name}.ckpt"),
        log=str(work / f"{name}.log"),
        predictions=str(work / f"{name}.pred.jsonl"),
        report=str(work / f"{name}.report.json"),
    )
    run_cfg = dataclasses.replace(cfg, paths=paths)
    run_pipeline(run_cfg, ("train", "decode"))
    return stage_eval(run_cfg)[1]


def run_ablation_matrix(cfg: PipelineConfig, variants: Sequence, work_dir=None) -> AblationTable:
    """Train and evaluate the base model and every variant with the shared seed."""
    if not variants:
        raise ConfigError("at least one ablation variant is required")
    flags = [(v if isinstance(v, str) else "+".join(v), _variant_flags(v)) for v in variants]
    if cfg.train.use_mcl:
        _require(cfg.path("negatives", "ablate"), "ablate", "mine")
    work = Path(work_dir or Path(cfg.path("checkpoint", "ablate")).parent / "ablation")
    work.mkdir(parents=True, exist_ok=True)
    base = _train_and_eval(cfg, work, "base")
    rows = []
    for name, changes in flags:
        try:
            rows.append(AblationRow(name, _train_and_eval(cfg.with_train(**changes), work, name)))
        except (MixCLError, ValueError, RuntimeError) as exc:
            rows.append(AblationRow(name, None, f"{type(exc).__name__}: {exc}"))
    return AblationTable(base, rows)
