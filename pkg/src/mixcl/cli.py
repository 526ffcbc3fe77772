"""Command-line entry point: ``mixcl <command> [flags]``.

Exit codes: 0 success, 1 other failure, 2 config/input error,
3 missing upstream artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import DialogueStats, parse_dialogue
from .errors import ConfigError, IngestionError, MixCLError, MixFailure
from .pipeline import (
    STAGES,
    PipelineConfig,
    read_config_file,
    run_ablation_matrix,
    run_pipeline,
    stage_eval,
)

# CLI flag (argparse dest) -> config key
FLAG_KEYS = {
    "corpus": "corpus",
    "dialogues": "dialogues",
    "eval_dialogues": "eval_dialogues",
    "validation": "validation",
    "index": "index",
    "negatives": "negatives",
    "checkpoint": "checkpoint",
    "log": "log",
    "pred": "predictions",
    "report": "report",
    "stopwords": "stopwords",
    "gazetteer": "gazetteer",
    "seed": "seed",
    "m": "M",
    "beta_neg": "beta_neg",
    "pool": "pool",
}


def _pipeline_config(args, **extra) -> PipelineConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    base_dir = Path(args.config).parent if getattr(args, "config", None) else None
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            values[key] = str(Path(value).resolve()) if key in ("corpus", "dialogues", "eval_dialogues", "validation", "index", "negatives", "checkpoint", "log", "predictions", "report", "stopwords", "gazetteer") else value
    values.update({k: v for k, v in extra.items() if v is not None})
    return PipelineConfig.from_dict(values, base_dir=base_dir)


def cmd_index(args) -> int:
    cfg = _pipeline_config(args, index=str(Path(args.out).resolve()))
    path = run_pipeline(cfg, ["index"])["index"]
    print(f"index written to {path}")
    return 0


def cmd_mine(args) -> int:
    extra = {"negatives": str(Path(args.out).resolve())}
    if args.model:
        extra.update(checkpoint=str(Path(args.model).resolve()), mine_model=True)
    cfg = _pipeline_config(args, **extra)
    path = run_pipeline(cfg, ["mine"])["mine"]
    print(f"negatives written to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _pipeline_config(args, checkpoint=str(Path(args.out).resolve()))
    path = run_pipeline(cfg, ["train"])["train"]
    print(f"checkpoint written to {path}")
    return 0


def cmd_decode(args) -> int:
    cfg = _pipeline_config(args, predictions=str(Path(args.out).resolve()))
    path = run_pipeline(cfg, ["decode"])["decode"]
    print(f"predictions written to {path}")
    return 0


def cmd_eval(args) -> int:
    cfg = _pipeline_config(args)
    _, report = stage_eval(cfg)
    print(report.as_table())
    return 0


def cmd_run(args) -> int:
    cfg = _pipeline_config(args)
    stages = args.stages.split(",") if args.stages else list(STAGES)
    for stage, path in run_pipeline(cfg, [s.strip() for s in stages]).items():
        print(f"{stage}\t{path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _pipeline_config(args)
    variants = [v.strip() for v in (args.variants or "").split(",") if v.strip()]
    table = run_ablation_matrix(cfg, [v.split("+") if "+" in v else v for v in variants], args.work_dir)
    print(table.render())
    return 0


def _extractor(kind: str, gazetteer_path):
    from .spans import RuleEntityExtractor, ShallowChunker, load_gazetteer

    if kind == "entity":
        return RuleEntityExtractor(gazetteer=load_gazetteer(gazetteer_path) if gazetteer_path else None)
    return ShallowChunker()


def cmd_spans(args) -> int:
    for span in _extractor(args.kind, args.gazetteer).extract(args.text):
        print(f"{span.start}\t{span.end}\t{span.label}\t{span.text}")
    return 0


def cmd_preview_mix(args) -> int:
    from .mixup import mix, mix_with_fallback

    extractors = {k: _extractor(k, args.gazetteer) for k in ("entity", "constituent")}
    if args.strategy == "auto":
        mixed = mix_with_fallback(args.pos, args.neg, args.beta_span, extractors, rng=args.seed)
    else:
        try:
            mixed = mix(args.pos, args.neg, args.strategy, extractors, rng=args.seed)
        except MixFailure as exc:
            print(f"no mix: {exc}", file=sys.stderr)
            return 1
    print(mixed.render())
    print("signs\t" + " ".join(str(s) for s in mixed.signs))
    print(f"strategy\t{mixed.replaced.strategy}")
    return 0


def cmd_synth(args) -> int:
    from .synth import synthesize, write_synthetic

    data = synthesize(args.entities, args.dialogues, args.test_fraction, args.seed)
    paths = write_synthetic(data, args.out)
    cfg_path = Path(args.out) / "pipeline.cfg"
    cfg_path.write_text(
        "\n".join(
            [
                "# desk-scale pipeline on the synthetic corpus",
                "corpus = corpus.jsonl",
                "dialogues = train.jsonl",
                "eval_dialogues = test.jsonl",
                "gazetteer = gazetteer.tsv",
                "index = index.idx",
                "negatives = negatives.jsonl",
                "checkpoint = model.ckpt",
                "predictions = predictions.jsonl",
                "report = report.json",
                f"seed = {args.seed}",
                "",
            ]
        ),
        encoding="utf-8",
    )
    for name, path in {**paths, "config": cfg_path}.items():
        print(f"{name}\t{path}")
    return 0


def cmd_validate_data(args) -> int:
    path = Path(args.dialogues)
    if not path.is_file():
        raise IngestionError(f"dialogue file not found: {path}")
    stats = DialogueStats()
    problems = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                parse_dialogue(json.loads(line), where, stats.dialogues, stats)
            except json.JSONDecodeError as exc:
                problems.append(f"{where}: malformed record ({exc.msg})")
            except IngestionError as exc:
                problems.append(str(exc))
    for p in problems:
        print(p)
    print(f"dialogues\t{stats.dialogues}\nturns\t{stats.turns}\texamples\t{stats.examples}\tskipped\t{stats.skipped}")
    print(f"violations\t{len(problems)}")
    return 2 if problems else 0


def cmd_label_report(args) -> int:
    from .metrics import read_labels, taxonomy_report

    print(taxonomy_report(read_labels(args.labels)).as_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    parser = argparse.ArgumentParser(prog="mixcl", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="build the TF-IDF index")
    p.add_argument("--corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--stopwords")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("mine", parents=[common], help="mine hard negatives into a sidecar file")
    p.add_argument("--dialogues")
    p.add_argument("--index")
    p.add_argument("--out", required=True)
    p.add_argument("--beta-neg", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--pool", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--model", help="checkpoint for model-generated negatives")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("train", parents=[common], help="train with the joint objective")
    for flag in ("--dialogues", "--corpus", "--negatives", "--index", "--validation", "--log"):
        p.add_argument(flag)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", parents=[common], help="greedy-decode responses")
    p.add_argument("--checkpoint")
    p.add_argument("--dialogues", dest="eval_dialogues")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", parents=[common], help="score predictions")
    p.add_argument("--pred")
    p.add_argument("--dialogues", dest="eval_dialogues")
    p.add_argument("--report")
    p.add_argument("--gazetteer")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", parents=[common], help="run several pipeline stages")
    p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", parents=[common], help="train/evaluate ablation variants")
    p.add_argument("--variants", required=True, help="comma-separated flags; join with + to combine")
    p.add_argument("--work-dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("preview-mix", parents=[common], help="show one mixed sequence")
    p.add_argument("--pos", required=True)
    p.add_argument("--neg", required=True)
    p.add_argument("--strategy", choices=("entity", "constituent", "auto"), default="auto")
    p.add_argument("--beta-span", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gazetteer")
    p.set_defaults(func=cmd_preview_mix)

    p = sub.add_parser("spans", parents=[common], help="print extracted spans")
    p.add_argument("--text", required=True)
    p.add_argument("--kind", choices=("entity", "constituent"), default="entity")
    p.add_argument("--gazetteer")
    p.set_defaults(func=cmd_spans)

    p = sub.add_parser("synth", parents=[common], help="write the synthetic desk-scale corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=50)
    p.add_argument("--dialogues", type=int, default=500)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate-data", parents=[common], help="check a dialogue file")
    p.add_argument("--dialogues", required=True)
    p.set_defaults(func=cmd_validate_data)

    p = sub.add_parser("label-report", parents=[common], help="aggregate hallucination labels")
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_label_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MixCLError as exc:
        print(f"mixcl {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"mixcl {args.command}: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
