"""Command-line surface: gen-corpus, train, eval, ablate.

Exit codes: 0 success, 2 invalid config/spec, 3 I/O failure, 4 numeric
failure (non-finite loss). All artifacts of a run land under --out next
to a manifest.json listing the produced files and the config hash;
timestamps appear only inside manifest meta blocks so reruns are
byte-comparable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

from relaxmatch import __version__
from relaxmatch.ablation import format_summary_csv, run_ablation
from relaxmatch.config import (
    ConfigError,
    EvalOptions,
    RunConfig,
    config_sha256,
    default_run_config_dict,
    load_run_config,
    load_synthetic_spec,
)
from relaxmatch.corpus import (
    InvalidSpecError,
    generate_synthetic_corpus,
    label_overlap_histogram,
    load_corpus_jsonl,
    save_corpus_jsonl,
    split_studies,
)
from relaxmatch.evaluation import evaluate, write_predictions_csv
from relaxmatch.trainer import (
    NonFiniteLossError,
    load_checkpoint,
    save_checkpoint,
    select_best,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _write_manifest(out_dir: Path, files: list[str], config_document: dict) -> None:
    manifest = {
        "files": sorted(files),
        "config_sha256": config_sha256(config_document),
        "meta": {"created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2), encoding="utf-8"
    )


def cmd_gen_corpus(args: argparse.Namespace) -> int:
    spec = load_synthetic_spec(args.spec)
    spec.validate()
    studies = generate_synthetic_corpus(spec)
    out = Path(args.out)
    if out.parent != Path("") and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    save_corpus_jsonl(studies, out)

    counts = {split: len(split_studies(studies, split)) for split in ("train", "valid", "test")}
    print(f"wrote {out} ({sum(counts.values())} studies)")
    print("  ".join(f"{split}: {n}" for split, n in counts.items()))
    histogram = label_overlap_histogram(studies, max_shared=5)
    print("avg other studies sharing exactly k labels:")
    for k in range(1, 6):
        print(f"  k={k}: {histogram[k]:.2f}")
    return EXIT_OK


def _effective_train_config(run_cfg: RunConfig, args: argparse.Namespace):
    cfg = run_cfg.train
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args: argparse.Namespace) -> int:
    run_cfg = load_run_config(args.config)
    cfg = _effective_train_config(run_cfg, args)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    corpus = load_corpus_jsonl(args.corpus)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(corpus, cfg, out_dir=out_dir)
    best = select_best(result.checkpoints)
    save_checkpoint(out_dir / "best.json", best, cfg, result.featurizer.vocabulary)

    config_document = dict(run_cfg.raw)
    config_document.setdefault("train", {})
    config_document["train"] = {**config_document["train"], "seed": cfg.seed}
    files = ["history.csv", "best.json"] + [
        f"checkpoints/epoch_{c.epoch}.json" for c in result.checkpoints
    ]
    _write_manifest(out_dir, files, config_document)

    print(
        json.dumps(
            {
                "best_epoch": best.epoch,
                "best_valid_macro_auroc": best.valid_score,
                "final_valid_macro_auroc": result.history[-1].valid_macro_auroc,
            }
        )
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    model_paths = [p for p in args.models.split(",") if p]
    if not model_paths:
        raise ConfigError("--models requires at least one checkpoint path")
    loaded = [load_checkpoint(p) for p in model_paths]
    vocabularies = {c.featurizer.vocabulary for c in loaded}
    if len(vocabularies) != 1:
        raise ConfigError("ensemble members must share one featurizer vocabulary")
    featurizer = loaded[0].featurizer
    models = [c.checkpoint.params for c in loaded]

    options = EvalOptions()
    if args.config is not None:
        options = load_run_config(args.config).eval
    if args.bootstrap is not None:
        options.bootstrap = args.bootstrap
    if args.threshold is not None:
        options.threshold = args.threshold

    corpus = load_corpus_jsonl(args.corpus)
    studies = split_studies(corpus, args.split)
    if not studies:
        raise ConfigError(f"corpus has no {args.split!r} studies")

    report, predictions = evaluate(
        studies,
        models,
        featurizer,
        threshold=options.threshold,
        bootstrap_resamples=options.bootstrap,
        bootstrap_level=options.bootstrap_level,
        bootstrap_seed=options.bootstrap_seed,
        inference_temperature=options.inference_temperature,
    )
    if args.predictions_csv:
        write_predictions_csv(args.predictions_csv, predictions)
    if args.per_label_csv:
        report.write_per_label_csv(args.per_label_csv)
    print(report.to_json())
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    run_cfg = load_run_config(args.config)
    cfg = run_cfg.train
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    corpus = load_corpus_jsonl(args.corpus)

    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = run_ablation(
        corpus,
        cfg,
        num_seeds=args.seeds,
        out_dir=out_dir,
        threshold=run_cfg.eval.threshold,
    )
    if out_dir is not None:
        files = ["ablation.csv", "ablation_runs.csv"]
        for sub in sorted(out_dir.rglob("*")):
            if sub.is_file() and sub.name not in ("manifest.json",):
                rel = str(sub.relative_to(out_dir))
                if rel not in files:
                    files.append(rel)
        _write_manifest(out_dir, files, run_cfg.raw)
    sys.stdout.write(format_summary_csv(result))
    return EXIT_OK


def cmd_default_config(args: argparse.Namespace) -> int:
    text = json.dumps(default_run_config_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relaxmatch",
        description="Contrastive image-text training with relaxed positive-pair "
        "similarity and random sentence sampling, at desk scale.",
    )
    parser.add_argument("--version", action="version", version=f"relaxmatch {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic JSONL corpus")
    p.add_argument("--spec", required=True, help="synthetic spec JSON (or run config)")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="train one model on a corpus")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate model(s) on a corpus split")
    p.add_argument(
        "--models", required=True, help="checkpoint path(s), comma-separated"
    )
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--bootstrap", type=int, default=None, help="bootstrap resamples")
    p.add_argument("--threshold", type=float, default=None, help="F1/MCC threshold")
    p.add_argument("--config", default=None, help="run config JSON (eval options)")
    p.add_argument("--predictions-csv", default=None, help="write prediction dump CSV")
    p.add_argument("--per-label-csv", default=None, help="write per-label metrics CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the 2x2 sampling/relaxation grid")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--seeds", type=int, required=True, help="seeds per grid cell")
    p.add_argument("--out", default=None, help="output directory for cell artifacts")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("default-config", help="print the default run config")
    p.add_argument("--out", default=None, help="write to a file instead of stdout")
    p.set_defaults(func=cmd_default_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
