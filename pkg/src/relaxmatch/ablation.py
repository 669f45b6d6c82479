"""2x2 ablation grid: {sampling off/on} x {relaxation off/on} x seeds."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from relaxmatch.corpus import Study, corpus_label_vocabulary, split_studies
from relaxmatch.evaluation import evaluate
from relaxmatch.metrics import AlignmentScores
from relaxmatch.relaxed_loss import SimConfig
from relaxmatch.trainer import TrainConfig, select_best, train

log = logging.getLogger(__name__)

GRID = (
    ("off", "off"),
    ("off", "on"),
    ("on", "off"),
    ("on", "on"),
)


@dataclass
class CellRun:
    """One (configuration, seed) training run evaluated on the test split."""

    sampling: str
    relaxation: str
    seed: int
    macro_auroc: float
    per_label_auroc: dict[str, float]
    alignment: AlignmentScores | None
    best_epoch: int


@dataclass
class AblationResult:
    labels: list[str]
    runs: list[CellRun]

    def cell_runs(self, sampling: str, relaxation: str) -> list[CellRun]:
        return [
            r for r in self.runs if r.sampling == sampling and r.relaxation == relaxation
        ]

    def macro_mean_std(self, sampling: str, relaxation: str) -> tuple[float, float]:
        values = [r.macro_auroc for r in self.cell_runs(sampling, relaxation)]
        finite = [v for v in values if np.isfinite(v)]
        if not finite:
            return float("nan"), float("nan")
        return float(np.mean(finite)), float(np.std(finite))


def _cell_config(base: TrainConfig, sampling: str, relaxation: str, seed: int) -> TrainConfig:
    sim = SimConfig(t=base.sim.t, alpha=base.sim.alpha, enabled=relaxation == "on")
    return dataclasses.replace(
        base, sim=sim, sampling_enabled=sampling == "on", seed=seed
    )


def run_ablation(
    corpus: Sequence[Study],
    base_cfg: TrainConfig,
    num_seeds: int,
    out_dir: str | Path | None = None,
    eval_split: str = "test",
    threshold: float = 0.5,
) -> AblationResult:
    """Train and evaluate every grid cell for seeds base_seed..base_seed+k-1.

    A failed cell is recorded with NaN metrics and logged; the rest of
    the grid still runs. Cell artifacts land in
    <out_dir>/<sampling>_<relaxation>/seed_<s>/ when out_dir is given.
    """
    if num_seeds < 1:
        raise ValueError("num_seeds must be >= 1")
    eval_studies = split_studies(corpus, eval_split)
    if not eval_studies:
        raise ValueError(f"corpus has no {eval_split!r} studies")
    labels = corpus_label_vocabulary(eval_studies)
    out_path = Path(out_dir) if out_dir is not None else None

    runs: list[CellRun] = []
    for sampling, relaxation in GRID:
        for offset in range(num_seeds):
            seed = base_cfg.seed + offset
            cfg = _cell_config(base_cfg, sampling, relaxation, seed)
            cell_dir = None
            if out_path is not None:
                cell_dir = out_path / f"sampling_{sampling}_relax_{relaxation}" / f"seed_{seed}"
                cell_dir.mkdir(parents=True, exist_ok=True)
            try:
                result = train(corpus, cfg, out_dir=cell_dir)
                best = select_best(result.checkpoints)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    report, _ = evaluate(
                        eval_studies,
                        [best.params],
                        result.featurizer,
                        labels=labels,
                        threshold=threshold,
                    )
                runs.append(
                    CellRun(
                        sampling=sampling,
                        relaxation=relaxation,
                        seed=seed,
                        macro_auroc=report.macro["auroc"],
                        per_label_auroc={
                            lab: report.per_label[lab].auroc for lab in labels
                        },
                        alignment=report.alignment,
                        best_epoch=best.epoch,
                    )
                )
            except Exception:
                log.exception(
                    "ablation cell failed: sampling=%s relaxation=%s seed=%d",
                    sampling, relaxation, seed,
                )
                runs.append(
                    CellRun(
                        sampling=sampling,
                        relaxation=relaxation,
                        seed=seed,
                        macro_auroc=float("nan"),
                        per_label_auroc={lab: float("nan") for lab in labels},
                        alignment=None,
                        best_epoch=-1,
                    )
                )

    result = AblationResult(labels=labels, runs=runs)
    if out_path is not None:
        (out_path / "ablation.csv").write_text(format_summary_csv(result), encoding="utf-8")
        (out_path / "ablation_runs.csv").write_text(format_runs_csv(result), encoding="utf-8")
    return result


def _mean_std(values: list[float]) -> str:
    finite = [v for v in values if np.isfinite(v)]
    if not finite:
        return "nan"
    return f"{np.mean(finite):.4f}±{np.std(finite):.4f}"


def format_summary_csv(result: AblationResult) -> str:
    """Grid summary: one row per configuration, mean±std columns."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["sampling", "relaxation", *result.labels, "macro_auroc"]
    )
    for sampling, relaxation in GRID:
        runs = result.cell_runs(sampling, relaxation)
        row = [sampling, relaxation]
        for lab in result.labels:
            row.append(_mean_std([r.per_label_auroc[lab] for r in runs]))
        row.append(_mean_std([r.macro_auroc for r in runs]))
        writer.writerow(row)
    return buf.getvalue()


def format_runs_csv(result: AblationResult) -> str:
    """Long-form per-run values (machine-readable floats)."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        [
            "sampling", "relaxation", "seed", "best_epoch", "macro_auroc",
            "sentence_alignment", "report_alignment", *result.labels,
        ]
    )
    for r in result.runs:
        writer.writerow(
            [
                r.sampling,
                r.relaxation,
                r.seed,
                r.best_epoch,
                repr(r.macro_auroc),
                repr(r.alignment.sentence_level) if r.alignment else "nan",
                repr(r.alignment.report_level) if r.alignment else "nan",
                *[repr(r.per_label_auroc[lab]) for lab in result.labels],
            ]
        )
    return buf.getvalue()
