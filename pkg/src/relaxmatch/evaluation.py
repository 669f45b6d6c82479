"""End-to-end model evaluation: zero-shot scoring to an EvalReport."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from relaxmatch.corpus import Study
from relaxmatch.encoder import EncoderParams, TextFeaturizer
from relaxmatch.metrics import (
    AllDegenerateError,
    EvalReport,
    LabelMetrics,
    SingleClassError,
    alignment,
    auroc,
    bootstrap_ci,
    f1_and_mcc,
    macro_auroc,
)
from relaxmatch.zero_shot import build_prompts, classify_batch


@dataclass
class Prediction:
    study_id: str
    label: str
    probability: float
    ground_truth: int


def predict_scores(
    studies: Sequence[Study],
    models: Sequence[EncoderParams],
    featurizer: TextFeaturizer,
    labels: Sequence[str],
    inference_temperature: str = "off",
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble probability and truth matrices, shape (n_studies, K)."""
    prompts = build_prompts(list(labels))
    images = np.stack([s.image_features for s in studies])
    probs = np.mean(
        [
            classify_batch(images, prompts, m, featurizer, inference_temperature)
            for m in models
        ],
        axis=0,
    )
    truth = np.array(
        [[1 if lab in s.labels else 0 for lab in labels] for s in studies]
    )
    return probs, truth


def evaluate(
    studies: Sequence[Study],
    models: Sequence[EncoderParams],
    featurizer: TextFeaturizer,
    labels: Sequence[str] | None = None,
    threshold: float = 0.5,
    bootstrap_resamples: int = 0,
    bootstrap_level: float = 0.95,
    bootstrap_seed: int = 0,
    inference_temperature: str = "off",
    include_alignment: bool = True,
) -> tuple[EvalReport, list[Prediction]]:
    """Score studies with one model or an ensemble and compute metrics.

    Single-class labels get NaN AUROC and are excluded from the macro
    average. With bootstrap_resamples > 0, macro metrics receive
    percentile CIs (resampling studies) and each admitted label an
    AUROC CI.
    """
    if not studies:
        raise ValueError("studies must be non-empty")
    if not models:
        raise ValueError("at least one model is required")
    if labels is None:
        labels = sorted({lab for s in studies for lab in s.labels})
    if not labels:
        raise ValueError("no labels to evaluate")

    probs, truth = predict_scores(
        studies, models, featurizer, labels, inference_temperature
    )

    per_label: dict[str, LabelMetrics] = {}
    skipped: list[str] = []
    for k, label in enumerate(labels):
        f1, mcc = f1_and_mcc(probs[:, k], truth[:, k], threshold)
        try:
            label_auroc = auroc(probs[:, k], truth[:, k])
        except SingleClassError:
            warnings.warn(f"label {label!r} is single-class; skipped from macro")
            skipped.append(label)
            per_label[label] = LabelMetrics(auroc=float("nan"), f1=f1, mcc=mcc)
            continue
        per_label[label] = LabelMetrics(auroc=label_auroc, f1=f1, mcc=mcc)

    admitted = [lab for lab in labels if lab not in skipped]
    if not admitted:
        raise ValueError("every label is single-class; nothing to evaluate")
    macro = {
        "auroc": float(np.mean([per_label[lab].auroc for lab in admitted])),
        "f1": float(np.mean([per_label[lab].f1 for lab in labels])),
        "mcc": float(np.mean([per_label[lab].mcc for lab in labels])),
    }

    ci = None
    if bootstrap_resamples > 0:
        def macro_auroc_fn(s: np.ndarray, t: np.ndarray) -> float:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return macro_auroc(
                    {lab: s[:, k] for k, lab in enumerate(labels)},
                    {lab: t[:, k] for k, lab in enumerate(labels)},
                )

        def macro_f1_fn(s: np.ndarray, t: np.ndarray) -> float:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return float(
                    np.mean(
                        [f1_and_mcc(s[:, k], t[:, k], threshold)[0] for k in range(len(labels))]
                    )
                )

        def macro_mcc_fn(s: np.ndarray, t: np.ndarray) -> float:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                return float(
                    np.mean(
                        [f1_and_mcc(s[:, k], t[:, k], threshold)[1] for k in range(len(labels))]
                    )
                )

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ci = {
                "auroc": bootstrap_ci(
                    macro_auroc_fn, probs, truth, bootstrap_resamples,
                    bootstrap_level, bootstrap_seed,
                ),
                "f1": bootstrap_ci(
                    macro_f1_fn, probs, truth, bootstrap_resamples,
                    bootstrap_level, bootstrap_seed,
                ),
                "mcc": bootstrap_ci(
                    macro_mcc_fn, probs, truth, bootstrap_resamples,
                    bootstrap_level, bootstrap_seed,
                ),
            }
            for k, label in enumerate(labels):
                if label in skipped:
                    continue
                try:
                    low, high = bootstrap_ci(
                        auroc, probs[:, k], truth[:, k], bootstrap_resamples,
                        bootstrap_level, bootstrap_seed,
                    )
                except AllDegenerateError:
                    continue
                per_label[label].ci_low = low
                per_label[label].ci_high = high

    align = None
    if include_alignment:
        # alignment is a property of one embedding space; report it for
        # the first model (ensembles average probabilities, not spaces).
        align = alignment(studies, models[0], featurizer)

    report = EvalReport(
        per_label=per_label,
        macro=macro,
        ci=ci,
        alignment=align,
        skipped_labels=skipped,
    )
    predictions = [
        Prediction(
            study_id=s.id,
            label=lab,
            probability=float(probs[i, k]),
            ground_truth=int(truth[i, k]),
        )
        for i, s in enumerate(studies)
        for k, lab in enumerate(labels)
    ]
    return report, predictions


def write_predictions_csv(path: str | Path, predictions: Sequence[Prediction]) -> None:
    """Prediction dump: study_id, label, probability, ground_truth."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["study_id", "label", "probability", "ground_truth"])
        for p in predictions:
            writer.writerow([p.study_id, p.label, repr(p.probability), p.ground_truth])
