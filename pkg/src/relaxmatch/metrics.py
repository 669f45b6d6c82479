"""Multi-label evaluation: AUROC, F1, MCC, bootstrap CIs, alignment.

AUROC follows the Mann-Whitney pair-counting convention (ties credited
0.5), computed exactly; confidence intervals use the non-parametric
percentile bootstrap with per-resample derived seeds.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from relaxmatch.corpus import Study
from relaxmatch.encoder import (
    EncoderParams,
    TextFeaturizer,
    encode_image_batch,
    encode_text_batch,
    featurize_texts,
)


class SingleClassError(ValueError):
    """AUROC requested for a label with only one class present."""


class NoAdmittedLabelsError(ValueError):
    """Every label was single-class; no macro average exists."""


class AllDegenerateError(ValueError):
    """Every bootstrap resample was degenerate."""


@dataclass
class AlignmentScores:
    """Mean image-text cosine at sentence and report granularity."""

    sentence_level: float
    report_level: float


@dataclass
class LabelMetrics:
    auroc: float  # nan when the label is single-class
    f1: float
    mcc: float
    ci_low: float | None = None
    ci_high: float | None = None


@dataclass
class EvalReport:
    """Per-label and macro metrics with optional CIs and alignment."""

    per_label: dict[str, LabelMetrics]
    macro: dict[str, float]
    ci: dict[str, tuple[float, float]] | None = None
    alignment: AlignmentScores | None = None
    skipped_labels: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict = {
            "per_label": {
                label: {
                    # NaN (single-class label) serializes as null
                    "auroc": m.auroc if math.isfinite(m.auroc) else None,
                    "f1": m.f1,
                    "mcc": m.mcc,
                    **(
                        {"ci_low": m.ci_low, "ci_high": m.ci_high}
                        if m.ci_low is not None
                        else {}
                    ),
                }
                for label, m in self.per_label.items()
            },
            "macro": dict(self.macro),
            "skipped_labels": list(self.skipped_labels),
        }
        if self.ci is not None:
            out["ci"] = {k: [lo, hi] for k, (lo, hi) in self.ci.items()}
        if self.alignment is not None:
            out["alignment"] = {
                "sentence_level": self.alignment.sentence_level,
                "report_level": self.alignment.report_level,
            }
        return out

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False)

    def write_per_label_csv(self, path: str | Path) -> None:
        """Per-label table: label, auroc, f1, mcc, ci_low, ci_high."""
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "auroc", "f1", "mcc", "ci_low", "ci_high"])
            for label, m in self.per_label.items():
                writer.writerow(
                    [
                        label,
                        _fmt(m.auroc),
                        _fmt(m.f1),
                        _fmt(m.mcc),
                        _fmt(m.ci_low),
                        _fmt(m.ci_high),
                    ]
                )


def _fmt(value: float | None) -> str:
    if value is None:
        return ""
    return repr(float(value))


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClassError("labels must contain both classes")
    diff = pos[:, None] - neg[None, :]
    wins = np.count_nonzero(diff > 0)
    ties = np.count_nonzero(diff == 0)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def macro_auroc(
    per_label_scores: Mapping[str, Sequence[float]],
    per_label_truth: Mapping[str, Sequence[int]],
) -> float:
    """Unweighted mean of per-label AUROC, skipping single-class labels."""
    values = []
    for label in per_label_scores:
        try:
            values.append(auroc(per_label_scores[label], per_label_truth[label]))
        except SingleClassError:
            warnings.warn(
                f"label {label!r} is single-class; skipped from macro AUROC",
                stacklevel=2,
            )
    if not values:
        raise NoAdmittedLabelsError("every label was single-class")
    return float(np.mean(values))


def f1_and_mcc(
    scores: Sequence[float],
    labels: Sequence[int],
    threshold: float = 0.5,
) -> tuple[float, float]:
    """Binarize at threshold (>=) and compute F1 and MCC.

    F1 is 0 when no positive exists on either side; MCC is 0 whenever a
    confusion-matrix margin vanishes (flagged with a warning when the
    ground truth itself is single-class).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    truth = labels == 1
    tp = float(np.count_nonzero(pred & truth))
    fp = float(np.count_nonzero(pred & ~truth))
    fn = float(np.count_nonzero(~pred & truth))
    tn = float(np.count_nonzero(~pred & ~truth))

    f1 = 2.0 * tp / (2.0 * tp + fp + fn) if (2.0 * tp + fp + fn) > 0 else 0.0

    if truth.all() or not truth.any():
        warnings.warn("ground truth is single-class; MCC set to 0", stacklevel=2)
        return f1, 0.0
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom > 0 else 0.0
    return f1, mcc


def bootstrap_ci(
    metric_fn: Callable[[np.ndarray, np.ndarray], float],
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[int] | np.ndarray,
    resamples: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for metric_fn(scores, labels).

    Resamples the first axis with replacement; each resample draws its
    indices from an independently derived seed, so evaluation order is
    irrelevant. Resamples on which metric_fn raises SingleClassError or
    NoAdmittedLabelsError are skipped (a warning reports the count).
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    n = scores.shape[0]
    if n == 0:
        raise ValueError("dataset must be non-empty")
    if not (0.0 < level < 1.0):
        raise ValueError("level must lie in (0, 1)")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")

    children = np.random.SeedSequence(seed).spawn(resamples)
    values = []
    skipped = 0
    for child in children:
        idx = np.random.default_rng(child).integers(0, n, size=n)
        try:
            values.append(metric_fn(scores[idx], labels[idx]))
        except (SingleClassError, NoAdmittedLabelsError):
            skipped += 1
    if not values:
        raise AllDegenerateError("every bootstrap resample was single-class")
    if skipped:
        warnings.warn(f"{skipped} degenerate bootstrap resamples skipped", stacklevel=2)
    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(values, [tail, 100.0 - tail])
    return float(low), float(high)


def alignment(
    studies: Sequence[Study],
    params: EncoderParams,
    featurizer: TextFeaturizer,
) -> AlignmentScores:
    """Mean image-report and image-sentence cosine over studies.

    Report level embeds each full report (sentences joined); sentence
    level averages the per-sentence cosines within a report first, then
    averages across studies.
    """
    if not studies:
        raise ValueError("studies must be non-empty")
    images = encode_image_batch(
        np.stack([s.image_features for s in studies]), params
    )
    report_feats = featurize_texts([s.report.joined() for s in studies], featurizer)
    report_emb = encode_text_batch(report_feats, params)
    report_level = float(np.mean(np.sum(images * report_emb, axis=1)))

    sentence_means = []
    for img, study in zip(images, studies):
        feats = featurize_texts(list(study.report.sentences), featurizer)
        emb = encode_text_batch(feats, params)
        sentence_means.append(float(np.mean(emb @ img)))
    return AlignmentScores(
        sentence_level=float(np.mean(sentence_means)),
        report_level=report_level,
    )
