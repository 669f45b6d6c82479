"""Report parsing, sentence sampling, and synthetic corpus generation.

The corpus is a list of immutable :class:`Study` records (image feature
vector + sentence-segmented report + label set). Reports arrive as free
text, possibly with section headers; only the findings/impression
content is kept, falling back to the last paragraph when no recognized
header is present.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SOURCE_FINDINGS_IMPRESSION = "findings_impression"
SOURCE_LAST_PARAGRAPH = "last_paragraph"

SPLITS = ("train", "valid", "test")

#: Tokens before a period that never terminate a sentence.
DEFAULT_ABBREVIATIONS = ("Dr", "Mr", "Mrs", "vs", "No", "e.g", "i.e")

_KEPT_SECTIONS = ("findings", "impression")

# A kept-section marker: FINDINGS/IMPRESSION with a colon anywhere, or
# bare on its own line. Other sections start at "Word(s):" line heads.
_KEEP_INLINE_RE = re.compile(r"(?i)\b(findings|impression)\b[ \t]*:")
_KEEP_BARE_RE = re.compile(r"(?im)^[ \t]*(findings|impression)[ \t]*$")
_HEADER_LINE_RE = re.compile(r"(?m)^[ \t]*([A-Za-z][A-Za-z ]{0,39}?)[ \t]*:")

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_UINT64_MAX = 2**64 - 1


class EmptyReportError(ValueError):
    """Raised when a raw report trims to the empty string."""


class NoContentError(ValueError):
    """Raised when section extraction yields zero sentences."""


class InvalidSpecError(ValueError):
    """Raised when a synthetic corpus spec violates its invariants."""


@dataclass(frozen=True)
class RawReport:
    """Free-form report text as it arrives from a corpus file."""

    id: str
    text: str


@dataclass(frozen=True)
class StructuredReport:
    """Section-extracted, sentence-segmented report."""

    id: str
    sentences: tuple[str, ...]
    source_section: str

    def __post_init__(self) -> None:
        if len(self.sentences) < 1:
            raise NoContentError(f"report {self.id!r} has no sentences")
        if any(not s.strip() for s in self.sentences):
            raise ValueError(f"report {self.id!r} contains a blank sentence")

    @property
    def num_sentences(self) -> int:
        return len(self.sentences)

    def joined(self) -> str:
        """Full report text as a single space-joined string."""
        return " ".join(self.sentences)


@dataclass(frozen=True)
class Study:
    """One corpus record: image features, report, labels, split."""

    id: str
    image_features: np.ndarray
    report: StructuredReport
    labels: frozenset[str]
    split: str

    def __post_init__(self) -> None:
        features = np.asarray(self.image_features, dtype=np.float64)
        if not np.all(np.isfinite(features)):
            raise ValueError(f"study {self.id!r} has non-finite image features")
        object.__setattr__(self, "image_features", features)
        object.__setattr__(self, "labels", frozenset(self.labels))
        if self.split not in SPLITS:
            raise ValueError(f"study {self.id!r} has unknown split {self.split!r}")


@dataclass(frozen=True)
class SamplerConfig:
    """Sentence sub-sampling settings: n sentences per draw."""

    n: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(frozen=True)
class SyntheticSpec:
    """Controls for the synthetic multi-label corpus generator."""

    num_labels: int = 8
    prototype_dim: int = 32
    label_prevalence: float = 0.3
    image_noise_sigma: float = 0.6
    sentences_per_label: int = 4
    filler_sentence_rate: float = 0.5
    corpus_sizes: tuple[int, int, int] = (2000, 200, 500)
    seed: int = 20240

    def validate(self) -> None:
        if self.num_labels < 2:
            raise InvalidSpecError("num_labels must be >= 2")
        if self.prototype_dim < 1:
            raise InvalidSpecError("prototype_dim must be >= 1")
        # 1.0 is allowed: "every label active" is a legitimate degenerate corpus.
        if not (0.0 < self.label_prevalence <= 1.0):
            raise InvalidSpecError("label_prevalence must be in (0, 1]")
        if self.image_noise_sigma < 0.0:
            raise InvalidSpecError("image_noise_sigma must be >= 0")
        if self.sentences_per_label < 1:
            raise InvalidSpecError("sentences_per_label must be >= 1")
        if not (0.0 <= self.filler_sentence_rate < 1.0):
            raise InvalidSpecError("filler_sentence_rate must be in [0, 1)")
        if len(self.corpus_sizes) != 3 or any(s < 1 for s in self.corpus_sizes):
            raise InvalidSpecError("corpus_sizes must be three counts >= 1")


def _split_sentences(text: str, abbreviations: Sequence[str]) -> list[str]:
    """Split at '.', '!' or '?' followed by whitespace.

    A '.' does not split when the whitespace-delimited token before it
    is a single letter or one of the configured abbreviations.
    """
    abbrev = set(abbreviations)
    sentences: list[str] = []
    start = 0
    for i, ch in enumerate(text):
        if ch not in ".!?":
            continue
        if i + 1 >= len(text) or not text[i + 1].isspace():
            continue
        if ch == ".":
            j = i
            while j > start and not text[j - 1].isspace():
                j -= 1
            token = text[j:i]
            if (len(token) == 1 and token.isalpha()) or token in abbrev:
                continue
        piece = text[start : i + 1].strip()
        if piece:
            sentences.append(piece)
        start = i + 1
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def _kept_section_text(text: str) -> str | None:
    """Concatenated findings/impression content, or None if no marker."""
    events: dict[int, tuple[int, bool]] = {}
    for m in _HEADER_LINE_RE.finditer(text):
        keep = m.group(1).strip().lower() in _KEPT_SECTIONS
        events[m.start()] = (m.end(), keep)
    for m in _KEEP_INLINE_RE.finditer(text):
        events.setdefault(m.start(), (m.end(), True))
    for m in _KEEP_BARE_RE.finditer(text):
        events.setdefault(m.start(), (m.end(), True))
    if not any(keep for _, keep in events.values()):
        return None
    starts = sorted(events)
    pieces = []
    for idx, s in enumerate(starts):
        end, keep = events[s]
        if not keep:
            continue
        stop = starts[idx + 1] if idx + 1 < len(starts) else len(text)
        pieces.append(text[end:stop].strip())
    return "\n".join(p for p in pieces if p)


def parse_report(
    raw: RawReport,
    abbreviations: Sequence[str] = DEFAULT_ABBREVIATIONS,
) -> StructuredReport:
    """Extract kept sections and segment them into sentences.

    When a FINDINGS or IMPRESSION header exists (case-insensitive,
    optional trailing colon), only those sections are kept; otherwise
    the last paragraph (text after the final blank line) is used.
    """
    text = raw.text.strip()
    if not text:
        raise EmptyReportError(f"report {raw.id!r} is empty")

    kept = _kept_section_text(text)
    if kept is not None:
        source = SOURCE_FINDINGS_IMPRESSION
        content = kept
    else:
        source = SOURCE_LAST_PARAGRAPH
        paragraphs = [p for p in re.split(r"\n[ \t]*\n", text) if p.strip()]
        content = paragraphs[-1] if paragraphs else ""

    sentences = _split_sentences(content, abbreviations)
    if not sentences:
        raise NoContentError(f"report {raw.id!r} yields no sentences")
    return StructuredReport(id=raw.id, sentences=tuple(sentences), source_section=source)


def sample_sentences(
    report: StructuredReport,
    cfg: SamplerConfig,
    rng: np.random.Generator,
) -> list[str]:
    """Draw min(m, n) sentences uniformly without replacement.

    The draw is re-ordered to document order. Reports with m <= n are
    returned whole; no replacement sampling ever duplicates a sentence.
    """
    m = report.num_sentences
    if m <= cfg.n:
        return list(report.sentences)
    idx = np.sort(rng.choice(m, size=cfg.n, replace=False))
    return [report.sentences[i] for i in idx]


def combination_count(m: int, n: int) -> int:
    """C(m, n) with exact integer arithmetic; 0 when n > m."""
    if m < 0 or n < 0:
        raise ValueError("m and n must be non-negative")
    if n > m:
        return 0
    result = math.comb(m, n)
    if result > _UINT64_MAX:
        raise OverflowError(f"C({m}, {n}) exceeds the 64-bit unsigned range")
    return result


def label_overlap_histogram(
    studies: Sequence[Study],
    max_shared: int,
) -> dict[int, float]:
    """Average number of other studies sharing exactly k labels, k=1..max_shared.

    Mirrors the label-combination diagnostic: for every study, count the
    other studies whose label set intersects it in exactly k labels,
    then average the counts over studies.
    """
    if not studies:
        raise ValueError("studies must be non-empty")
    if max_shared < 1:
        raise ValueError("max_shared must be >= 1")
    vocab = sorted({label for s in studies for label in s.labels})
    n = len(studies)
    if not vocab:
        return {k: 0.0 for k in range(1, max_shared + 1)}
    index = {label: i for i, label in enumerate(vocab)}
    member = np.zeros((n, len(vocab)), dtype=np.int64)
    for row, s in enumerate(studies):
        for label in s.labels:
            member[row, index[label]] = 1
    shared = member @ member.T
    np.fill_diagonal(shared, -1)
    return {
        k: float(np.count_nonzero(shared == k)) / n
        for k in range(1, max_shared + 1)
    }


# Synthetic report text. Label sentences embed the label token so that
# every active label is recoverable from the report; fillers carry no
# label token. All sentences round-trip the sentence splitter.
_QUALIFIERS = (
    "mild", "moderate", "persistent", "subtle", "marked",
    "chronic", "acute", "focal", "diffuse", "trace",
)

_FILLER_SENTENCES = (
    "No acute abnormality is identified elsewhere.",
    "The remaining structures are within normal limits.",
    "No significant interval change otherwise.",
    "Visualized osseous structures appear intact.",
    "Midline structures are preserved.",
)

_LABEL_NAMES = (
    "edema", "effusion", "atelectasis", "consolidation",
    "cardiomegaly", "pneumothorax", "opacity", "fracture",
    "emphysema", "nodule", "fibrosis", "infiltrate",
    "hernia", "scoliosis", "granuloma", "calcification",
)


def synthetic_label_names(num_labels: int) -> list[str]:
    """Label vocabulary for a synthetic corpus (single-token names)."""
    names = list(_LABEL_NAMES[:num_labels])
    names += [f"finding{i}" for i in range(len(names), num_labels)]
    return names


def _label_templates(label: str, count: int) -> list[str]:
    templates = []
    for i in range(count):
        q = _QUALIFIERS[i % len(_QUALIFIERS)]
        grade = i // len(_QUALIFIERS)
        suffix = "" if grade == 0 else f" grade {grade + 1}"
        templates.append(f"{q.capitalize()} {label}{suffix} is present.")
    return templates


def generate_synthetic_corpus(spec: SyntheticSpec) -> list[Study]:
    """Build a label-overlapping corpus with linearly recoverable labels.

    Each label owns a fixed random unit prototype; a study's image
    features are the sum of its active prototypes plus Gaussian noise.
    Its report holds one template sentence per active label, optionally
    one filler sentence, or a single filler when no label is active.
    Deterministic given spec.seed.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels = synthetic_label_names(spec.num_labels)
    templates = {lab: _label_templates(lab, spec.sentences_per_label) for lab in labels}

    prototypes = rng.standard_normal((spec.num_labels, spec.prototype_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)

    studies: list[Study] = []
    for split, count in zip(SPLITS, spec.corpus_sizes):
        for i in range(count):
            study_id = f"{split}_{i:05d}"
            active = rng.random(spec.num_labels) < spec.label_prevalence
            features = prototypes[active].sum(axis=0) if active.any() else np.zeros(
                spec.prototype_dim
            )
            if spec.image_noise_sigma > 0:
                features = features + spec.image_noise_sigma * rng.standard_normal(
                    spec.prototype_dim
                )
            sentences = [
                templates[labels[k]][rng.integers(spec.sentences_per_label)]
                for k in np.flatnonzero(active)
            ]
            if not sentences or rng.random() < spec.filler_sentence_rate:
                sentences.append(_FILLER_SENTENCES[rng.integers(len(_FILLER_SENTENCES))])
            order = rng.permutation(len(sentences))
            text = " ".join(sentences[j] for j in order)
            report = parse_report(RawReport(id=study_id, text=text))
            studies.append(
                Study(
                    id=study_id,
                    image_features=features,
                    report=report,
                    labels=frozenset(labels[k] for k in np.flatnonzero(active)),
                    split=split,
                )
            )
    return studies


def save_corpus_jsonl(studies: Iterable[Study], path: str | Path) -> None:
    """Write one study per line: id, image_features, report, labels, split.

    The report is serialized as its sentences joined with single spaces.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for s in studies:
            record = {
                "id": s.id,
                "image_features": [float(x) for x in s.image_features],
                "report": s.report.joined(),
                "labels": sorted(s.labels),
                "split": s.split,
            }
            fh.write(json.dumps(record) + "\n")


def load_corpus_jsonl(path: str | Path) -> list[Study]:
    """Read a JSONL corpus, parsing each raw report into sentences."""
    studies = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            report = parse_report(RawReport(id=record["id"], text=record["report"]))
            studies.append(
                Study(
                    id=record["id"],
                    image_features=np.asarray(record["image_features"], dtype=np.float64),
                    report=report,
                    labels=frozenset(record["labels"]),
                    split=record["split"],
                )
            )
    return studies


def split_studies(studies: Iterable[Study], split: str) -> list[Study]:
    """Studies belonging to one split."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return [s for s in studies if s.split == split]


def corpus_label_vocabulary(studies: Iterable[Study]) -> list[str]:
    """Sorted union of label ids across studies."""
    return sorted({label for s in studies for label in s.labels})
