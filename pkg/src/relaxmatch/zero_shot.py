"""Prompt construction and two-way softmax zero-shot classification."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from relaxmatch.encoder import (
    EncoderParams,
    TextFeaturizer,
    encode_image_batch,
    encode_text_batch,
    featurize_texts,
)

INFERENCE_TEMPERATURE_MODES = ("off", "tau")


class EmptyLabelError(ValueError):
    """Prompt construction received no labels or an empty label."""


@dataclass(frozen=True)
class PromptPair:
    """Positive/negative prompt texts for one label."""

    label: str
    positive_text: str
    negative_text: str


def build_prompts(labels: Sequence[str]) -> list[PromptPair]:
    """"{label}" / "no {label}" pairs, order preserved.

    The negative prompt lowercases the label body.
    """
    if not labels:
        raise EmptyLabelError("labels must be non-empty")
    prompts = []
    for label in labels:
        if not label.strip():
            raise EmptyLabelError("labels must be non-empty strings")
        prompts.append(
            PromptPair(
                label=label,
                positive_text=label,
                negative_text=f"no {label.lower()}",
            )
        )
    return prompts


def prompt_embeddings(
    prompts: Sequence[PromptPair],
    params: EncoderParams,
    featurizer: TextFeaturizer,
) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings of positive and negative prompt texts, shape (K, d) each."""
    pos = encode_text_batch(
        featurize_texts([p.positive_text for p in prompts], featurizer), params
    )
    neg = encode_text_batch(
        featurize_texts([p.negative_text for p in prompts], featurizer), params
    )
    return pos, neg


def classify_batch(
    images: np.ndarray,
    prompts: Sequence[PromptPair],
    params: EncoderParams,
    featurizer: TextFeaturizer,
    inference_temperature: str = "off",
) -> np.ndarray:
    """Per-label probabilities for a (B, image_dim) batch, shape (B, K).

    For each label the image's cosine to the positive and negative
    prompt embeddings enters a two-way softmax. With
    inference_temperature="tau" both similarities are divided by the
    learned temperature first; the default applies none.
    """
    if inference_temperature not in INFERENCE_TEMPERATURE_MODES:
        raise ValueError(
            f"inference_temperature must be one of {INFERENCE_TEMPERATURE_MODES}"
        )
    img = encode_image_batch(np.atleast_2d(np.asarray(images, dtype=np.float64)), params)
    pos, neg = prompt_embeddings(prompts, params, featurizer)
    s_pos = img @ pos.T
    s_neg = img @ neg.T
    if inference_temperature == "tau":
        s_pos = s_pos / params.tau
        s_neg = s_neg / params.tau
    # two-way softmax: 1 / (1 + exp(s_neg - s_pos))
    return 1.0 / (1.0 + np.exp(s_neg - s_pos))


def classify(
    image: np.ndarray,
    prompts: Sequence[PromptPair],
    params: EncoderParams,
    featurizer: TextFeaturizer,
    inference_temperature: str = "off",
) -> np.ndarray:
    """Per-label probabilities for one image, aligned with prompts."""
    return classify_batch(image, prompts, params, featurizer, inference_temperature)[0]
