"""Trainable image/text encoders mapping onto a shared unit hypersphere.

Both encoders are affine maps followed by L2 normalization; the text
side consumes bag-of-tokens features from a fixed vocabulary. Small by
design: the training dynamics of interest live in the loss geometry,
not the backbone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from relaxmatch.corpus import Study

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass
class EncoderParams:
    """Affine weights for both encoders plus the learnable temperature.

    tau = exp(log_temperature) keeps the temperature positive under
    unconstrained gradient updates.
    """

    image_weights: np.ndarray  # (d, image_dim)
    image_bias: np.ndarray  # (d,)
    text_weights: np.ndarray  # (d, text_dim)
    text_bias: np.ndarray  # (d,)
    log_temperature: float

    def __post_init__(self) -> None:
        self.image_weights = np.asarray(self.image_weights, dtype=np.float64)
        self.image_bias = np.asarray(self.image_bias, dtype=np.float64)
        self.text_weights = np.asarray(self.text_weights, dtype=np.float64)
        self.text_bias = np.asarray(self.text_bias, dtype=np.float64)
        self.log_temperature = float(self.log_temperature)
        for name in ("image_weights", "image_bias", "text_weights", "text_bias"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")
        if not np.isfinite(self.log_temperature):
            raise ValueError("log_temperature must be finite")

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_temperature))

    @property
    def embed_dim(self) -> int:
        return self.image_weights.shape[0]

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            image_weights=self.image_weights.copy(),
            image_bias=self.image_bias.copy(),
            text_weights=self.text_weights.copy(),
            text_bias=self.text_bias.copy(),
            log_temperature=self.log_temperature,
        )


@dataclass
class TextFeaturizer:
    """Bag-of-tokens featurizer with L2-normalized counts."""

    vocabulary: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.vocabulary = tuple(self.vocabulary)
        if not self.vocabulary:
            raise ValueError("vocabulary must be non-empty")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ValueError("vocabulary tokens must be unique")
        self._index = {tok: i for i, tok in enumerate(self.vocabulary)}

    @property
    def dim(self) -> int:
        return len(self.vocabulary)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


def featurize_text(text: str, featurizer: TextFeaturizer) -> np.ndarray:
    """L2-normalized in-vocabulary token counts (zero vector if none match)."""
    counts = np.zeros(featurizer.dim, dtype=np.float64)
    index = featurizer._index
    for token in tokenize(text):
        i = index.get(token)
        if i is not None:
            counts[i] += 1.0
    norm = np.linalg.norm(counts)
    if norm > 0:
        counts /= norm
    return counts


def featurize_texts(texts: Sequence[str], featurizer: TextFeaturizer) -> np.ndarray:
    """Stacked featurize_text over a batch, shape (len(texts), dim)."""
    out = np.zeros((len(texts), featurizer.dim), dtype=np.float64)
    for row, text in enumerate(texts):
        out[row] = featurize_text(text, featurizer)
    return out


def build_featurizer(
    studies: Iterable[Study],
    extra_tokens: Iterable[str] = (),
) -> TextFeaturizer:
    """Featurizer whose vocabulary covers the studies' reports.

    extra_tokens admits tokens the reports may not contain (e.g. the
    "no" of negative prompts, or label names for prompt encoding).
    """
    tokens: set[str] = set()
    for study in studies:
        for sentence in study.report.sentences:
            tokens.update(tokenize(sentence))
    for extra in extra_tokens:
        tokens.update(tokenize(extra))
    if not tokens:
        raise ValueError("no tokens found to build a vocabulary")
    return TextFeaturizer(vocabulary=tuple(sorted(tokens)))


def affine_unit_forward(
    features: np.ndarray, weights: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Affine map + row-wise L2 normalization for a (B, in_dim) batch.

    Returns (unit outputs, pre-normalization activations, row norms).
    Zero pre-activations fall back to the first basis vector so the
    output is always well-defined.
    """
    pre = features @ weights.T + bias
    norms = np.linalg.norm(pre, axis=1)
    out = np.zeros_like(pre)
    nonzero = norms > 0
    out[nonzero] = pre[nonzero] / norms[nonzero, None]
    out[~nonzero, 0] = 1.0
    return out, pre, norms


def affine_unit_backward(
    features: np.ndarray,
    out: np.ndarray,
    norms: np.ndarray,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop grad_out through normalization + affine.

    Returns (grad_weights, grad_bias). Rows that hit the zero-vector
    fallback are constant in the parameters and contribute nothing.
    """
    grad_pre = np.zeros_like(grad_out)
    nonzero = norms > 0
    if np.any(nonzero):
        g = grad_out[nonzero]
        y = out[nonzero]
        grad_pre[nonzero] = (g - (g * y).sum(axis=1, keepdims=True) * y) / norms[
            nonzero, None
        ]
    return grad_pre.T @ features, grad_pre.sum(axis=0)


def encode_image_batch(features: np.ndarray, params: EncoderParams) -> np.ndarray:
    out, _, _ = affine_unit_forward(
        np.atleast_2d(features), params.image_weights, params.image_bias
    )
    return out


def encode_text_batch(features: np.ndarray, params: EncoderParams) -> np.ndarray:
    out, _, _ = affine_unit_forward(
        np.atleast_2d(features), params.text_weights, params.text_bias
    )
    return out


def encode_image(features: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Unit-norm image embedding of one feature vector."""
    return encode_image_batch(np.asarray(features, dtype=np.float64), params)[0]


def encode_text(features: np.ndarray, params: EncoderParams) -> np.ndarray:
    """Unit-norm text embedding of one feature vector."""
    return encode_text_batch(np.asarray(features, dtype=np.float64), params)[0]


def init_encoder_params(
    embed_dim: int,
    image_dim: int,
    text_dim: int,
    rng: np.random.Generator,
    init_temperature: float = 0.07,
) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    img_scale = 1.0 / np.sqrt(image_dim)
    txt_scale = 1.0 / np.sqrt(text_dim)
    return EncoderParams(
        image_weights=rng.uniform(-img_scale, img_scale, size=(embed_dim, image_dim)),
        image_bias=np.zeros(embed_dim),
        text_weights=rng.uniform(-txt_scale, txt_scale, size=(embed_dim, text_dim)),
        text_bias=np.zeros(embed_dim),
        log_temperature=float(np.log(init_temperature)),
    )
