"""Relaxed positive-pair similarity and the symmetric contrastive loss.

The similarity applied to a matched image-text pair is clipped: above a
threshold t it saturates through a sigmoid (so near-aligned positives
stop contributing gradient), between 0 and t it is rescaled to c/(2t),
and below 0 it is the raw cosine. The two scaled branches meet the
sigmoid branch continuously at c = t and each other at c = 0. Unmatched
pairs always use the raw cosine.

The batch objective is the symmetric InfoNCE cross-entropy over an
N x N similarity matrix with a learnable temperature; this module also
returns its exact analytic gradients.

The similarity function is the single substitution point: any loss
built on pairwise similarities (CLIP-style and variants) can adopt the
relaxed branches by swapping its sim function for ``relaxed_sim``.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass

import numpy as np

_KNOT_TOL = 1e-12


class KnotPointError(ValueError):
    """Derivative requested exactly at a branch boundary."""


class DegenerateBatchError(ValueError):
    """Loss requested on an empty batch."""


@dataclass(frozen=True)
class SimConfig:
    """Relaxation parameters: threshold t, sigmoid slope alpha, on/off."""

    t: float = 0.5
    alpha: float = 10.0
    enabled: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.t < 1.0):
            raise ValueError("t must lie in (0, 1)")
        if self.alpha <= 0.0:
            raise ValueError("alpha must be positive")


@dataclass
class BatchEmbeddings:
    """Paired unit vectors; row i of u and v forms the positive pair."""

    u: np.ndarray  # (N, d) image side
    v: np.ndarray  # (N, d) text side
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool) -> None:
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError("u and v must share shape (N, d)")
        if validate and self.u.shape[0] > 0:
            for name, arr in (("u", self.u), ("v", self.v)):
                norms = np.linalg.norm(arr, axis=1)
                if np.max(np.abs(norms - 1.0)) > 1e-6:
                    raise ValueError(f"{name} rows must be unit-norm within 1e-6")

    @property
    def size(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True)
class InfoNCEResult:
    """Loss value with exact gradients for every input and for tau."""

    loss: float
    grad_u: np.ndarray
    grad_v: np.ndarray
    grad_tau: float


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of unit vectors, clamped to [-1, 1] against rounding."""
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-x))


def relaxed_sim(c: float, is_positive: bool, cfg: SimConfig) -> float:
    """Similarity value for one pair given its cosine c.

    Negative pairs (or relaxation disabled) pass through unchanged.
    Positive pairs: sigmoid(alpha * (c - t)) for c >= t, c / (2t) for
    0 <= c < t, and c for c < 0.
    """
    if not is_positive or not cfg.enabled:
        return float(c)
    if c >= cfg.t:
        return float(_sigmoid(cfg.alpha * (c - cfg.t)))
    if c >= 0.0:
        return float(c / (2.0 * cfg.t))
    return float(c)


def relaxed_sim_derivative(c: float, is_positive: bool, cfg: SimConfig) -> float:
    """Branch-wise d(relaxed_sim)/dc.

    Raises KnotPointError within 1e-12 of a branch boundary; callers
    wanting a one-sided value use the convention of the sigmoid branch
    at c = t and the linear branch at c = 0.
    """
    if not is_positive or not cfg.enabled:
        return 1.0
    if abs(c - cfg.t) <= _KNOT_TOL or abs(c) <= _KNOT_TOL:
        raise KnotPointError(f"derivative undefined at branch boundary c={c!r}")
    if c > cfg.t:
        s = _sigmoid(cfg.alpha * (c - cfg.t))
        return float(cfg.alpha * s * (1.0 - s))
    if c > 0.0:
        return float(1.0 / (2.0 * cfg.t))
    return 1.0


def _relaxed_diag(diag: np.ndarray, cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Relaxed values and one-sided derivatives for the positive diagonal."""
    values = diag.copy()
    derivs = np.ones_like(diag)
    upper = diag >= cfg.t
    linear = (diag >= 0.0) & ~upper
    s = _sigmoid(cfg.alpha * (diag[upper] - cfg.t))
    values[upper] = s
    derivs[upper] = cfg.alpha * s * (1.0 - s)
    values[linear] = diag[linear] / (2.0 * cfg.t)
    derivs[linear] = 1.0 / (2.0 * cfg.t)
    return values, derivs


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis)


def info_nce_loss(
    batch: BatchEmbeddings, tau: float, cfg: SimConfig
) -> InfoNCEResult:
    """Symmetric InfoNCE with the relaxed similarity on positive pairs.

    Both cross-entropy directions (image->text over rows, text->image
    over columns) are averaged with coefficient 1/(2N). The relaxed
    branches apply to every (i, i) entry wherever it appears; off-
    diagonal entries keep their raw cosine. Gradients are exact for the
    returned value, including through the relaxation branches and tau.
    """
    n = batch.size
    if n == 0:
        raise DegenerateBatchError("batch must contain at least one pair")
    if tau <= 0.0:
        raise ValueError("tau must be positive")

    cosines = batch.u @ batch.v.T
    sims = cosines.copy()
    diag_idx = np.arange(n)
    if cfg.enabled:
        diag_vals, diag_derivs = _relaxed_diag(cosines[diag_idx, diag_idx], cfg)
        sims[diag_idx, diag_idx] = diag_vals
    else:
        diag_derivs = np.ones(n)

    logits = sims / tau
    lse_rows = _logsumexp(logits, axis=1)
    lse_cols = _logsumexp(logits, axis=0)
    diag_logits = logits[diag_idx, diag_idx]
    loss = -(
        np.sum(diag_logits - lse_rows) + np.sum(diag_logits - lse_cols)
    ) / (2.0 * n)

    # d loss / d logits = (row softmax + column softmax - 2I) / (2N)
    p_rows = np.exp(logits - lse_rows[:, None])
    p_cols = np.exp(logits - lse_cols[None, :])
    grad_logits = (p_rows + p_cols) / (2.0 * n)
    grad_logits[diag_idx, diag_idx] -= 1.0 / n

    grad_tau = float(-np.sum(grad_logits * logits) / tau)
    grad_sims = grad_logits / tau
    grad_cosines = grad_sims
    grad_cosines[diag_idx, diag_idx] *= diag_derivs

    return InfoNCEResult(
        loss=float(loss),
        grad_u=grad_cosines @ batch.v,
        grad_v=grad_cosines.T @ batch.u,
        grad_tau=grad_tau,
    )
