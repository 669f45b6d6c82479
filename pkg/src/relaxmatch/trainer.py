"""Mini-batch training loop: Adam, warmup + cosine decay, checkpoints.

Every run is fully deterministic given its seed: one generator drives
parameter init, epoch shuffles, and sentence sampling in sequence, and
gradient reductions happen in a fixed order.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from relaxmatch.corpus import SamplerConfig, Study, sample_sentences, split_studies
from relaxmatch.encoder import (
    EncoderParams,
    TextFeaturizer,
    affine_unit_backward,
    affine_unit_forward,
    build_featurizer,
    featurize_texts,
    init_encoder_params,
)
from relaxmatch.metrics import NoAdmittedLabelsError, macro_auroc
from relaxmatch.relaxed_loss import BatchEmbeddings, SimConfig, info_nce_loss
from relaxmatch.zero_shot import build_prompts, classify_batch


class EmptySplitError(ValueError):
    """Training requested on a corpus with no train studies."""


class NonFiniteLossError(RuntimeError):
    """Loss became NaN/inf; carries the offending epoch and iteration."""

    def __init__(self, epoch: int, iteration: int):
        super().__init__(f"non-finite loss at epoch {epoch}, iteration {iteration}")
        self.epoch = epoch
        self.iteration = iteration


class UnscoredCheckpointError(ValueError):
    """select_best received a checkpoint without a validation score."""


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    epochs: int = 50
    batch_size: int = 64
    base_lr: float = 1e-4
    warmup_iters: int = 100
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    n_sentences: int = 3
    sim: SimConfig = field(default_factory=SimConfig)
    sampling_enabled: bool = True
    tau_learnable: bool = True
    embed_dim: int = 32
    image_dim: int = 32
    init_temperature: float = 0.07

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (negatives are required)")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be >= 0")
        if self.n_sentences < 1:
            raise ValueError("n_sentences must be >= 1")
        if self.embed_dim < 1 or self.image_dim < 1:
            raise ValueError("embed_dim and image_dim must be >= 1")
        if self.init_temperature <= 0:
            raise ValueError("init_temperature must be positive")


@dataclass
class Checkpoint:
    """Parameter snapshot with its epoch and validation macro AUROC."""

    params: EncoderParams
    epoch: int
    valid_score: float | None = None


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    valid_macro_auroc: float
    lr_last_iter: float


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    history: list[EpochStats]
    featurizer: TextFeaturizer
    config: TrainConfig


def learning_rate_at(iteration: int, cfg: TrainConfig, total_iters: int) -> float:
    """Linear warmup to base_lr, then cosine decay to 0.

    Warmup climbs base_lr * k / warmup_iters over the first warmup
    iterations (iteration 0 reuses the first warmup value so the rate
    stays positive); from iteration = warmup_iters the cosine branch
    takes over at exactly base_lr.
    """
    if iteration < 0 or iteration >= total_iters:
        raise ValueError("iteration must lie in [0, total_iters)")
    if iteration < cfg.warmup_iters:
        return cfg.base_lr * max(iteration, 1) / cfg.warmup_iters
    span = total_iters - cfg.warmup_iters
    if span <= 1:
        return cfg.base_lr
    progress = (iteration - cfg.warmup_iters) / span
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class _Adam:
    """Adaptive moment estimation over a named set of arrays."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], betas, eps):
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step = 0

    def update(self, grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
        self.step += 1
        deltas = {}
        bc1 = 1.0 - self.beta1**self.step
        bc2 = 1.0 - self.beta2**self.step
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * grad**2
            m_hat = self.m[key] / bc1
            v_hat = self.v[key] / bc2
            deltas[key] = -lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return deltas


def _study_text(study: Study, cfg: TrainConfig, rng: np.random.Generator) -> str:
    if cfg.sampling_enabled:
        picked = sample_sentences(
            study.report, SamplerConfig(n=cfg.n_sentences, seed=cfg.seed), rng
        )
        return " ".join(picked)
    return study.report.joined()


def validation_macro_auroc(
    studies: Sequence[Study],
    params: EncoderParams,
    featurizer: TextFeaturizer,
    labels: Sequence[str] | None = None,
) -> float:
    """Zero-shot macro AUROC over the given studies' label set.

    Falls back to a neutral 0.5 (with a warning) when no label admits
    an AUROC, so degenerate smoke-scale splits stay trainable.
    """
    if labels is None:
        labels = sorted({lab for s in studies for lab in s.labels})
    if not labels or not studies:
        warnings.warn("validation split has no scorable labels; score set to 0.5")
        return 0.5
    prompts = build_prompts(list(labels))
    images = np.stack([s.image_features for s in studies])
    probs = classify_batch(images, prompts, params, featurizer)
    scores = {lab: probs[:, k] for k, lab in enumerate(labels)}
    truth = {
        lab: np.array([1 if lab in s.labels else 0 for s in studies])
        for lab in labels
    }
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return macro_auroc(scores, truth)
    except NoAdmittedLabelsError:
        warnings.warn("validation split has no scorable labels; score set to 0.5")
        return 0.5


def train(
    corpus: Sequence[Study],
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
) -> TrainResult:
    """Run the full optimization loop over the corpus train split.

    Per epoch: shuffle train studies, form fixed-size batches (last
    incomplete batch dropped), build each study's text (sampled
    sentences or the full report), featurize, encode both sides, apply
    the contrastive loss, and update with Adam at the scheduled rate.
    One checkpoint per epoch is scored with single-sample zero-shot
    macro AUROC on the validation split. When out_dir is given,
    checkpoints/epoch_<k>.json and history.csv are written.
    """
    cfg.validate()
    train_split = split_studies(corpus, "train")
    valid_split = split_studies(corpus, "valid")
    if not train_split:
        raise EmptySplitError("corpus has no train studies")
    if len(train_split) < cfg.batch_size:
        raise EmptySplitError(
            f"train split ({len(train_split)}) is smaller than one batch "
            f"({cfg.batch_size})"
        )
    if train_split[0].image_features.shape[0] != cfg.image_dim:
        raise ValueError(
            f"cfg.image_dim={cfg.image_dim} does not match corpus feature "
            f"dimension {train_split[0].image_features.shape[0]}"
        )

    valid_labels = sorted({lab for s in valid_split for lab in s.labels})
    featurizer = build_featurizer(
        train_split + valid_split,
        extra_tokens=["no", *valid_labels],
    )

    rng = np.random.default_rng(cfg.seed)
    params = init_encoder_params(
        cfg.embed_dim, cfg.image_dim, featurizer.dim, rng, cfg.init_temperature
    )

    param_keys = ["image_weights", "image_bias", "text_weights", "text_bias"]
    shapes = {k: getattr(params, k).shape for k in param_keys}
    if cfg.tau_learnable:
        shapes["log_temperature"] = ()
    adam = _Adam(shapes, cfg.betas, cfg.eps)

    batches_per_epoch = len(train_split) // cfg.batch_size
    total_iters = cfg.epochs * batches_per_epoch
    images_all = np.stack([s.image_features for s in train_split])

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        (out_path / "checkpoints").mkdir(parents=True, exist_ok=True)

    checkpoints: list[Checkpoint] = []
    history: list[EpochStats] = []
    iteration = 0
    lr = cfg.base_lr
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_split))
        losses = []
        for b in range(batches_per_epoch):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            texts = [_study_text(train_split[i], cfg, rng) for i in idx]
            text_feats = featurize_texts(texts, featurizer)
            image_feats = images_all[idx]

            u, _, u_norms = affine_unit_forward(
                image_feats, params.image_weights, params.image_bias
            )
            v, _, v_norms = affine_unit_forward(
                text_feats, params.text_weights, params.text_bias
            )
            tau = params.tau
            result = info_nce_loss(
                BatchEmbeddings(u=u, v=v, validate=False), tau, cfg.sim
            )
            if not math.isfinite(result.loss):
                raise NonFiniteLossError(epoch, iteration)
            losses.append(result.loss)

            gw_img, gb_img = affine_unit_backward(image_feats, u, u_norms, result.grad_u)
            gw_txt, gb_txt = affine_unit_backward(text_feats, v, v_norms, result.grad_v)
            grads = {
                "image_weights": gw_img,
                "image_bias": gb_img,
                "text_weights": gw_txt,
                "text_bias": gb_txt,
            }
            if cfg.tau_learnable:
                grads["log_temperature"] = np.asarray(result.grad_tau * tau)

            lr = learning_rate_at(iteration, cfg, total_iters)
            deltas = adam.update(grads, lr)
            for key in param_keys:
                setattr(params, key, getattr(params, key) + deltas[key])
            if cfg.tau_learnable:
                params.log_temperature += float(deltas["log_temperature"])
            iteration += 1

        score = validation_macro_auroc(valid_split, params, featurizer, valid_labels)
        assert params.tau > 0.0  # structural under log-parameterization
        checkpoint = Checkpoint(params=params.copy(), epoch=epoch, valid_score=score)
        checkpoints.append(checkpoint)
        history.append(
            EpochStats(
                epoch=epoch,
                mean_loss=float(np.mean(losses)),
                valid_macro_auroc=score,
                lr_last_iter=lr,
            )
        )
        if out_path is not None:
            save_checkpoint(
                out_path / "checkpoints" / f"epoch_{epoch}.json",
                checkpoint,
                cfg,
                featurizer.vocabulary,
            )

    if out_path is not None:
        write_history_csv(out_path / "history.csv", history)
    return TrainResult(
        checkpoints=checkpoints, history=history, featurizer=featurizer, config=cfg
    )


def select_best(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Checkpoint with the highest validation score; ties favor the
    earliest epoch."""
    if not checkpoints:
        raise ValueError("checkpoints must be non-empty")
    for c in checkpoints:
        if c.valid_score is None:
            raise UnscoredCheckpointError(f"checkpoint at epoch {c.epoch} is unscored")
    return max(checkpoints, key=lambda c: (c.valid_score, -c.epoch))


def ensemble_predict(
    models: Sequence[EncoderParams],
    image: np.ndarray,
    prompts,
    featurizer: TextFeaturizer,
    inference_temperature: str = "off",
) -> np.ndarray:
    """Arithmetic mean of per-model zero-shot probabilities."""
    if not models:
        raise ValueError("at least one model is required")
    probs = [
        classify_batch(image, prompts, m, featurizer, inference_temperature)[0]
        for m in models
    ]
    return np.mean(probs, axis=0)


def config_to_dict(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    out["betas"] = list(cfg.betas)
    out["sim"] = {"t": cfg.sim.t, "alpha": cfg.sim.alpha, "enabled": cfg.sim.enabled}
    return out


def config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    if "sim" in data:
        data["sim"] = SimConfig(**data["sim"])
    if "betas" in data:
        data["betas"] = tuple(data["betas"])
    return TrainConfig(**data)


def save_checkpoint(
    path: str | Path,
    checkpoint: Checkpoint,
    cfg: TrainConfig,
    vocabulary: Sequence[str],
) -> None:
    """Write a checkpoint JSON: params, config, vocabulary, epoch, score."""
    p = checkpoint.params
    payload = {
        "epoch": checkpoint.epoch,
        "valid_score": checkpoint.valid_score,
        "params": {
            "image_weights": p.image_weights.tolist(),
            "image_bias": p.image_bias.tolist(),
            "text_weights": p.text_weights.tolist(),
            "text_bias": p.text_bias.tolist(),
            "log_temperature": p.log_temperature,
        },
        "config": config_to_dict(cfg),
        "vocabulary": list(vocabulary),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


@dataclass
class CheckpointFile:
    """A checkpoint as loaded from disk, featurizer included."""

    checkpoint: Checkpoint
    config: TrainConfig
    featurizer: TextFeaturizer


def load_checkpoint(path: str | Path) -> CheckpointFile:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    params = EncoderParams(
        image_weights=np.asarray(data["params"]["image_weights"]),
        image_bias=np.asarray(data["params"]["image_bias"]),
        text_weights=np.asarray(data["params"]["text_weights"]),
        text_bias=np.asarray(data["params"]["text_bias"]),
        log_temperature=data["params"]["log_temperature"],
    )
    return CheckpointFile(
        checkpoint=Checkpoint(
            params=params, epoch=data["epoch"], valid_score=data["valid_score"]
        ),
        config=config_from_dict(data["config"]),
        featurizer=TextFeaturizer(vocabulary=tuple(data["vocabulary"])),
    )


def write_history_csv(path: str | Path, history: Sequence[EpochStats]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "valid_macro_auroc", "lr_last_iter"])
        for row in history:
            writer.writerow(
                [row.epoch, repr(row.mean_loss), repr(row.valid_macro_auroc), repr(row.lr_last_iter)]
            )
