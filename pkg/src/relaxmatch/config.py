"""Versioned run configuration: one JSON document per run.

The shipped JSON schema is the contract: unknown keys are rejected and
the version must match the tool's schema version. CLI flags override
config keys after validation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from relaxmatch.corpus import SyntheticSpec
from relaxmatch.relaxed_loss import SimConfig
from relaxmatch.trainer import TrainConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid or unparsable run configuration."""


@dataclass
class EvalOptions:
    threshold: float = 0.5
    bootstrap: int = 0
    bootstrap_level: float = 0.95
    bootstrap_seed: int = 0
    inference_temperature: str = "off"


@dataclass
class RunConfig:
    """Typed view of one validated run-config document."""

    corpus: SyntheticSpec = field(default_factory=SyntheticSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    raw: dict = field(default_factory=dict)


def _load_schema(name: str) -> dict:
    text = resources.files("relaxmatch.schemas").joinpath(name).read_text("utf-8")
    return json.loads(text)


def _validator(name: str) -> jsonschema.Draft202012Validator:
    schema = _load_schema(name)
    # resolve the synthetic-spec $ref locally so validation stays offline
    registry_schema = _load_schema("synthetic_spec.schema.json")
    try:
        from referencing import Registry, Resource

        registry = Registry().with_resource(
            "relaxmatch/synthetic_spec.schema.json",
            Resource.from_contents(registry_schema),
        ).with_resource(
            "synthetic_spec.schema.json", Resource.from_contents(registry_schema)
        )
        return jsonschema.Draft202012Validator(schema, registry=registry)
    except ImportError:  # older jsonschema
        resolver = jsonschema.RefResolver.from_schema(
            schema, store={"synthetic_spec.schema.json": registry_schema}
        )
        return jsonschema.Draft202012Validator(schema, resolver=resolver)


def validate_document(document: dict, schema_name: str) -> None:
    """Raise ConfigError with a readable message on schema violation."""
    errors = sorted(
        _validator(schema_name).iter_errors(document), key=lambda e: list(e.path)
    )
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.path) or "(top level)"
        raise ConfigError(f"config invalid at {where}: {first.message}")


def _parse_json_file(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return document


def synthetic_spec_from_dict(data: dict) -> SyntheticSpec:
    data = dict(data)
    if "corpus_sizes" in data:
        data["corpus_sizes"] = tuple(data["corpus_sizes"])
    return SyntheticSpec(**data)


def train_config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    if "sim" in data:
        data["sim"] = SimConfig(**data["sim"])
    if "betas" in data:
        data["betas"] = tuple(data["betas"])
    return TrainConfig(**data)


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a run-config file into typed sections."""
    document = _parse_json_file(path)
    if document.get("version") != CONFIG_VERSION:
        raise ConfigError(
            f"config version must be {CONFIG_VERSION}, got {document.get('version')!r}"
        )
    validate_document(document, "run_config.schema.json")
    try:
        return RunConfig(
            corpus=synthetic_spec_from_dict(document.get("corpus", {})),
            train=train_config_from_dict(document.get("train", {})),
            eval=EvalOptions(**document.get("eval", {})),
            raw=document,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config invalid: {exc}") from exc


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    """Spec file for corpus generation: bare spec or full run config."""
    document = _parse_json_file(path)
    if "version" in document:
        return load_run_config(path).corpus
    validate_document(document, "synthetic_spec.schema.json")
    try:
        return synthetic_spec_from_dict(document)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"spec invalid: {exc}") from exc


def config_sha256(document: dict) -> str:
    """Hash of the canonical (sorted, compact) JSON encoding."""
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def default_run_config_dict() -> dict:
    """The frozen default run configuration as a plain document."""
    spec = SyntheticSpec()
    train = TrainConfig()
    return {
        "version": CONFIG_VERSION,
        "corpus": {
            "num_labels": spec.num_labels,
            "prototype_dim": spec.prototype_dim,
            "label_prevalence": spec.label_prevalence,
            "image_noise_sigma": spec.image_noise_sigma,
            "sentences_per_label": spec.sentences_per_label,
            "filler_sentence_rate": spec.filler_sentence_rate,
            "corpus_sizes": list(spec.corpus_sizes),
            "seed": spec.seed,
        },
        "train": {
            "epochs": train.epochs,
            "batch_size": train.batch_size,
            "base_lr": train.base_lr,
            "warmup_iters": train.warmup_iters,
            "betas": list(train.betas),
            "eps": train.eps,
            "seed": train.seed,
            "n_sentences": train.n_sentences,
            "sim": {
                "t": train.sim.t,
                "alpha": train.sim.alpha,
                "enabled": train.sim.enabled,
            },
            "sampling_enabled": train.sampling_enabled,
            "tau_learnable": train.tau_learnable,
            "embed_dim": train.embed_dim,
            "image_dim": train.image_dim,
            "init_temperature": train.init_temperature,
        },
        "eval": {
            "threshold": 0.5,
            "bootstrap": 0,
            "bootstrap_level": 0.95,
            "bootstrap_seed": 0,
            "inference_temperature": "off",
        },
    }
