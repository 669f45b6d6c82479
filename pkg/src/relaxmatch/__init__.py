"""Desk-scale contrastive image-text learning toolkit.

Implements a relaxed positive-pair similarity objective with random
sentence sampling over synthetic multi-label report corpora, plus the
zero-shot evaluation stack (prompt classification, macro AUROC / F1 /
MCC, bootstrap confidence intervals, image-text alignment).
"""

import os as _os

# RELAXMATCH_THREADS caps intra-run parallelism. BLAS thread pools read
# their env vars at import time, so this must run before numpy loads.
_threads = _os.environ.get("RELAXMATCH_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from relaxmatch.corpus import (  # noqa: E402
    RawReport,
    SamplerConfig,
    StructuredReport,
    Study,
    SyntheticSpec,
    combination_count,
    generate_synthetic_corpus,
    label_overlap_histogram,
    load_corpus_jsonl,
    parse_report,
    sample_sentences,
    save_corpus_jsonl,
)
from relaxmatch.encoder import (  # noqa: E402
    EncoderParams,
    TextFeaturizer,
    build_featurizer,
    encode_image,
    encode_text,
    featurize_text,
    init_encoder_params,
)
from relaxmatch.relaxed_loss import (  # noqa: E402
    BatchEmbeddings,
    SimConfig,
    cosine_similarity,
    info_nce_loss,
    relaxed_sim,
    relaxed_sim_derivative,
)
from relaxmatch.zero_shot import PromptPair, build_prompts, classify  # noqa: E402
from relaxmatch.metrics import (  # noqa: E402
    EvalReport,
    alignment,
    auroc,
    bootstrap_ci,
    f1_and_mcc,
    macro_auroc,
)
from relaxmatch.trainer import (  # noqa: E402
    Checkpoint,
    TrainConfig,
    ensemble_predict,
    learning_rate_at,
    select_best,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "RawReport",
    "StructuredReport",
    "Study",
    "SamplerConfig",
    "SyntheticSpec",
    "parse_report",
    "sample_sentences",
    "combination_count",
    "label_overlap_histogram",
    "generate_synthetic_corpus",
    "save_corpus_jsonl",
    "load_corpus_jsonl",
    "EncoderParams",
    "TextFeaturizer",
    "build_featurizer",
    "featurize_text",
    "encode_image",
    "encode_text",
    "init_encoder_params",
    "SimConfig",
    "BatchEmbeddings",
    "cosine_similarity",
    "relaxed_sim",
    "relaxed_sim_derivative",
    "info_nce_loss",
    "PromptPair",
    "build_prompts",
    "classify",
    "EvalReport",
    "auroc",
    "macro_auroc",
    "f1_and_mcc",
    "bootstrap_ci",
    "alignment",
    "TrainConfig",
    "Checkpoint",
    "learning_rate_at",
    "train",
    "select_best",
    "ensemble_predict",
    "__version__",
]
