"""Few-shot word recognition: frame encoder, alignment loss, prototypes.

The pipeline: an MLP encodes each frame, a CTC-style head trains it
(optionally with a supervised-contrastive term on first-frame
embeddings), per-word prototypes are averaged from a small support set,
and test utterances are classified by nearest prototype. A held-out
speaker harness measures how much the prototype step recovers on
speakers the encoder never saw.
"""

from .ctc import CtcResult, ctc_loss, greedy_decode, min_frames
from .datastore import (
    Corpus,
    FeatureSequence,
    LosoSplit,
    Vocabulary,
    load_corpus,
    make_loso_split,
    read_feature_file,
    write_corpus,
    write_feature_file,
)
from .encoder import (
    EncoderParams,
    backward,
    forward,
    init_encoder,
    load_params,
    save_params,
)
from .errors import AlignmentInfeasibleError, ValidationError
from .evaluate import (
    ClusterMetrics,
    EditCounts,
    HarnessConfig,
    LosoResult,
    WERReport,
    cluster_metrics,
    run_loso,
    word_error_rate,
)
from .prototype import (
    Classification,
    PrototypeSet,
    batch_classify,
    build_prototypes,
    classify,
    load_prototypes_csv,
    save_prototypes_csv,
)
from .scl import SclResult, scl_loss
from .synthgen import SynthConfig, generate, level_for_severity
from .trainer import BatchResult, TrainConfig, TrainHistory, batch_objective, fine_tune, train

__version__ = "0.1.0"

__all__ = [
    "AlignmentInfeasibleError",
    "Classification",
    "ClusterMetrics",
    "Corpus",
    "CtcResult",
    "EditCounts",
    "EncoderParams",
    "FeatureSequence",
    "HarnessConfig",
    "LosoResult",
    "LosoSplit",
    "PrototypeSet",
    "SclResult",
    "SynthConfig",
    "TrainConfig",
    "TrainHistory",
    "BatchResult",
    "ValidationError",
    "Vocabulary",
    "WERReport",
    "backward",
    "batch_classify",
    "batch_objective",
    "build_prototypes",
    "classify",
    "cluster_metrics",
    "ctc_loss",
    "fine_tune",
    "forward",
    "generate",
    "greedy_decode",
    "init_encoder",
    "level_for_severity",
    "load_corpus",
    "load_params",
    "load_prototypes_csv",
    "make_loso_split",
    "min_frames",
    "read_feature_file",
    "run_loso",
    "save_params",
    "save_prototypes_csv",
    "scl_loss",
    "train",
    "word_error_rate",
    "write_corpus",
    "write_feature_file",
]
