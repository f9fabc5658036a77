"""Negative-emotion recognition for segmented hotline call audio.

Pipeline: manifest ingestion and corpus statistics, leakage-free
call-level splitting, pre-trained-encoder feature extraction with a pooled
two-layer classifier head, training with gradient accumulation, weighted
multi-label evaluation, and per-call emotion timelines.
"""

from .corpus import (
    AnnotatorLabels,
    Call,
    ConsolidatedLabel,
    CorpusStats,
    LabelTaxonomy,
    ManifestError,
    Segment,
    compute_stats,
    consolidate,
    consolidate_calls,
    load_manifest,
    validate_corpus,
)
from .splitting import SplitPlan, assign_folds, holdout_split, materialize
from .encoding import (
    EncoderSpec,
    EncoderUnavailableError,
    FeatureExtractor,
    FrameFeatures,
    PooledFeature,
    Waveform,
    encode,
    get_spec,
    pool,
    preprocess,
)
from .classifier import (
    HeadArtifact,
    HeadConfig,
    HeadParameters,
    Prediction,
    decide,
    forward,
    init_params,
    load_head,
    loss,
    save_head,
)
from .training import (
    LeakageError,
    RunRecord,
    TrainConfig,
    cross_validate,
    finalize,
    train_one,
)
from .evaluation import (
    BinaryConfusion,
    MetricsReport,
    binary_metrics,
    error_report,
    multilabel_metrics,
)

__version__ = "0.1.0"
