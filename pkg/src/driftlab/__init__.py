"""driftlab: dynamic word embeddings with drift regularisation.

Trains per-slice word embeddings tied across time by a Gaussian prior (four
variants), evaluates held-out likelihood per slice, quantifies per-word
semantic drift, and aligns two languages' spaces to compare drift across
them.
"""

from .corpus import (
    ContextBatch,
    DatedDocument,
    TimeSlicedCorpus,
    Vocabulary,
    batches,
    build_vocabulary,
    ingest,
    load_corpus,
    load_stoplist,
    load_vocabulary,
    save_corpus,
    save_vocabulary,
    slice_documents,
    subsample_keep_probability,
    tokenize,
)
from .crosslingual import (
    AlignmentMap,
    BilingualLexicon,
    ClassificationResult,
    CrossDriftRecord,
    ProcrustesAlignment,
    Thresholds,
    apply_alignment,
    classify,
    cross_drift,
    fit_alignment,
    load_alignment,
    load_lexicon_pairs,
    normalize_state,
    project_2d,
    save_alignment,
)
from .drift import (
    DriftReport,
    drift_histogram,
    drift_report,
    nearest_neighbors,
    normalized_drift_summary,
    top_drifting,
    total_drift_sq,
)
from .errors import DataFormatError, DriftlabError, TrainingDiverged
from .evaluation import EvalCurve, compare, evaluate, format_comparison, scale_factor
from .model import (
    EmbeddingState,
    LossBreakdown,
    NegativeSampler,
    PriorConfig,
    SparseGradient,
    bernoulli_param,
    gradients,
    load_embeddings,
    loss_breakdown,
    loss_neg,
    loss_pos,
    loss_prior,
    save_embeddings,
)
from .synth import PlantedWord, SynthSpec, generate, spec_from_file, spec_from_text
from .trainer import (
    Checkpoint,
    DynamicWordEmbedding,
    TrainingConfig,
    init_dynamic,
    load_checkpoint,
    random_state,
    save_checkpoint,
    train_dynamic,
    train_static,
)

__version__ = "0.1.0"
