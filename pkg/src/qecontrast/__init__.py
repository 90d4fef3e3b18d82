"""Question-evidence contrastive training and evaluation at desk scale."""

from .corpus import (
    MarkerSequence,
    QAInstance,
    QuestionType,
    SynthConfig,
    Vocabulary,
    assemble_sequence,
    generate_synthetic,
    parse_dataset,
    serialize,
)
from .encoder import EncoderConfig, EncoderParams, MarkerReps, encode, encode_backward, init_params
from .errors import (
    ConfigError,
    ContractError,
    DegenerateVectorError,
    MalformedInstanceError,
    ParseError,
    QEContrastError,
    ReplayError,
    SchemaError,
)
from .evaluation import (
    RankingCase,
    average_precision,
    evidence_f1,
    map_per_type,
    paired_bootstrap,
    pca_embed,
)
from .loss import (
    CandidatePair,
    EvidenceClassifier,
    LossConfig,
    combined_loss,
    enumerate_candidates,
    qa_loss,
    qe_loss,
)
from .similarity import (
    ProjectionBank,
    SimContext,
    SimilarityKind,
    init_bank,
    similarity,
    similarity_backward,
)
from .trainer import Model, RunMetrics, TrainConfig, adam_step, grid_search, train, triangular_lr

__version__ = "0.1.0"
