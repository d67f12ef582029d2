"""Relation-aware graph attention entity alignment with global one-to-one matching."""
from .aligner import (
    Alignment,
    SimilarityMatrix,
    daa_align,
    fine_grained,
    hungarian_align,
    local_align,
    raw_similarity,
)
from .encoder import Ablation, GraphInputs, HyperParams, ModelParams, encode, init_params
from .kg import (
    AlignmentTask,
    KnowledgeGraph,
    build_incidence_index,
    build_normalized_adjacency,
    load_graph,
)
from .metrics import MetricsReport, global_metrics, rank_metrics
from .synth import generate_synthetic_pair
from .trainer import TrainState, hinge_loss, sample_negatives, train

__version__ = "0.1.0"
