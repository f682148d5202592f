"""Entropic optimal transport with cluster-size marginals for unsupervised cross-domain retrieval."""

from .assignment import (
    AssignmentState,
    PrototypeSet,
    cross_assign,
    cross_marginal_align,
    intra_assign,
    update_prototypes,
)
from .clustering import KMeansResult, kmeans, marginal_from_labels
from .estimator import ProtoOTRetriever
from .exceptions import *  # noqa: F401,F403
from .formats import (
    load_config,
    load_features,
    load_metrics,
    load_model,
    save_config,
    save_features,
    save_metrics,
    save_model,
)
from .losses import LossValue, loss_cross, loss_intra, loss_pretrain, loss_total
from .ot import (
    SolverConfig,
    TransportPlan,
    exact_ot_oracle,
    solve_entropic_ot,
    solve_partial_ot,
    solve_unbalanced_ot,
)
from .representation import MemoryBank, MlpEncoder, MomentumEncoder, augment, nearest_neighbor
from .retrieval import RetrievalEvaluator, mean_precision, precision_at_k, rank_retrieval
from .synthetic import SyntheticSpec, generate_synthetic_domains
from .training import TrainConfig, run_training

__version__ = "0.1.0"
