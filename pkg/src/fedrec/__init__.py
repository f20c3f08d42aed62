"""Deterministic simulator for personalized federated autoencoder recommenders."""

from .config import ExperimentConfig, parse_config
from .data import (
    ClientPartition,
    RatingMatrix,
    SplitSpec,
    binarize,
    gen_synthetic,
    load_anime,
    load_movielens,
    partition,
    split,
    subsample_users,
)
from .estimators import AutoEncoderRecommender, FederatedRecommender, as_rating_matrix
from .federation import (
    ActiveDecoderSlice,
    FederationConfig,
    RunResult,
    client_update,
    extract_active,
    refill,
    run_fedavg,
    run_joint,
    run_personalfr,
    server_aggregate,
)
from .metrics import RoundReport, comm_cost, compute_cost, ndcg, rmse
from .nn import (
    AutoEncoderParams,
    DenseLayer,
    MaskedBatch,
    backward,
    forward,
    init_autoencoder,
    masked_loss,
)
from .optim import Adam, DivergenceError, SgdMomentum, make_optimizer

__version__ = "0.1.0"

__all__ = [
    "ActiveDecoderSlice",
    "Adam",
    "AutoEncoderParams",
    "AutoEncoderRecommender",
    "ClientPartition",
    "DenseLayer",
    "DivergenceError",
    "ExperimentConfig",
    "FederatedRecommender",
    "FederationConfig",
    "MaskedBatch",
    "RatingMatrix",
    "RoundReport",
    "RunResult",
    "SgdMomentum",
    "SplitSpec",
    "as_rating_matrix",
    "backward",
    "binarize",
    "client_update",
    "comm_cost",
    "compute_cost",
    "extract_active",
    "forward",
    "gen_synthetic",
    "init_autoencoder",
    "load_anime",
    "load_movielens",
    "make_optimizer",
    "masked_loss",
    "ndcg",
    "parse_config",
    "partition",
    "refill",
    "rmse",
    "run_fedavg",
    "run_joint",
    "run_personalfr",
    "server_aggregate",
    "split",
    "subsample_users",
]
