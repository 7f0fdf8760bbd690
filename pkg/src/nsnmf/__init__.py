"""Anomaly detection by neighbourhood-structure-assisted non-negative matrix factorization."""

from .baselines import (
    GnmfParams,
    SnmfParams,
    build_knn_laplacian,
    detect_baseline,
    fit_gnmf,
    fit_nmf,
    fit_snmf,
    laplacian_equivalence_check,
)
from .core import (
    AnomalyReport,
    FactorPair,
    HyperParams,
    anomaly_scores,
    flag_top_n,
    nsnmf_objective,
)
from .evaluation import (
    LabeledDataset,
    RankMatrix,
    friedman_statistic,
    load_csv,
    precision_at_n,
    rank_methods,
    run_benchmark,
)
from .graph import (
    EdgeList,
    MstDistance,
    SparseSimilarity,
    build_complete_graph,
    local_mst_similarity,
    minimum_spanning_tree,
    mst_from_points,
    mst_similarity,
    similarity_from_mst,
)
from .offline import DivergenceError, SgdSchedule, detect_offline, fit_offline, sgd_step
from .online import OnlineNSNMF, detect_online

__all__ = [
    "AnomalyReport", "DivergenceError", "EdgeList", "FactorPair", "GnmfParams", "HyperParams",
    "LabeledDataset", "MstDistance", "OnlineNSNMF", "RankMatrix", "SgdSchedule", "SnmfParams",
    "SparseSimilarity", "anomaly_scores", "build_complete_graph", "build_knn_laplacian",
    "detect_baseline", "detect_offline", "detect_online", "fit_gnmf", "fit_nmf", "fit_offline",
    "fit_snmf", "flag_top_n", "friedman_statistic", "laplacian_equivalence_check", "load_csv",
    "local_mst_similarity", "minimum_spanning_tree", "mst_from_points", "mst_similarity",
    "nsnmf_objective", "precision_at_n", "rank_methods", "run_benchmark", "sgd_step",
    "similarity_from_mst",
]
__version__ = "0.1.0"
