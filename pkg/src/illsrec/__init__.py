"""Two-step top-N recommender: resource spreading plus iterative local
least-squares completion of the remaining zeros, with offline evaluation."""

from .dataset import (
    BipartiteGraph,
    DataSplit,
    InteractionRecord,
    LinkSet,
    binarize,
    build_graph,
    density,
    parse_ratings,
    split_train_probe,
)
from .spreading import (
    IMPUTED,
    MISSING,
    OBSERVED,
    SPREAD,
    ScoreMatrix,
    SpreadStats,
    binary_scores,
    densify,
    spread_stats,
    spread_user,
)
from .imputation import (
    IllsConfig,
    IllsTrace,
    NeighborSet,
    ValidationMask,
    estimate_entry,
    impute_iteration,
    k_curve,
    lstsq_min_norm,
    make_validation_mask,
    nrmse,
    row_average_fill,
    run_ills,
    select_k,
    select_neighbors,
    similarity,
    similarity_dense,
)
from .evaluation import (
    MetricsReport,
    RecommendationList,
    auc,
    build_report,
    diversity_at,
    precision_at,
    recall_at,
    recommend,
)

__version__ = "0.1.0"
