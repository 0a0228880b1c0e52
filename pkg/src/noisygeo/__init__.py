"""Geodesic distance recovery from noisy, partially missing pairwise data."""

__version__ = "0.1.0"

from .errors import (
    ClusterDegenerate,
    ClusterUnderfull,
    ConfigError,
    InvalidInput,
    MidpointNotFound,
    RatioUnavailable,
    TauNotFound,
)
from .spaces import Space, SampleSet, sample_points, geodesic_distance
from .noise import NoiseModel, MissingModel, NoisyOracle
from .cluster import (
    Cluster,
    ClusterParams,
    InnerProductTable,
    ProxyTable,
    build_all_clusters,
    build_all_clusters_missing,
    build_cluster,
    build_cluster_missing,
    build_inner_products,
    build_proxy_table,
    test_pair_separation,
)
from .recovery import (
    Comparator,
    DyadicPath,
    RecoveredMetric,
    build_dyadic_path,
    comparator_contract_violations,
    midpoint,
    pair_graph_successors,
    ratio,
    recover_all,
    recover_all_missing,
    tau,
)
from .algo2 import (
    Algo2Config,
    Algo2Schedule,
    Algo2State,
    CenterSet,
    build_cluster_algo2,
    cluster_cluster_distance,
    objective_estimate,
    prepare_state,
    run_algorithm2,
    select_center,
    termination_test,
)
from .harness import (
    ErrorReport,
    ExperimentConfig,
    concentration_selftest,
    evaluate,
    load_config,
    read_matrix_csv,
    required_sample_size,
    run_experiment,
    write_matrix_csv,
)

__all__ = [
    "ErrorReport",
    "ExperimentConfig",
    "concentration_selftest",
    "evaluate",
    "load_config",
    "read_matrix_csv",
    "required_sample_size",
    "run_experiment",
    "write_matrix_csv",
    "Algo2Config",
    "Algo2Schedule",
    "Algo2State",
    "CenterSet",
    "build_cluster_algo2",
    "cluster_cluster_distance",
    "objective_estimate",
    "prepare_state",
    "run_algorithm2",
    "select_center",
    "termination_test",
    "Comparator",
    "DyadicPath",
    "RecoveredMetric",
    "build_dyadic_path",
    "comparator_contract_violations",
    "midpoint",
    "pair_graph_successors",
    "ratio",
    "recover_all",
    "recover_all_missing",
    "tau",
    "NoiseModel",
    "MissingModel",
    "NoisyOracle",
    "Cluster",
    "ClusterParams",
    "InnerProductTable",
    "ProxyTable",
    "build_all_clusters",
    "build_all_clusters_missing",
    "build_cluster",
    "build_cluster_missing",
    "build_inner_products",
    "build_proxy_table",
    "test_pair_separation",
    "ClusterDegenerate",
    "ClusterUnderfull",
    "ConfigError",
    "InvalidInput",
    "MidpointNotFound",
    "RatioUnavailable",
    "TauNotFound",
    "Space",
    "SampleSet",
    "sample_points",
    "geodesic_distance",
    "__version__",
]
