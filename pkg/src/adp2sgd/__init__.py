"""Simulator and analysis toolkit for differentially private asynchronous decentralized SGD."""

from .analysis import (
    ConvergenceReport,
    TheoremConstants,
    convergence_report,
    proposition1_bound,
    proposition1_threshold,
    proposition2_package,
    theorem1_constants,
)
from .config import ExperimentConfig, parse_config, parse_config_dict
from .engine import Scenario, TraceRecord, TrainingTrace, run_adpsgd, run_sync, throughput_summary
from .errors import (
    Adp2Error,
    CompositionError,
    ConfigError,
    DomainError,
    EmptyTraceError,
    InfeasibleBudgetError,
    InvalidBatchError,
    OutOfRegimeError,
    StalenessGuardError,
    TopologyError,
    TraceSchemaError,
)
from .privacy import (
    PrivacyParams,
    RdpCurvePoint,
    calibrate_sigma,
    compose,
    find_mu,
    gaussian_rdp,
    per_iteration_epsilon,
    rdp_to_dp,
    subsampled_gaussian_rdp,
)
from .tasks import DataShard, Task, make_task
from .topology import CommGraph, GossipMatrix, complete_graph, estimate_spectral_gap, full_bipartite, ring_partition

__version__ = "0.1.0"
