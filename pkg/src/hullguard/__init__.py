"""Risk-aware safe controllers as contractive convex hulls of ellipsoids.

The pipeline: describe a stochastic linear plant and its admissible polytope,
synthesize a family of ellipsoids whose convex hull contracts under feedback
(from the model or directly from trajectory data), partition the hull into
simplicial regions with piecewise-affine safe gains, and wrap any performance
controller with a minimally-intervening runtime supervisor that enforces the
hull chance constraints.
"""
from .geometry import (
    DegenerateHullError,
    HullPolytope,
    PartitionRegion,
    build_hull_polytope,
    build_partitions,
    ellipsoid_boundary_points,
    ellipsoid_membership,
    export_hull_svg,
    extract_extreme_points,
    gauge_hull_ellipsoids,
    gauge_polytope,
)
from .harness_cli import (
    CostEstimate,
    MonteCarloReport,
    ScenarioConfig,
    ScenarioValidationError,
    compliance_report,
    estimate_cost,
    load_scenario,
    main,
    make_dataset,
    run_monte_carlo,
    synthesize_scenario,
    trajectory_cost,
)
from .lmi_core import (
    SdpAssemblyError,
    SdpProblem,
    SdpSolution,
    assemble_problem,
    declare_variables,
    feasibility_tolerance,
    schur_psd_check,
    solve_sdp,
)
from .policies import (
    LqrPolicy,
    OutOfHullError,
    PartitionedPolicy,
    load_policy_bundle,
    locate_partition,
    lqr_riccati,
    precompute_partition_gains,
    safe_control,
)
from .supervisor import (
    BPrior,
    RiskAllocation,
    SupervisionLog,
    SupervisionOutcome,
    Supervisor,
    compute_VR,
    confidence_ellipsoid,
    tighten_rows,
)
from .synthesis import (
    DataAssumptionError,
    HullCertificate,
    HullSynthesizer,
    InfeasibleSynthesisError,
    SynthesisConfig,
    SynthesisNumericalError,
    SynthesisVerdict,
    noise_concentration_bound,
    synth_data_ce,
    synth_data_minvar,
    synth_model_based,
    synth_open_loop,
    synth_single_baseline,
    verify_certificate,
)
from .systems import (
    LtiSystem,
    TrajectoryDataset,
    collect_dataset,
    simulate_trajectory,
    spectral_radius,
    validate_data_assumptions,
)

__version__ = "0.1.0"

__all__ = [
    "BPrior",
    "CostEstimate",
    "DataAssumptionError",
    "DegenerateHullError",
    "HullCertificate",
    "HullPolytope",
    "HullSynthesizer",
    "InfeasibleSynthesisError",
    "LqrPolicy",
    "LtiSystem",
    "MonteCarloReport",
    "OutOfHullError",
    "PartitionRegion",
    "PartitionedPolicy",
    "RiskAllocation",
    "ScenarioConfig",
    "ScenarioValidationError",
    "SdpAssemblyError",
    "SdpProblem",
    "SdpSolution",
    "SupervisionLog",
    "SupervisionOutcome",
    "Supervisor",
    "SynthesisConfig",
    "SynthesisNumericalError",
    "SynthesisVerdict",
    "TrajectoryDataset",
    "assemble_problem",
    "build_hull_polytope",
    "build_partitions",
    "collect_dataset",
    "compliance_report",
    "compute_VR",
    "confidence_ellipsoid",
    "declare_variables",
    "ellipsoid_boundary_points",
    "ellipsoid_membership",
    "estimate_cost",
    "export_hull_svg",
    "extract_extreme_points",
    "feasibility_tolerance",
    "gauge_hull_ellipsoids",
    "gauge_polytope",
    "load_policy_bundle",
    "load_scenario",
    "locate_partition",
    "lqr_riccati",
    "main",
    "make_dataset",
    "noise_concentration_bound",
    "precompute_partition_gains",
    "run_monte_carlo",
    "safe_control",
    "schur_psd_check",
    "simulate_trajectory",
    "solve_sdp",
    "spectral_radius",
    "synth_data_ce",
    "synth_data_minvar",
    "synth_model_based",
    "synth_open_loop",
    "synth_single_baseline",
    "synthesize_scenario",
    "trajectory_cost",
    "validate_data_assumptions",
    "verify_certificate",
]
