"""Mean-field jump SDE/SPDE toolbox.

Simulates distribution-dependent evolution equations driven by compensated
Poisson random measures on a discretized Gelfand triple, solves the
associated deterministic limit / skeleton / controlled equations, and runs
small-noise rare-event diagnostics against an entropy-cost rate functional.
"""

__version__ = "0.1.0"

from .triple import (
    MarkSpace,
    ModelConfig,
    DiscretizedTriple,
    HypothesisReport,
    make_triple,
    drift_A,
    jump_f,
    pairing,
    norm,
    check_hypotheses,
)
from .measure import (
    EmpiricalMeasure,
    MeasureFlow,
    wasserstein2,
    second_moment,
    mean_element,
    flow_distance,
)
from .prm import (
    Control,
    JumpStream,
    entropy_l,
    control_cost_Q,
    sample_prm,
    compensator_drift,
    derive_rng,
)
from .mvsolve import (
    Path,
    Ensemble,
    MomentReport,
    BlowupError,
    euler_step_frozen,
    solve_frozen,
    picard_law_flow,
    solve_mckean_vlasov,
    particle_system,
    moment_report,
)
from .skeleton import (
    SkeletonSolution,
    solve_limit,
    solve_skeleton,
    solve_controlled,
)
from .ldp import (
    RareEventSpec,
    RareEventTable,
    RateResult,
    rate_of_control,
    minimize_rate,
    mc_rare_event,
    condition_a_diagnostic,
    condition_b_diagnostic,
)

__all__ = [
    "MarkSpace", "ModelConfig", "DiscretizedTriple", "HypothesisReport",
    "make_triple", "drift_A", "jump_f", "pairing", "norm", "check_hypotheses",
    "EmpiricalMeasure", "MeasureFlow", "wasserstein2", "second_moment",
    "mean_element", "flow_distance",
    "Control", "JumpStream", "entropy_l", "control_cost_Q", "sample_prm",
    "compensator_drift", "derive_rng",
    "Path", "Ensemble", "MomentReport", "BlowupError", "euler_step_frozen",
    "solve_frozen", "picard_law_flow", "solve_mckean_vlasov",
    "particle_system", "moment_report",
    "SkeletonSolution", "solve_limit", "solve_skeleton", "solve_controlled",
    "RareEventSpec", "RareEventTable", "RateResult", "rate_of_control",
    "minimize_rate", "mc_rare_event", "condition_a_diagnostic",
    "condition_b_diagnostic",
]
