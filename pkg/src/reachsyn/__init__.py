"""reachsyn: sample-based interval-MDP abstraction and reach-avoid synthesis.

Builds a finite interval MDP abstraction of a nonlinear stochastic system
purely from forward simulations and noise samples, synthesizes a robust
reach-avoid scheduler on it, refines the scheduler to a continuous-state
policy, and validates the certified probability lower bound by simulation.
"""

__version__ = "0.1.0"

from .geometry import (
    Box,
    BoxRelation,
    InvalidGeometryError,
    Partition,
    Voxelization,
    box_relation,
    build_partition,
    inscribed_ball_radius,
    scale_region,
    voxelize,
)
from .systems import (
    Dataset,
    DynamicsModel,
    InputDomainError,
    SampleTriple,
    generate_dataset,
    make_benchmark,
    make_car,
    make_lipschitz_model,
    make_oscillator,
    make_pendulum,
    sample_noise,
    step_nominal,
)
from .reachability import (
    ActionTable,
    DegenerateSampleError,
    compute_enabled_actions,
    compute_lambda_ij,
    lambda_plus,
    lambda_star_rect,
    membership_A,
)
from .intervals import (
    ProbabilityInterval,
    TransitionCounts,
    beta_per_transition,
    beta_worst_case,
    build_transition_intervals,
    clopper_pearson,
    count_outcomes,
)
from .imdp import (
    IntervalImdp,
    ReachAvoidSpec,
    Scheduler,
    assemble_imdp,
    export_prism,
    inner_min_expectation,
    map_spec,
    robust_value_iteration,
)
from .synthesis import (
    PolicyUndefinedError,
    RefinedPolicy,
    TrajectoryRecord,
    ValidationResult,
    monte_carlo_validate,
    policy_input,
    simulate,
    value_heatmap,
    wilson_interval,
)
from .config import RunConfig, load_config
from .pipeline import Pipeline, run_pipeline
