"""Solver toolkit for fuel-constrained multi-vehicle routing under uncertainty."""

from .model import (
    Instance,
    Scenario,
    ScenarioSet,
    RouteSet,
    FuelProfile,
    RecoursePlan,
    RouteStructureError,
    ValidationIssue,
    ValidationResult,
    make_instance,
    validate_instance,
    check_route_structure,
    route_cost,
    nominal_feasibility,
    edge_vector,
    routes_from_edge_vector,
)
from .instgen import GenConfig, QuadrantMap, generate_instance, assign_quadrants, sample_scenarios
from .recourse import (
    BestDepotTable,
    PenaltyPolicy,
    precompute_best_depot,
    evaluate_recourse,
    recourse_oracle,
    realized_routes,
    penalized_objective,
)
from .detsolve import (
    DetProblem,
    BnBConfig,
    DetSolution,
    optimal_depot_insertion,
    solve_deterministic_exact,
    solve_deterministic_greedy,
)
from .heuristics import (
    ConstructionWeights,
    ConstructionResult,
    TabuParams,
    TabuResult,
    TwoStageEvaluator,
    construction_weights,
    construct,
    construct_detailed,
    neighborhood,
    tabu_improve,
)
from .stochsolve import (
    SaaConfig,
    SaaSolution,
    SaaReport,
    BoundEstimate,
    LowerBoundResult,
    UpperBoundResult,
    gamma_seed,
    lambda_seed,
    solve_saa_problem,
    saa_lower_bound,
    saa_upper_bound,
    solve_evp,
    evaluate_eev,
    compute_vss,
    make_report,
)

__version__ = "0.1.0"
