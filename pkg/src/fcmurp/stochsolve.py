"""Sample-average approximation: exact small-instance solving and bounds.

The sampled two-stage problem minimizes first-stage cost plus the average
recourse cost over a scenario sample. ``solve_saa_problem`` searches route
sets exactly, jointly optimizing each route's depot-insertion pattern against
the sampled objective; replication means give a statistical lower bound and
out-of-sample evaluation an upper bound. The mean-value pipeline (EV, EEV,
VSS) reuses the same evaluation machinery.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .detsolve import (
    BnBConfig,
    DetProblem,
    DetSolution,
    _branch_routes,
    optimal_depot_insertion,
    solve_deterministic_exact,
    solve_deterministic_greedy,
)
from .instgen import QuadrantMap, sample_scenarios
from .model import Instance, RouteSet, ScenarioSet, route_cost
from .recourse import (
    BestDepotTable,
    PenaltyPolicy,
    evaluate_recourse,
    precompute_best_depot,
    route_beta,
)

__all__ = [
    "SaaConfig",
    "BoundEstimate",
    "SaaSolution",
    "LowerBoundResult",
    "UpperBoundResult",
    "SaaReport",
    "gamma_seed",
    "lambda_seed",
    "solve_saa_problem",
    "saa_lower_bound",
    "saa_upper_bound",
    "solve_evp",
    "evaluate_eev",
    "compute_vss",
    "make_report",
]

# Desk-scale guardrails for the exact sampled solver.
SAA_TARGET_LIMIT = 8
SAA_SAMPLE_LIMIT = 10


@dataclass(frozen=True)
class SaaConfig:
    """Replication layout for the lower/upper bound estimators."""

    replications: int = 10
    sample_size: int = 10
    lambda_size: int = 1000
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if self.replications < 2:
            raise ValueError("replications must be >= 2 for the dispersion statistic")
        if self.sample_size < 1 or self.lambda_size < 1:
            raise ValueError("sample_size and lambda_size must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def gamma_seed(seed: int, k: int) -> int:
    """Seed for the k-th replication sample; disjoint from the lambda seed."""
    return seed * 1_000_003 + k + 1


def lambda_seed(seed: int) -> int:
    """Seed for the out-of-sample evaluation set."""
    return seed * 1_000_003 + 999_983


@dataclass(frozen=True)
class BoundEstimate:
    """Mean of replicated values plus two spread statistics.

    ``dispersion`` is the squared spread sum divided by count minus one,
    reported verbatim; ``standard_error`` is the conventional
    sqrt(dispersion / count). ``rigorous`` is false when any underlying solve
    stopped at a search limit.
    """

    mean: float
    dispersion: float
    standard_error: float
    values: tuple[float, ...]
    rigorous: bool
    label: str

    @staticmethod
    def from_values(
        values: Sequence[float], rigorous: bool = True, label: str = ""
    ) -> "BoundEstimate":
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValueError("cannot estimate from zero values")
        mean = math.fsum(vals) / len(vals)
        if len(vals) > 1:
            dispersion = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
        else:
            dispersion = 0.0
        return BoundEstimate(
            mean=float(mean),
            dispersion=float(dispersion),
            standard_error=math.sqrt(dispersion / len(vals)),
            values=vals,
            rigorous=rigorous,
            label=label,
        )


@dataclass(frozen=True)
class SaaSolution:
    routes: RouteSet
    value: float
    optimal: bool
    nodes: int


@dataclass(frozen=True)
class LowerBoundResult:
    estimate: BoundEstimate
    solutions: tuple[SaaSolution, ...]
    gamma_seeds: tuple[int, ...]


@dataclass(frozen=True)
class UpperBoundResult:
    routes: RouteSet
    estimate: BoundEstimate
    per_candidate: tuple[float, ...]
    index: int
    penalized_scenarios: int


@dataclass(frozen=True)
class SaaReport:
    """One instance's evaluation row; estimates absent in lighter modes."""

    instance_name: str
    ev: float
    ev_optimal: bool
    eev: Optional[BoundEstimate]
    lb: Optional[BoundEstimate]
    ub: Optional[BoundEstimate]
    h: Optional[BoundEstimate]
    solution: RouteSet
    vss: Optional[float]
    vss_pct: Optional[float]


def _pattern_score(
    seq: tuple[int, ...],
    instance: Instance,
    problem: DetProblem,
    gamma: ScenarioSet,
    tables: Sequence[BestDepotTable],
) -> Optional[tuple[tuple[int, ...], float]]:
    """Best insertion pattern for one route under the sampled objective.

    Minimizes realized first-stage cost plus probability-weighted recourse
    over all nominally feasible depot insertions; patterns leaving any
    scenario unrecoverable are rejected. Requires metric costs so that the
    first-stage cost alone is a valid pruning bound.
    """
    base = optimal_depot_insertion(seq, problem)
    if base is None:
        return None
    route = (0, *seq, 0)
    last = len(route) - 1
    fuel = problem.fuel
    cost = instance.cost
    cap = instance.fuel_capacity
    exit_fuel = problem.exit_fuel
    nd = instance.n_depots
    probs = [s.probability for s in gamma]

    def leaf_value(realized: tuple[int, ...]) -> Optional[float]:
        total = 0.0
        for a, b in zip(realized, realized[1:]):
            total += float(cost[a, b])
        for k, s in enumerate(gamma):
            b = route_beta(realized, s, instance, tables[k])
            if not math.isfinite(b):
                return None
            total += probs[k] * b
        return total

    best_realized, best_score = base[0], leaf_value(base[0])

    def dfs(pos: int, used: float, stage1: float, prefix: list[int]) -> None:
        nonlocal best_realized, best_score
        if best_score is not None and stage1 > best_score + 1e-12:
            return
        if pos == last:
            realized = tuple(prefix)
            if realized == base[0]:
                return
            value = leaf_value(realized)
            if value is not None and (best_score is None or value < best_score):
                best_score = value
                best_realized = realized
            return
        v = route[pos]
        nxt = route[pos + 1]
        # fly the edge as planned
        u2 = used + fuel[v, nxt]
        if u2 <= cap and (nxt < nd or u2 + exit_fuel[nxt] <= cap):
            prefix.append(nxt)
            dfs(pos + 1, 0.0 if nxt < nd else u2, stage1 + float(cost[v, nxt]), prefix)
            prefix.pop()
        # or insert one refuel depot on the edge
        for d in range(nd):
            if d == v or d == nxt:
                continue
            if used + fuel[v, d] > cap:
                continue
            u3 = float(fuel[d, nxt])
            if u3 > cap or (nxt >= nd and u3 + exit_fuel[nxt] > cap):
                continue
            prefix.append(d)
            prefix.append(nxt)
            dfs(
                pos + 1,
                0.0 if nxt < nd else u3,
                stage1 + float(cost[v, d]) + float(cost[d, nxt]),
                prefix,
            )
            prefix.pop()
            prefix.pop()

    dfs(0, 0.0, 0.0, [0])
    if best_score is None:
        return None
    return best_realized, float(best_score)


def solve_saa_problem(
    instance: Instance,
    gamma: ScenarioSet,
    config: Optional[BnBConfig] = None,
) -> Optional[SaaSolution]:
    """Exact minimizer of sampled first-stage-plus-recourse cost.

    Searches all route sets; each closed route is scored by the best
    insertion pattern against every scenario in the sample. Returns None
    when no route set is recoverable in every scenario.
    """
    if config is None:
        config = BnBConfig()
    if not instance.metric:
        raise ValueError(
            "sampled exact solver requires metric costs: "
            "the pruning bound assumes nonnegative detour increments"
        )
    if instance.vehicles > instance.n_targets:
        raise ValueError("more vehicles than targets: empty routes are not allowed")
    problem = DetProblem(instance)
    tables = tuple(precompute_best_depot(instance, s) for s in gamma)
    memo: dict[tuple[int, ...], Optional[tuple[tuple[int, ...], float]]] = {}

    def score(seq: tuple[int, ...]):
        if seq not in memo:
            memo[seq] = _pattern_score(seq, instance, problem, gamma, tables)
        return memo[seq]

    inc_total = None
    inc_routes = None
    greedy = solve_deterministic_greedy(problem)
    if greedy is not None:
        parts = [score(seq) for seq in greedy.routes.bare_sequences(instance)]
        if all(p is not None for p in parts):
            inc_routes = tuple(p[0] for p in parts)
            inc_total = math.fsum(p[1] for p in parts) + 1e-9
    routes, total, optimal, nodes = _branch_routes(
        problem, config, score, inc_total, inc_routes
    )
    if routes is None:
        return None
    route_set = RouteSet.from_sequences(routes, instance.n_depots)
    # report the canonical composition: first-stage cost plus plan-level
    # recourse, identical to an oracle re-evaluation of the same routes
    value = route_cost(route_set, instance)
    for k, s in enumerate(gamma):
        plan = evaluate_recourse(route_set, s, instance, tables[k])
        value += s.probability * plan.beta
    return SaaSolution(routes=route_set, value=float(value), optimal=optimal, nodes=nodes)


def saa_lower_bound(
    instance: Instance,
    qmap: QuadrantMap,
    config: SaaConfig,
    bnb: Optional[BnBConfig] = None,
) -> LowerBoundResult:
    """Replicated sampled optima and their mean, the statistical lower bound.

    Each replication draws its own scenario sample from a replication-keyed
    stream, solves it exactly, and contributes one value; the estimate is
    marked non-rigorous if any replication stopped early.
    """
    seeds = tuple(gamma_seed(config.seed, k) for k in range(config.replications))
    if lambda_seed(config.seed) in seeds:
        raise ValueError("replication seeds collide with the evaluation seed")

    def solve_one(seed: int) -> SaaSolution:
        sample = sample_scenarios(
            instance, qmap, seed=seed, count=config.sample_size
        )
        sol = solve_saa_problem(instance, sample, bnb)
        if sol is None:
            raise RuntimeError(
                f"replication seed {seed}: no route set is recoverable "
                "in every sampled scenario"
            )
        return sol

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            solutions = tuple(pool.map(solve_one, seeds))
    else:
        solutions = tuple(solve_one(s) for s in seeds)
    estimate = BoundEstimate.from_values(
        [s.value for s in solutions],
        rigorous=all(s.optimal for s in solutions),
        label=f"gamma:seed={config.seed}:N={config.replications}:M={config.sample_size}",
    )
    return LowerBoundResult(estimate=estimate, solutions=solutions, gamma_seeds=seeds)


def _candidate_values(
    routes: RouteSet,
    lam: ScenarioSet,
    instance: Instance,
    tables: Sequence[BestDepotTable],
    nu: float,
) -> tuple[list[float], int]:
    stage1 = route_cost(routes, instance)
    values = []
    penalized = 0
    for k, s in enumerate(lam):
        plan = evaluate_recourse(routes, s, instance, tables[k])
        if plan.feasible:
            values.append(stage1 + plan.beta)
        else:
            values.append(stage1 + nu)
            penalized += 1
    return values, penalized


def saa_upper_bound(
    candidates: Sequence[RouteSet],
    lam: ScenarioSet,
    instance: Instance,
    policy: Optional[PenaltyPolicy] = None,
) -> UpperBoundResult:
    """Out-of-sample cost of each candidate; returns the argmin.

    Per-scenario values are first-stage cost plus that scenario's recourse
    cost, so the estimate mean is the sampled expectation. Scenarios no
    detour plan can recover are charged the penalty and counted.
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    tables = tuple(precompute_best_depot(instance, s) for s in lam)
    if policy is None:
        observed: list[float] = []
        for cand in candidates:
            for k, s in enumerate(lam):
                plan = evaluate_recourse(cand, s, instance, tables[k])
                if plan.feasible:
                    observed.append(plan.beta)
        policy = PenaltyPolicy.from_betas(instance, observed)
    best = None
    per_candidate = []
    for idx, cand in enumerate(candidates):
        values, penalized = _candidate_values(cand, lam, instance, tables, policy.nu)
        estimate = BoundEstimate.from_values(values, rigorous=True, label=lam.label)
        per_candidate.append(estimate.mean)
        key = (estimate.mean, cand.canonical().routes)
        if best is None or key < best[0]:
            best = (key, idx, cand, estimate, penalized)
    _, index, routes, estimate, penalized = best
    return UpperBoundResult(
        routes=routes,
        estimate=estimate,
        per_candidate=tuple(per_candidate),
        index=index,
        penalized_scenarios=penalized,
    )


def solve_evp(
    instance: Instance,
    config: Optional[BnBConfig] = None,
    engine: str = "auto",
    mean_fuel: Optional[np.ndarray] = None,
) -> DetSolution:
    """Mean-value problem: deterministic solve with fuel at its mean.

    The default mean is the instance's nominal matrix; pass ``mean_fuel`` to
    use a distribution mean instead. Engine "auto" solves exactly up to the
    desk-scale limit and greedily beyond it.
    """
    problem = DetProblem(
        instance,
        fuel_override=None if mean_fuel is None else np.array(mean_fuel, dtype=float),
    )
    if engine == "auto":
        engine = "exact" if instance.n_targets <= SAA_TARGET_LIMIT else "greedy"
    if engine == "exact":
        sol = solve_deterministic_exact(problem, config)
    elif engine == "greedy":
        sol = solve_deterministic_greedy(problem)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    if sol is None:
        raise RuntimeError("mean-value problem is infeasible")
    return sol


def evaluate_eev(
    routes: RouteSet,
    lam: ScenarioSet,
    instance: Instance,
    policy: Optional[PenaltyPolicy] = None,
) -> BoundEstimate:
    """Out-of-sample cost of the mean-value solution."""
    return saa_upper_bound([routes], lam, instance, policy).estimate


def compute_vss(report: SaaReport) -> tuple[float, float]:
    """Recompute the value of the stochastic solution from a report.

    All estimates entering the comparison must come from the same evaluation
    sample; mismatched labels raise.
    """
    if report.eev is None:
        raise ValueError("report has no EEV estimate to compare against")
    anchors = [report.ub, report.h]
    present = [est for est in anchors if est is not None]
    if not present:
        raise ValueError("need an upper-bound or heuristic estimate to compare against")
    for est in present:
        if est.label != report.eev.label:
            raise ValueError(
                f"estimate label {est.label!r} does not match EEV label "
                f"{report.eev.label!r}: refusing a mixed-sample comparison"
            )
    best = min(est.mean for est in present)
    vss = report.eev.mean - best
    pct = 0.0 if report.eev.mean == 0 else 100.0 * vss / report.eev.mean
    return float(vss), float(pct)


def make_report(
    instance_name: str,
    ev_solution: DetSolution,
    eev: BoundEstimate,
    solution: RouteSet,
    lb: Optional[BoundEstimate] = None,
    ub: Optional[BoundEstimate] = None,
    h: Optional[BoundEstimate] = None,
) -> SaaReport:
    report = SaaReport(
        instance_name=instance_name,
        ev=ev_solution.cost,
        ev_optimal=ev_solution.optimal,
        eev=eev,
        lb=lb,
        ub=ub,
        h=h,
        solution=solution,
        vss=0.0,
        vss_pct=0.0,
    )
    vss, pct = compute_vss(report)
    return SaaReport(
        instance_name=instance_name,
        ev=ev_solution.cost,
        ev_optimal=ev_solution.optimal,
        eev=eev,
        lb=lb,
        ub=ub,
        h=h,
        solution=solution,
        vss=vss,
        vss_pct=pct,
    )
