"""Two-stage heuristics: scenario-weighted construction and tabu search.

The construction heuristic solves one deterministic problem per scenario,
discounts edge costs by how often scenario solutions use them, and solves a
final deterministic problem under the discounted costs and expected fuel.
The tabu search then walks the swap neighborhood of the penalized two-stage
objective: first-stage cost plus probability-weighted recourse, with a fixed
penalty for scenarios no detour plan can recover.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .detsolve import (
    BnBConfig,
    DetProblem,
    DetSolution,
    optimal_depot_insertion,
    solve_deterministic_exact,
    solve_deterministic_greedy,
)
from .model import Instance, RouteSet, ScenarioSet, nominal_feasibility, route_cost
from .recourse import BestDepotTable, PenaltyPolicy, precompute_best_depot, route_beta

__all__ = [
    "ConstructionWeights",
    "ConstructionResult",
    "TabuParams",
    "TabuList",
    "TwoStageEvaluator",
    "Evaluation",
    "TabuResult",
    "construction_weights",
    "construct",
    "construct_detailed",
    "neighborhood",
    "tabu_improve",
    "EXACT_TARGET_LIMIT",
]

# Beyond this many targets the per-scenario subproblems switch to the greedy
# solver; the exact search is exponential in the target count.
EXACT_TARGET_LIMIT = 8


@dataclass(frozen=True)
class ConstructionWeights:
    """Edge tables driving the final construction solve.

    ``discount[i, j]`` is one minus the total probability of scenarios whose
    solution uses edge (i, j); ``weighted_cost`` is the elementwise product
    with the instance cost; ``expected_fuel`` is the probability-weighted
    fuel across all scenarios.
    """

    discount: np.ndarray
    weighted_cost: np.ndarray
    expected_fuel: np.ndarray

    def __post_init__(self) -> None:
        for mat in (self.discount, self.weighted_cost, self.expected_fuel):
            mat.flags.writeable = False


@dataclass(frozen=True)
class ConstructionResult:
    routes: RouteSet
    weights: ConstructionWeights
    scenario_solutions: tuple[tuple[int, Optional[RouteSet]], ...]
    engine: str
    fallback: str  # "none", "reinserted", or "scenario_solution"


@dataclass(frozen=True)
class TabuParams:
    """Knobs for the tabu search; defaults are project choices, not givens."""

    iterations: int = 500
    stall_limit: int = 100
    tenure: Optional[int] = None
    penalty: Optional[float] = None

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 1 <= self.stall_limit <= self.iterations:
            raise ValueError("stall_limit must be in [1, iterations]")
        if self.tenure is not None and self.tenure < 1:
            raise ValueError("tenure must be >= 1")

    def resolved_tenure(self, n_targets: int) -> int:
        if self.tenure is not None:
            return self.tenure
        return max(7, math.ceil(0.3 * n_targets))


class TabuList:
    """Unordered target-pair swaps with per-entry expiry iterations."""

    def __init__(self) -> None:
        self._expiry: dict[tuple[int, int], int] = {}

    def add(self, move: tuple[int, int], iteration: int, tenure: int) -> None:
        self._expiry[move] = iteration + tenure

    def active(self, move: tuple[int, int], iteration: int) -> bool:
        return self._expiry.get(move, 0) >= iteration

    def __len__(self) -> int:
        return len(self._expiry)


def _dispatch_engine(
    problem: DetProblem, engine: str, config: Optional[BnBConfig]
) -> Optional[DetSolution]:
    if engine == "exact":
        return solve_deterministic_exact(problem, config)
    if engine == "greedy":
        return solve_deterministic_greedy(problem)
    raise ValueError(f"unknown engine {engine!r}")


def _used_edges(routes: RouteSet) -> set[tuple[int, int]]:
    # indicator semantics: an edge flown twice still counts once
    edges: set[tuple[int, int]] = set()
    for route in routes.routes:
        edges.update(zip(route, route[1:]))
    return edges


def construction_weights(
    instance: Instance,
    delta: ScenarioSet,
    solutions: Sequence[tuple[int, Optional[RouteSet]]],
) -> ConstructionWeights:
    """Discount, weighted-cost, and expected-fuel tables from per-scenario
    solutions, processed in the given order."""
    n = instance.n_vertices
    by_id = {s.id: s for s in delta}
    discount = np.ones((n, n), dtype=float)
    for sid, routes in solutions:
        if routes is None:
            continue
        p = by_id[sid].probability
        for i, j in sorted(_used_edges(routes)):
            discount[i, j] -= p
    expected = np.zeros((n, n), dtype=float)
    for sid, _ in solutions:
        s = by_id[sid]
        expected += s.probability * s.fuel
    return ConstructionWeights(
        discount=discount,
        weighted_cost=instance.cost * discount,
        expected_fuel=expected,
    )


def _scenario_order(delta: ScenarioSet):
    return sorted(delta, key=lambda s: (-s.probability, s.id))


def construct_detailed(
    instance: Instance,
    delta: ScenarioSet,
    config: Optional[BnBConfig] = None,
    engine: str = "auto",
) -> ConstructionResult:
    """Scenario-weighted construction with full intermediate tables.

    Scenarios are processed in decreasing probability order (id tie-break).
    Per-scenario problems that have no feasible solution contribute nothing
    to the discount table but keep their weight in the expected fuel.
    """
    if len(delta) == 0:
        raise ValueError("construction needs at least one scenario")
    if engine == "auto":
        engine = "exact" if instance.n_targets <= EXACT_TARGET_LIMIT else "greedy"
    ordered = _scenario_order(delta)
    solutions: list[tuple[int, Optional[RouteSet]]] = []
    for s in ordered:
        problem = DetProblem(instance, fuel_override=np.array(s.fuel))
        sol = _dispatch_engine(problem, engine, config)
        solutions.append((s.id, None if sol is None else sol.routes))
    weights = construction_weights(instance, delta, solutions)
    final_problem = DetProblem(
        instance,
        cost_override=weights.weighted_cost.copy(),
        fuel_override=weights.expected_fuel.copy(),
    )
    final = _dispatch_engine(final_problem, engine, config)

    routes, fallback = None, "none"
    if final is not None:
        if nominal_feasibility(final.routes, instance)[0]:
            routes = final.routes
        else:
            # expected fuel can be laxer than nominal: re-insert depots
            nominal_problem = DetProblem(instance)
            reinserted = []
            for seq in final.routes.bare_sequences(instance):
                ins = optimal_depot_insertion(seq, nominal_problem)
                if ins is None:
                    reinserted = None
                    break
                reinserted.append(ins[0])
            if reinserted is not None:
                routes = RouteSet.from_sequences(reinserted, instance.n_depots)
                fallback = "reinserted"
    if routes is None:
        routes = _best_feasible_fallback(instance, delta, solutions)
        fallback = "scenario_solution"
    return ConstructionResult(
        routes=routes,
        weights=weights,
        scenario_solutions=tuple(solutions),
        engine=engine,
        fallback=fallback,
    )


def _best_feasible_fallback(
    instance: Instance,
    delta: ScenarioSet,
    solutions: Sequence[tuple[int, Optional[RouteSet]]],
) -> RouteSet:
    candidates: list[RouteSet] = []
    for _, routes in solutions:
        if routes is not None and nominal_feasibility(routes, instance)[0]:
            candidates.append(routes)
    nominal = solve_deterministic_greedy(DetProblem(instance))
    if nominal is not None:
        candidates.append(nominal.routes)
    if not candidates:
        raise RuntimeError("construction found no nominally feasible routes")
    evaluator = TwoStageEvaluator(instance, delta)
    observed: list[float] = []
    parts = []
    for cand in candidates:
        part = evaluator.parts(cand.bare_sequences(instance))
        parts.append(part)
        if part is not None:
            observed.extend(part[2])
    evaluator.policy = PenaltyPolicy.from_betas(instance, observed)
    scored = []
    for cand, part in zip(candidates, parts):
        if part is None:
            continue
        ev = evaluator.evaluate(cand.bare_sequences(instance))
        scored.append((ev.objective, ev.routes.canonical().routes, ev.routes))
    if not scored:
        raise RuntimeError("construction found no nominally feasible routes")
    scored.sort(key=lambda x: (x[0], x[1]))
    return scored[0][2]


def construct(
    instance: Instance,
    delta: ScenarioSet,
    config: Optional[BnBConfig] = None,
    engine: str = "auto",
) -> RouteSet:
    """Scenario-weighted construction; see ``construct_detailed``."""
    return construct_detailed(instance, delta, config, engine).routes


@dataclass(frozen=True)
class Evaluation:
    """One candidate under the penalized two-stage objective."""

    bare: tuple[tuple[int, ...], ...]
    routes: RouteSet
    stage1: float
    betas: tuple[float, ...]
    objective: float

    @property
    def feasible(self) -> bool:
        return all(math.isfinite(b) for b in self.betas)


class TwoStageEvaluator:
    """Penalized two-stage objective with per-route memoization.

    Depot insertion and per-route recourse are cached by bare sequence and
    realized route, which keeps repeated neighborhood scans cheap. The
    penalty is calibrated once (largest recourse cost seen at calibration
    plus twice all home round trips) and then held fixed.
    """

    def __init__(
        self,
        instance: Instance,
        delta: ScenarioSet,
        penalty: Optional[float] = None,
    ) -> None:
        self.instance = instance
        self.delta = delta
        self.tables: tuple[BestDepotTable, ...] = tuple(
            precompute_best_depot(instance, s) for s in delta
        )
        self._problem = DetProblem(instance)
        self._insert: dict[tuple[int, ...], Optional[tuple[tuple[int, ...], float]]] = {}
        self._beta: dict[tuple[tuple[int, ...], int], float] = {}
        self.policy: Optional[PenaltyPolicy] = (
            None if penalty is None else PenaltyPolicy(nu=penalty, rule="user supplied")
        )

    def insert(self, seq: tuple[int, ...]) -> Optional[tuple[tuple[int, ...], float]]:
        if seq not in self._insert:
            self._insert[seq] = optimal_depot_insertion(seq, self._problem)
        return self._insert[seq]

    def route_betas(self, route: tuple[int, ...]) -> list[float]:
        out = []
        for k, s in enumerate(self.delta):
            key = (route, s.id)
            if key not in self._beta:
                self._beta[key] = route_beta(route, s, self.instance, self.tables[k])
            out.append(self._beta[key])
        return out

    def parts(
        self, bare: Sequence[tuple[int, ...]]
    ) -> Optional[tuple[tuple[tuple[int, ...], ...], float, tuple[float, ...]]]:
        """Realized routes, first-stage cost, per-scenario recourse sums."""
        realized = []
        stage1 = 0.0
        betas = [0.0] * len(self.delta)
        for seq in bare:
            ins = self.insert(tuple(seq))
            if ins is None:
                return None
            realized.append(ins[0])
            stage1 += ins[1]
            for k, b in enumerate(self.route_betas(ins[0])):
                betas[k] = betas[k] + b
        return tuple(realized), float(stage1), tuple(betas)

    def calibrate(self, bare: Sequence[tuple[int, ...]]) -> None:
        parts = self.parts(bare)
        if parts is None:
            raise ValueError("cannot calibrate penalty: routes are not insertable")
        self.policy = PenaltyPolicy.from_betas(self.instance, parts[2])

    def evaluate(self, bare: Sequence[tuple[int, ...]]) -> Optional[Evaluation]:
        if self.policy is None:
            raise RuntimeError("penalty not calibrated")
        parts = self.parts(bare)
        if parts is None:
            return None
        realized, stage1, betas = parts
        nu = self.policy.nu
        objective = stage1
        for k, s in enumerate(self.delta):
            term = betas[k] if math.isfinite(betas[k]) else nu
            objective += s.probability * term
        return Evaluation(
            bare=tuple(tuple(q) for q in bare),
            routes=RouteSet(realized),
            stage1=stage1,
            betas=betas,
            objective=float(objective),
        )


def _swap_targets(
    bare: tuple[tuple[int, ...], ...], t1: int, t2: int
) -> tuple[tuple[int, ...], ...]:
    out = []
    for seq in bare:
        out.append(tuple(t2 if v == t1 else t1 if v == t2 else v for v in seq))
    return tuple(out)


def _target_pairs(instance: Instance):
    targets = list(instance.target_indices)
    for a in range(len(targets)):
        for b in range(a + 1, len(targets)):
            yield (targets[a], targets[b])


def neighborhood(current: RouteSet, instance: Instance) -> list[RouteSet]:
    """All route sets reachable by swapping two targets, re-inserted under
    nominal fuel; swaps whose routes cannot be made feasible are dropped."""
    bare = current.bare_sequences(instance)
    problem = DetProblem(instance)
    out = []
    for t1, t2 in _target_pairs(instance):
        swapped = _swap_targets(bare, t1, t2)
        realized = []
        ok = True
        for seq in swapped:
            ins = optimal_depot_insertion(seq, problem)
            if ins is None:
                ok = False
                break
            realized.append(ins[0])
        if ok:
            out.append(RouteSet(tuple(realized)))
    return out


@dataclass(frozen=True)
class TabuResult:
    routes: RouteSet
    objective: float
    stage1: float
    betas: tuple[float, ...]
    feasible: bool
    iterations: int
    move_log: tuple[tuple, ...]
    warning: Optional[str]


def tabu_improve(
    initial: RouteSet,
    delta: ScenarioSet,
    params: TabuParams,
    instance: Instance,
) -> TabuResult:
    """Swap-neighborhood tabu search on the penalized two-stage objective.

    Each iteration scans every target swap of the current solution, picks the
    best admissible improving neighbor (admissible: not tabu, or beating the
    best-so-far objective), else the best non-tabu neighbor, and marks the
    move tabu for the tenure. The best solution is only replaced by feasible
    improvements; the current solution resets to it after ceil(sqrt(k))
    non-improving iterations, and the search stops after the stall limit.

    Move log rows are (iteration, kind, move, objective, aspiration) with
    kind one of "move", "stagnant", "reset".
    """
    tenure = params.resolved_tenure(instance.n_targets)
    evaluator = TwoStageEvaluator(instance, delta, penalty=params.penalty)
    bare0 = initial.bare_sequences(instance)
    if evaluator.policy is None:
        evaluator.calibrate(bare0)
    current = evaluator.evaluate(bare0)
    if current is None:
        raise ValueError("initial routes cannot be made nominally feasible")
    best = current
    tabu = TabuList()
    log: list[tuple] = []
    since_improve = 0
    since_reset = 0
    iterations = 0
    for k in range(1, params.iterations + 1):
        iterations = k
        chosen = None  # (objective, move, evaluation, aspiration)
        fallback = None
        for move in _target_pairs(instance):
            t1, t2 = move
            ev = evaluator.evaluate(_swap_targets(current.bare, t1, t2))
            if ev is None:
                continue
            is_tabu = tabu.active(move, k)
            aspires = ev.objective < best.objective
            if is_tabu and not aspires:
                continue
            cand = (ev.objective, move)
            if ev.objective < current.objective:
                if chosen is None or cand < (chosen[0], chosen[1]):
                    chosen = (ev.objective, move, ev, is_tabu and aspires)
            if not is_tabu:
                if fallback is None or cand < (fallback[0], fallback[1]):
                    fallback = (ev.objective, move, ev, False)
        if chosen is None:
            chosen = fallback
        improved = False
        if chosen is None:
            log.append((k, "stagnant", None, current.objective, False))
        else:
            _, move, ev, aspiration = chosen
            current = ev
            tabu.add(move, k, tenure)
            log.append((k, "move", move, ev.objective, aspiration))
            if ev.feasible and ev.objective < best.objective:
                best = ev
                improved = True
        if improved:
            since_improve = 0
            since_reset = 0
        else:
            since_improve += 1
            since_reset += 1
        if since_improve >= params.stall_limit:
            break
        if since_reset >= math.ceil(math.sqrt(k)):
            current = best
            since_reset = 0
            log.append((k, "reset", None, current.objective, False))
    warning = None
    if not best.feasible:
        warning = "no recoverable solution found; returning best penalized candidate"
    return TabuResult(
        routes=best.routes,
        objective=best.objective,
        stage1=best.stage1,
        betas=best.betas,
        feasible=best.feasible,
        iterations=iterations,
        move_log=tuple(log),
        warning=warning,
    )
