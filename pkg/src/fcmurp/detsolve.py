"""Deterministic solvers: exact branch and bound plus a greedy incumbent.

The exact solver enumerates target-to-vehicle assignments and visit orders by
appending one target at a time, closing routes in canonical first-target
order so every route multiset is met exactly once. Closed routes are scored
immediately by the depot-insertion DP, which both completes the costing and
catches fuel-infeasible sequences early. The search is intended for roughly a
dozen targets; beyond that use the greedy solver or the tabu search.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .model import Instance, RouteSet, min_entry_fuel, min_exit_fuel

__all__ = [
    "DetProblem",
    "BnBConfig",
    "DetSolution",
    "optimal_depot_insertion",
    "solve_deterministic_exact",
    "solve_deterministic_greedy",
    "branching_order",
]


@dataclass(frozen=True)
class DetProblem:
    """A deterministic routing problem, optionally with matrix overrides.

    Overrides replace the instance's cost or fuel for every ordered pair;
    structure (vertices, vehicles, capacity) always comes from the instance.
    """

    instance: Instance
    cost_override: Optional[np.ndarray] = None
    fuel_override: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        n = self.instance.n_vertices
        for name, mat in (("cost_override", self.cost_override), ("fuel_override", self.fuel_override)):
            if mat is not None:
                if mat.shape != (n, n):
                    raise ValueError(f"{name} shape {mat.shape} != ({n}, {n})")
                mat.flags.writeable = False

    @cached_property
    def cost(self) -> np.ndarray:
        return self.cost_override if self.cost_override is not None else self.instance.cost

    @cached_property
    def fuel(self) -> np.ndarray:
        return self.fuel_override if self.fuel_override is not None else self.instance.nominal_fuel

    @cached_property
    def exit_fuel(self) -> np.ndarray:
        """Cheapest fuel from each vertex to any depot under the active matrix."""
        return min_exit_fuel(self.fuel, self.instance.n_depots)

    @cached_property
    def entry_fuel(self) -> np.ndarray:
        return min_entry_fuel(self.fuel, self.instance.n_depots)

    @cached_property
    def min_incoming_cost(self) -> np.ndarray:
        c = np.array(self.cost, dtype=float)
        np.fill_diagonal(c, np.inf)
        out = c.min(axis=0)
        out.flags.writeable = False
        return out

    @cached_property
    def min_insertion_delta(self) -> float:
        """Smallest possible cost delta of a single depot insertion.

        Non-negative for metric costs; with overrides it can go negative, in
        which case completion bounds must budget one insertion per edge.
        """
        cost = self.cost
        n = self.instance.n_vertices
        best = math.inf
        for d in self.instance.depot_indices:
            via = cost[:, d][:, None] + cost[d, :][None, :] - cost
            mask = ~np.eye(n, dtype=bool)
            mask[d, :] = False
            mask[:, d] = False
            if mask.any():
                best = min(best, float(via[mask].min()))
        return best


@dataclass(frozen=True)
class BnBConfig:
    """Search limits and pruning switches for the exact solver."""

    node_limit: Optional[int] = None
    time_limit: Optional[float] = None
    strengthened_pruning: bool = True
    incumbent: Optional[RouteSet] = None


@dataclass(frozen=True)
class DetSolution:
    routes: RouteSet
    cost: float
    optimal: bool
    nodes: int


class _SearchLimit(Exception):
    pass


# Completion bounds are mathematically admissible but folded in a different
# order than leaf totals, so at exact ties they can overshoot by an ulp and
# prune the lexicographically preferred twin. The slack keeps tie leaves
# reachable; it only ever widens the search.
_BOUND_EPS = 1e-9


def branching_order(problem: DetProblem) -> tuple[int, ...]:
    """Targets sorted by decreasing cost from the home depot, id tie-break."""
    inst = problem.instance
    cost = problem.cost
    return tuple(
        sorted(inst.target_indices, key=lambda t: (-float(cost[0, t]), t))
    )


def optimal_depot_insertion(
    seq: Sequence[int], problem: DetProblem
) -> Optional[tuple[tuple[int, ...], float]]:
    """Cheapest depot insertion making one target sequence fuel feasible.

    At most one depot per edge and any depot may be used, including the home
    depot. Feasibility means every refuel-to-refuel stretch burns at most the
    capacity and each target is reached with enough fuel left to exit to some
    depot. Returns the realized route and its cost, or None when no insertion
    pattern works.
    """
    inst = problem.instance
    if not seq:
        raise ValueError("cannot route an empty target sequence")
    route = (0, *seq, 0)
    fuel = problem.fuel
    cost = problem.cost
    cap = inst.fuel_capacity
    exit_fuel = problem.exit_fuel
    nd = inst.n_depots
    last = len(route) - 1
    # node (p, d): depot d inserted on edge p; value = (cost delta, pattern)
    node_val: list[list] = [[None] * nd for _ in range(last)]
    end_val = None

    def sweep(value, pos: int, running: float) -> None:
        nonlocal end_val
        while True:
            v = route[pos]
            if running > cap:
                return
            if v >= nd and running + exit_fuel[v] > cap:
                return
            if pos == last:
                if end_val is None or value < end_val:
                    end_val = value
                return
            nxt = route[pos + 1]
            vals = node_val[pos]
            for d in range(nd):
                if d == v or d == nxt:
                    continue
                if running + fuel[v, d] <= cap:
                    cand = (
                        value[0] + (cost[v, d] + cost[d, nxt]) - cost[v, nxt],
                        value[1] + ((pos, d),),
                    )
                    if vals[d] is None or cand < vals[d]:
                        vals[d] = cand
            running = running + fuel[v, nxt]
            pos += 1

    sweep((0.0, ()), 0, 0.0)
    for p in range(last):
        nxt = route[p + 1]
        for d in range(nd):
            val = node_val[p][d]
            if val is not None:
                sweep(val, p + 1, float(fuel[d, nxt]))
    if end_val is None:
        return None
    pattern = dict(end_val[1])
    realized: list[int] = [0]
    for p in range(last):
        if p in pattern:
            realized.append(pattern[p])
        realized.append(route[p + 1])
    total = 0.0
    for a, b in zip(realized, realized[1:]):
        total += cost[a, b]
    return tuple(realized), float(total)


def _min_arrival_step(
    problem: DetProblem, prev_best: float, prev_vertex: int, vertex: int
) -> float:
    """Lower bound on arrival fuel at ``vertex`` over all insertion patterns."""
    fuel = problem.fuel
    cap = problem.instance.fuel_capacity
    best = prev_best + fuel[prev_vertex, vertex]
    for d in problem.instance.depot_indices:
        if d == prev_vertex or d == vertex:
            continue
        if prev_best + fuel[prev_vertex, d] <= cap and fuel[d, vertex] < best:
            best = float(fuel[d, vertex])
    return float(best)


def _branch_routes(
    problem: DetProblem,
    config: BnBConfig,
    score_route: Callable[[tuple[int, ...]], Optional[tuple[tuple[int, ...], float]]],
    incumbent_total: Optional[float] = None,
    incumbent_routes: Optional[tuple[tuple[int, ...], ...]] = None,
) -> tuple[Optional[tuple[tuple[int, ...], ...]], float, bool, int]:
    """Shared search over target partitions and orders.

    ``score_route`` turns a closed bare sequence into a realized route and
    its exact contribution to the objective (None when infeasible); the
    completion bound only uses edge costs, so scores must never undercut the
    bare sequence cost by more than the budgeted insertion slack.
    """
    inst = problem.instance
    cost = problem.cost
    cap = inst.fuel_capacity
    exit_fuel = problem.exit_fuel
    m = inst.vehicles
    order = branching_order(problem)
    rank = {t: i for i, t in enumerate(order)}
    min_in = problem.min_incoming_cost
    slack_unit = min(0.0, problem.min_insertion_delta)
    strengthened = config.strengthened_pruning

    best_total = math.inf if incumbent_total is None else incumbent_total
    best_routes = incumbent_routes
    best_key = None if incumbent_routes is None else tuple(sorted(incumbent_routes))
    nodes = 0
    started = time.perf_counter()
    deadline = None if config.time_limit is None else started + config.time_limit

    def tick() -> None:
        nonlocal nodes
        nodes += 1
        if config.node_limit is not None and nodes > config.node_limit:
            raise _SearchLimit()
        if deadline is not None and nodes % 256 == 0 and time.perf_counter() > deadline:
            raise _SearchLimit()

    def completion_bound(acc: float, open_bare: float, open_seq, unvisited, m_rem: int) -> float:
        lb = acc + open_bare
        ret_candidates = [float(cost[open_seq[-1], 0])]
        for u in unvisited:
            lb += float(min_in[u])
            ret_candidates.append(float(cost[u, 0]))
        lb += min(ret_candidates)
        if m_rem and unvisited:
            ret_min = min(float(cost[u, 0]) for u in unvisited)
            lb += m_rem * ret_min
        if slack_unit < 0.0:
            spots = len(open_seq) + 1 + len(unvisited) + m_rem
            lb += spots * slack_unit
        return lb

    def descend(
        open_seq: list[int],
        open_first_rank: int,
        open_bare: float,
        open_fuel_lb: float,
        unvisited: set[int],
        m_rem: int,
        acc: float,
        closed: list[tuple[int, ...]],
    ) -> None:
        nonlocal best_total, best_routes, best_key
        tick()
        last_v = open_seq[-1]
        # extend the open route
        if len(unvisited) > m_rem:
            for t in order:
                if t not in unvisited:
                    continue
                fuel_lb = _min_arrival_step(problem, open_fuel_lb, last_v, t)
                if fuel_lb > cap:
                    continue
                if strengthened and fuel_lb + exit_fuel[t] > cap:
                    continue
                bare = open_bare + float(cost[last_v, t])
                rest = unvisited - {t}
                bound = completion_bound(acc, bare, open_seq + [t], rest, m_rem)
                if bound > best_total + _BOUND_EPS:
                    continue
                open_seq.append(t)
                descend(open_seq, open_first_rank, bare, fuel_lb, rest, m_rem, acc, closed)
                open_seq.pop()
        # close the open route
        if m_rem == 0 and unvisited:
            return
        if m_rem > 0 and not unvisited:
            return
        end_lb = _min_arrival_step(problem, open_fuel_lb, last_v, 0)
        if end_lb > cap:
            return
        scored = score_route(tuple(open_seq))
        if scored is None:
            return
        realized, score = scored
        acc2 = acc + score
        closed.append(realized)
        if m_rem == 0:
            key = tuple(sorted(closed))
            if acc2 < best_total or (acc2 == best_total and (best_key is None or key < best_key)):
                best_total = acc2
                best_routes = tuple(closed)
                best_key = key
        else:
            for f in order:
                if f not in unvisited or rank[f] <= open_first_rank:
                    continue
                entry_lb = _min_arrival_step(problem, 0.0, 0, f)
                if entry_lb > cap:
                    continue
                if strengthened and entry_lb + exit_fuel[f] > cap:
                    continue
                bare = float(cost[0, f])
                rest = unvisited - {f}
                bound = completion_bound(acc2, bare, [f], rest, m_rem - 1)
                if bound > best_total + _BOUND_EPS:
                    continue
                descend([f], rank[f], bare, entry_lb, rest, m_rem - 1, acc2, closed)
        closed.pop()

    optimal = True
    try:
        targets = set(inst.target_indices)
        for f in order:
            entry_lb = _min_arrival_step(problem, 0.0, 0, f)
            if entry_lb > cap:
                continue
            if strengthened and entry_lb + exit_fuel[f] > cap:
                continue
            rest = targets - {f}
            bound = completion_bound(0.0, float(cost[0, f]), [f], rest, m - 1)
            if bound > best_total + _BOUND_EPS:
                continue
            descend([f], rank[f], float(cost[0, f]), entry_lb, rest, m - 1, 0.0, [])
    except _SearchLimit:
        optimal = False
    return best_routes, best_total, optimal, nodes


def solve_deterministic_exact(
    problem: DetProblem | Instance, config: Optional[BnBConfig] = None
) -> Optional[DetSolution]:
    """Minimum-cost routes under the active matrices, or None if infeasible.

    The optimality flag drops to false when a node or time limit interrupts
    the search; the best incumbent found so far is still returned.
    """
    if isinstance(problem, Instance):
        problem = DetProblem(problem)
    if config is None:
        config = BnBConfig()
    inst = problem.instance
    if inst.vehicles > inst.n_targets:
        raise ValueError("more vehicles than targets: empty routes are not allowed")
    memo: dict[tuple[int, ...], Optional[tuple[tuple[int, ...], float]]] = {}

    def score(seq: tuple[int, ...]):
        if seq not in memo:
            memo[seq] = optimal_depot_insertion(seq, problem)
        return memo[seq]

    # Seeding slightly above the incumbent cost forces the search to revisit
    # the optimum as a leaf, so the returned solution always carries the
    # canonical accumulation order and tie-break key.
    inc_total = None
    inc_routes = None
    if config.incumbent is not None:
        inc_routes = config.incumbent.routes
        inc_total = _BOUND_EPS
        for r in inc_routes:
            for a, b in zip(r, r[1:]):
                inc_total += float(problem.cost[a, b])
    else:
        greedy = solve_deterministic_greedy(problem)
        if greedy is not None:
            inc_routes = greedy.routes.routes
            inc_total = greedy.cost + _BOUND_EPS
    routes, total, optimal, nodes = _branch_routes(
        problem, config, score, inc_total, inc_routes
    )
    if routes is None:
        return None
    return DetSolution(
        routes=RouteSet.from_sequences(routes, inst.n_depots),
        cost=float(total),
        optimal=optimal,
        nodes=nodes,
    )


def _two_opt(seq: list[int], cost: np.ndarray) -> list[int]:
    """In-place style 2-opt on one bare sequence; safe for asymmetric costs."""

    def bare_cost(s: Sequence[int]) -> float:
        tour = (0, *s, 0)
        return float(sum(cost[a, b] for a, b in zip(tour, tour[1:])))

    best = list(seq)
    best_cost = bare_cost(best)
    improved = True
    while improved:
        improved = False
        for i in range(len(best) - 1):
            for j in range(i + 1, len(best)):
                cand = best[:i] + best[i : j + 1][::-1] + best[j + 1 :]
                cand_cost = bare_cost(cand)
                if cand_cost < best_cost - 1e-12:
                    best, best_cost = cand, cand_cost
                    improved = True
    return best


def solve_deterministic_greedy(problem: DetProblem | Instance) -> Optional[DetSolution]:
    """Nearest-neighbor assignment, 2-opt per route, then depot insertion.

    Quick incumbent generator: structurally valid and fuel feasible when it
    returns at all, with cost at or above the exact optimum.
    """
    if isinstance(problem, Instance):
        problem = DetProblem(problem)
    inst = problem.instance
    if inst.vehicles > inst.n_targets:
        raise ValueError("more vehicles than targets: empty routes are not allowed")
    cost = problem.cost
    m = inst.vehicles
    unvisited = set(inst.target_indices)
    seqs: list[list[int]] = [[] for _ in range(m)]
    while unvisited:
        empties = [r for r in range(m) if not seqs[r]]
        must_fill = len(unvisited) <= len(empties)
        candidates = []
        for r in range(m):
            if not seqs[r]:
                if empties and r != empties[0]:
                    continue
            elif must_fill:
                continue
            last = seqs[r][-1] if seqs[r] else 0
            for u in sorted(unvisited):
                candidates.append((float(cost[last, u]), r, u))
        c, r, u = min(candidates)
        seqs[r].append(u)
        unvisited.remove(u)
    realized: list[tuple[int, ...]] = []
    total = 0.0
    for seq in seqs:
        seq = _two_opt(seq, cost)
        result = optimal_depot_insertion(seq, problem)
        if result is None:
            return None
        route, rcost = result
        realized.append(route)
        total += rcost
    return DetSolution(
        routes=RouteSet.from_sequences(realized, inst.n_depots),
        cost=float(total),
        optimal=False,
        nodes=0,
    )
