"""Core problem data types and route-level checks.

Vertices are addressed by integer index into ``Instance.vertices``. Index 0 is
always the home depot, indices ``1..k`` the refuel depots, and the remaining
indices the targets. Routes are tuples of vertex indices that start and end at
index 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "RouteStructureError",
    "Instance",
    "Scenario",
    "ScenarioSet",
    "RouteSet",
    "FuelProfile",
    "RecoursePlan",
    "ValidationIssue",
    "ValidationResult",
    "make_instance",
    "euclidean_matrix",
    "is_metric",
    "validate_instance",
    "route_cost",
    "nominal_feasibility",
    "edge_vector",
    "routes_from_edge_vector",
]

PROB_TOL = 1e-9


class RouteStructureError(ValueError):
    """A route set violates the structural contract (not a cost question)."""


def euclidean_matrix(coords: np.ndarray) -> np.ndarray:
    """Dense pairwise Euclidean distances; diagonal left at zero."""
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def is_metric(matrix: np.ndarray, tol: float = 1e-9) -> bool:
    """True when the matrix satisfies the triangle inequality within tol."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    for k in range(n):
        # broadcast check of m[i,j] <= m[i,k] + m[k,j] + tol for all i, j
        if np.any(m > m[:, k][:, None] + m[k, :][None, :] + tol):
            return False
    return True


@dataclass(frozen=True)
class Instance:
    """A routing instance over one home depot, refuel depots, and targets.

    ``cost`` and ``nominal_fuel`` are dense float64 matrices over the full
    vertex ordering; diagonal entries are ignored. ``lam`` is the maximum
    depot-to-target distance (home depot included) and ``fuel_capacity`` the
    per-segment fuel budget between consecutive depot visits.
    """

    vertices: tuple[str, ...]
    n_refuel: int
    coordinates: np.ndarray
    cost: np.ndarray
    nominal_fuel: np.ndarray
    vehicles: int
    fuel_capacity: float
    lam: float
    grid: Optional[float] = None
    metric: bool = True

    def __post_init__(self) -> None:
        for name in ("coordinates", "cost", "nominal_fuel"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_depots(self) -> int:
        return self.n_refuel + 1

    @property
    def n_targets(self) -> int:
        return self.n_vertices - self.n_depots

    @property
    def depot_indices(self) -> range:
        return range(0, self.n_depots)

    @property
    def target_indices(self) -> range:
        return range(self.n_depots, self.n_vertices)

    def is_depot(self, v: int) -> bool:
        return v < self.n_depots

    def is_target(self, v: int) -> bool:
        return v >= self.n_depots

    def index_of(self, vertex_id: str) -> int:
        return self.vertices.index(vertex_id)

    @cached_property
    def min_exit_fuel(self) -> np.ndarray:
        """Per-vertex cheapest nominal fuel to reach any depot."""
        return min_exit_fuel(self.nominal_fuel, self.n_depots)

    @cached_property
    def min_entry_fuel(self) -> np.ndarray:
        """Per-vertex cheapest nominal fuel from any depot."""
        return min_entry_fuel(self.nominal_fuel, self.n_depots)


def min_exit_fuel(fuel: np.ndarray, n_depots: int) -> np.ndarray:
    out = fuel[:, :n_depots].min(axis=1)
    out.flags.writeable = False
    return out


def min_entry_fuel(fuel: np.ndarray, n_depots: int) -> np.ndarray:
    out = fuel[:n_depots, :].min(axis=0)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Scenario:
    """One realization of the random fuel-consumption matrix."""

    id: int
    probability: float
    fuel: np.ndarray

    def __post_init__(self) -> None:
        self.fuel.flags.writeable = False
        if not (0.0 < self.probability <= 1.0):
            raise ValueError(f"scenario {self.id}: probability {self.probability} outside (0, 1]")


@dataclass(frozen=True)
class ScenarioSet:
    """An ordered collection of scenarios whose probabilities sum to one."""

    scenarios: tuple[Scenario, ...]
    label: str = ""

    def __post_init__(self) -> None:
        total = math.fsum(s.probability for s in self.scenarios)
        if self.scenarios and abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"scenario probabilities sum to {total!r}, expected 1")
        ids = [s.id for s in self.scenarios]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate scenario ids")

    def __len__(self) -> int:
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)


@dataclass(frozen=True)
class RouteSet:
    """Exactly one route per vehicle; every route starts and ends at depot 0."""

    routes: tuple[tuple[int, ...], ...]

    @staticmethod
    def from_sequences(routes: Iterable[Sequence[int]], n_depots: int) -> "RouteSet":
        """Build a route set, collapsing consecutive duplicate depot visits."""
        cleaned = []
        for seq in routes:
            out: list[int] = []
            for v in seq:
                if out and v == out[-1] and v < n_depots:
                    continue
                out.append(v)
            cleaned.append(tuple(out))
        return RouteSet(tuple(cleaned))

    def canonical(self) -> "RouteSet":
        """Route order normalized for comparisons; visit order untouched."""
        return RouteSet(tuple(sorted(self.routes)))

    def bare_sequences(self, instance: Instance) -> tuple[tuple[int, ...], ...]:
        """Per-route target sequences with every depot visit stripped."""
        return tuple(
            tuple(v for v in route if instance.is_target(v)) for route in self.routes
        )


@dataclass(frozen=True)
class FuelProfile:
    """Cumulative fuel on arrival at each vertex past the route start.

    Values reset to zero after every depot visit; entry ``[r][p]`` is the fuel
    burned since the last refuel when arriving at ``routes[r][p + 1]``.
    """

    per_route: tuple[tuple[float, ...], ...]

    def max_segment(self) -> float:
        return max((v for route in self.per_route for v in route), default=0.0)


@dataclass(frozen=True)
class RecoursePlan:
    """Second-stage repair of one route set under one scenario.

    ``detoured_edges`` holds ``(route_index, edge_position)`` pairs; the edge
    at position p connects route vertices p and p+1. ``inserted_depots`` maps
    each detoured edge to the depot spliced into it. ``beta`` is the summed
    detour cost, ``inf`` when the scenario is not recoverable.
    """

    scenario_id: int
    detoured_edges: tuple[tuple[int, int], ...]
    inserted_depots: Mapping[tuple[int, int], int]
    beta: float
    feasible: bool


@dataclass(frozen=True)
class ValidationIssue:
    message: str
    fatal: bool = False


@dataclass(frozen=True)
class ValidationResult:
    issues: tuple[ValidationIssue, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    @property
    def fatal(self) -> bool:
        return any(i.fatal for i in self.issues)

    def messages(self) -> tuple[str, ...]:
        return tuple(i.message for i in self.issues)


def make_instance(
    target_coords: Sequence[tuple[float, float]],
    refuel_coords: Sequence[tuple[float, float]],
    home_coord: tuple[float, float],
    vehicles: int,
    fuel_capacity: Optional[float] = None,
    fuel_factor: float = 2.25,
    cost: Optional[np.ndarray] = None,
    nominal_fuel: Optional[np.ndarray] = None,
    grid: Optional[float] = None,
    vertex_ids: Optional[Sequence[str]] = None,
) -> Instance:
    """Assemble an instance, deriving Euclidean matrices where not given.

    ``fuel_capacity`` defaults to ``fuel_factor`` times the maximum
    depot-to-target distance.
    """
    coords = np.array([home_coord, *refuel_coords, *target_coords], dtype=float)
    n_refuel = len(refuel_coords)
    n_depots = n_refuel + 1
    if vertex_ids is None:
        vertex_ids = (
            ["d0"]
            + [f"d{i}" for i in range(1, n_depots)]
            + [f"t{i}" for i in range(1, len(target_coords) + 1)]
        )
    if cost is None:
        cost = euclidean_matrix(coords)
    else:
        cost = np.array(cost, dtype=float)
    if nominal_fuel is None:
        nominal_fuel = euclidean_matrix(coords)
    else:
        nominal_fuel = np.array(nominal_fuel, dtype=float)
    lam = float(
        max(
            float(np.linalg.norm(coords[d] - coords[t]))
            for d in range(n_depots)
            for t in range(n_depots, len(coords))
        )
    )
    if fuel_capacity is None:
        fuel_capacity = fuel_factor * lam
    return Instance(
        vertices=tuple(vertex_ids),
        n_refuel=n_refuel,
        coordinates=coords,
        cost=cost,
        nominal_fuel=nominal_fuel,
        vehicles=vehicles,
        fuel_capacity=float(fuel_capacity),
        lam=lam,
        grid=grid,
        metric=is_metric(cost),
    )


def recompute_lambda(instance: Instance) -> float:
    coords = instance.coordinates
    return float(
        max(
            float(np.linalg.norm(coords[d] - coords[t]))
            for d in instance.depot_indices
            for t in instance.target_indices
        )
    )


def validate_instance(
    instance: Instance, scenario_set: Optional[ScenarioSet] = None
) -> ValidationResult:
    """Check structural invariants; reachability failures are fatal."""
    issues: list[ValidationIssue] = []
    n = instance.n_vertices
    if instance.n_targets < 1:
        issues.append(ValidationIssue("instance has no targets", fatal=True))
    if instance.vehicles < 1:
        issues.append(ValidationIssue("vehicle count must be at least 1", fatal=True))
    if instance.n_targets >= 1 and instance.vehicles > instance.n_targets:
        issues.append(
            ValidationIssue(
                f"{instance.vehicles} vehicles exceed {instance.n_targets} targets "
                "(empty routes are not allowed)",
                fatal=True,
            )
        )
    for name, mat in (("cost", instance.cost), ("nominal_fuel", instance.nominal_fuel)):
        if mat.shape != (n, n):
            issues.append(ValidationIssue(f"{name} matrix shape {mat.shape} != ({n}, {n})", fatal=True))
            continue
        off = ~np.eye(n, dtype=bool)
        if not np.all(mat[off] > 0):
            issues.append(ValidationIssue(f"{name} has non-positive off-diagonal entries"))
    if instance.cost.shape == (n, n) and instance.nominal_fuel.shape == (n, n):
        lam = recompute_lambda(instance)
        if abs(lam - instance.lam) > 1e-6:
            issues.append(
                ValidationIssue(f"stored lambda {instance.lam!r} != recomputed {lam!r}")
            )
        if instance.fuel_capacity <= 0:
            issues.append(ValidationIssue("fuel capacity must be positive", fatal=True))
        exit_fuel = instance.min_exit_fuel
        entry_fuel = instance.min_entry_fuel
        for t in instance.target_indices:
            if entry_fuel[t] + exit_fuel[t] > instance.fuel_capacity:
                issues.append(
                    ValidationIssue(
                        f"target {instance.vertices[t]} unreachable: cheapest depot "
                        f"round trip needs {entry_fuel[t] + exit_fuel[t]:.6g} fuel, "
                        f"capacity is {instance.fuel_capacity:.6g}",
                        fatal=True,
                    )
                )
    if scenario_set is not None:
        total = math.fsum(s.probability for s in scenario_set)
        if abs(total - 1.0) > PROB_TOL:
            issues.append(
                ValidationIssue(f"scenario probabilities sum to {total!r}", fatal=True)
            )
        for s in scenario_set:
            if s.fuel.shape != (n, n):
                issues.append(
                    ValidationIssue(f"scenario {s.id} fuel shape {s.fuel.shape} != ({n}, {n})", fatal=True)
                )
            else:
                off = ~np.eye(n, dtype=bool)
                if not np.all(s.fuel[off] > 0):
                    issues.append(ValidationIssue(f"scenario {s.id} has non-positive fuel entries"))
    return ValidationResult(tuple(issues))


def check_route_structure(routes: RouteSet, instance: Instance) -> None:
    """Raise RouteStructureError unless the route set is well formed."""
    if len(routes.routes) != instance.vehicles:
        raise RouteStructureError(
            f"expected {instance.vehicles} routes, got {len(routes.routes)}"
        )
    seen: dict[int, int] = {}
    for r, route in enumerate(routes.routes):
        if len(route) < 3:
            raise RouteStructureError(f"route {r} is empty (visits no target)")
        if route[0] != 0 or route[-1] != 0:
            raise RouteStructureError(f"route {r} must start and end at the home depot")
        has_target = False
        for a, b in zip(route, route[1:]):
            if a == b:
                raise RouteStructureError(f"route {r} repeats vertex {a} consecutively")
        for v in route[1:-1]:
            if v < 0 or v >= instance.n_vertices:
                raise RouteStructureError(f"route {r} references unknown vertex {v}")
            if instance.is_target(v):
                has_target = True
                if v in seen:
                    raise RouteStructureError(
                        f"target {instance.vertices[v]} visited more than once"
                    )
                seen[v] = r
        if not has_target:
            raise RouteStructureError(f"route {r} is empty (visits no target)")
    missing = [v for v in instance.target_indices if v not in seen]
    if missing:
        names = ", ".join(instance.vertices[v] for v in missing)
        raise RouteStructureError(f"targets left unvisited: {names}")


def route_cost(routes: RouteSet, instance: Instance) -> float:
    """Total first-stage edge cost of a structurally valid route set."""
    check_route_structure(routes, instance)
    cost = instance.cost
    total = 0.0
    for route in routes.routes:
        for a, b in zip(route, route[1:]):
            total += cost[a, b]
    return total


def nominal_feasibility(
    routes: RouteSet, instance: Instance
) -> tuple[bool, FuelProfile]:
    """Fuel-check a route set under nominal consumption.

    Feasible means every depot-to-depot segment burns at most the capacity
    and, on arrival at each target, enough fuel remains to reach some depot.
    The returned profile is reported even when infeasible.
    """
    check_route_structure(routes, instance)
    fuel = instance.nominal_fuel
    cap = instance.fuel_capacity
    exit_fuel = instance.min_exit_fuel
    feasible = True
    profile: list[tuple[float, ...]] = []
    for route in routes.routes:
        used = 0.0
        arrivals: list[float] = []
        for a, b in zip(route, route[1:]):
            used += fuel[a, b]
            arrivals.append(used)
            if used > cap:
                feasible = False
            if instance.is_depot(b):
                used = 0.0
            elif used + exit_fuel[b] > cap:
                feasible = False
        profile.append(tuple(arrivals))
    return feasible, FuelProfile(tuple(profile))


def edge_vector(routes: RouteSet, instance: Instance) -> frozenset[tuple[int, int]]:
    """Set of directed edges induced by a route set.

    Raises if any directed edge is traversed twice: the indicator encoding
    cannot express multiplicity.
    """
    check_route_structure(routes, instance)
    edges: set[tuple[int, int]] = set()
    for route in routes.routes:
        for e in zip(route, route[1:]):
            if e in edges:
                raise RouteStructureError(f"edge {e} traversed more than once")
            edges.add(e)
    return frozenset(edges)


def routes_from_edge_vector(
    edges: frozenset[tuple[int, int]], instance: Instance
) -> RouteSet:
    """Reconstruct routes from a directed edge set.

    Walks from the home depot, always taking the lowest-indexed unused
    outgoing edge and splicing closed sub-circuits back at their first
    branch point. When a depot is shared between routes, one route passes
    through the same depot three or more times, or a route refuels at the
    home depot mid-way, several route sets induce the same edge vector; the
    walk then returns one valid decomposition.
    """
    out: dict[int, list[int]] = {}
    for a, b in sorted(edges):
        out.setdefault(a, []).append(b)
    # Eulerian walk of the component through depot 0 (iterative Hierholzer).
    stack = [0]
    circuit: list[int] = []
    while stack:
        v = stack[-1]
        if out.get(v):
            stack.append(out[v].pop(0))
        else:
            circuit.append(stack.pop())
    if any(lst for lst in out.values()):
        raise RouteStructureError("edge set is not a union of closed routes")
    circuit.reverse()
    routes: list[tuple[int, ...]] = []
    start = 0
    for i in range(1, len(circuit)):
        if circuit[i] == 0:
            routes.append(tuple(circuit[start : i + 1]))
            start = i
    return RouteSet(tuple(sorted(routes)))
