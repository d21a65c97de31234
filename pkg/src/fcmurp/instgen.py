"""Random instance and scenario generation on the unit-grid testbed.

All randomness flows through numpy's seeded 64-bit PCG64 generator. Substreams
are derived per purpose (coordinates, quadrant roles, each scenario) from a
``SeedSequence`` over ``(seed, stream tag, ...)`` so results do not depend on
evaluation order or thread count. Gamma variates come from the generator's
built-in sampler (Marsaglia-Tsang for shape >= 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import Instance, Scenario, ScenarioSet, make_instance, validate_instance

__all__ = [
    "GenConfig",
    "QuadrantMap",
    "SamplerError",
    "generate_instance",
    "assign_quadrants",
    "sample_scenarios",
]

_STREAM_COORDS = 1
_STREAM_QUADRANT = 2
_STREAM_SCENARIO = 3

REJECTION_LIMIT = 10_000

CONGESTED = "congested"
SPARSE = "sparse"
MEAN = "mean"


class SamplerError(RuntimeError):
    """Conditional sampling failed to accept a draw within the retry budget."""


def _substream(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(key))


@dataclass(frozen=True)
class GenConfig:
    """Knobs for the synthetic testbed generator."""

    seed: int
    n_targets: int
    vehicles: int
    n_refuel_depots: int = 4
    fuel_factor: float = 2.25
    grid: float = 100.0
    gamma_shape: float = 4.0
    gamma_scale_ratio: float = 0.25
    max_retries: int = 50


@dataclass(frozen=True)
class QuadrantMap:
    """Congestion roles for the four grid quadrants and every vertex.

    Quadrant q of a point is ``2 * (y >= grid/2) + (x >= grid/2)``; exactly
    one quadrant is congested, one sparse, and the remaining two neutral.
    """

    seed: int
    grid: float
    quadrant_labels: tuple[str, str, str, str]
    vertex_labels: tuple[str, ...]

    @property
    def congested_quadrant(self) -> int:
        return self.quadrant_labels.index(CONGESTED)

    @property
    def sparse_quadrant(self) -> int:
        return self.quadrant_labels.index(SPARSE)


def quadrant_of(x: float, y: float, grid: float) -> int:
    mid = grid / 2.0
    return (2 if y >= mid else 0) + (1 if x >= mid else 0)


def _refuel_sites(k: int, grid: float) -> list[tuple[float, float]]:
    centers = [
        (0.25 * grid, 0.25 * grid),
        (0.25 * grid, 0.75 * grid),
        (0.75 * grid, 0.25 * grid),
        (0.75 * grid, 0.75 * grid),
    ]
    if k <= 4:
        return centers[:k]
    # beyond the four quadrant centers, spread extras on a circle
    sites = list(centers)
    extra = k - 4
    for i in range(extra):
        angle = 2.0 * math.pi * i / extra
        sites.append(
            (grid / 2.0 + 0.25 * grid * math.cos(angle),
             grid / 2.0 + 0.25 * grid * math.sin(angle))
        )
    return sites


def generate_instance(config: GenConfig) -> Instance:
    """Draw a testbed instance; retries until every target is reachable.

    Targets are uniform on the grid, the home depot sits at the center, and
    refuel depots at the quadrant centers. Costs and nominal fuel are both
    Euclidean; capacity is ``fuel_factor`` times the largest depot-to-target
    distance.
    """
    if config.n_targets < 1:
        raise ValueError("need at least one target")
    if config.vehicles < 1 or config.vehicles > config.n_targets:
        raise ValueError("vehicle count must be in 1..n_targets")
    home = (config.grid / 2.0, config.grid / 2.0)
    refuel = _refuel_sites(config.n_refuel_depots, config.grid)
    for attempt in range(config.max_retries):
        rng = _substream(config.seed, _STREAM_COORDS, attempt)
        pts = rng.uniform(0.0, config.grid, size=(config.n_targets, 2))
        instance = make_instance(
            target_coords=[tuple(p) for p in pts],
            refuel_coords=refuel,
            home_coord=home,
            vehicles=config.vehicles,
            fuel_factor=config.fuel_factor,
            grid=config.grid,
        )
        result = validate_instance(instance)
        if not result.fatal:
            return instance
    raise ValueError(
        f"infeasible configuration: no reachable layout in {config.max_retries} "
        f"attempts (fuel_factor={config.fuel_factor})"
    )


def assign_quadrants(instance: Instance, seed: int) -> QuadrantMap:
    """Pick one congested and one sparse quadrant, label every vertex."""
    grid = instance.grid
    if grid is None:
        grid = float(instance.coordinates.max())
    rng = _substream(seed, _STREAM_QUADRANT)
    congested = int(rng.integers(4))
    sparse = int(rng.choice([q for q in range(4) if q != congested]))
    labels = [MEAN] * 4
    labels[congested] = CONGESTED
    labels[sparse] = SPARSE
    vertex_labels = tuple(
        labels[quadrant_of(float(x), float(y), grid)] for x, y in instance.coordinates
    )
    return QuadrantMap(
        seed=seed,
        grid=grid,
        quadrant_labels=tuple(labels),
        vertex_labels=vertex_labels,
    )


def _edge_label(qmap: QuadrantMap, i: int, j: int) -> str:
    a, b = qmap.vertex_labels[i], qmap.vertex_labels[j]
    if CONGESTED in (a, b):
        return CONGESTED
    if SPARSE in (a, b):
        return SPARSE
    return MEAN


def _conditional_gamma(
    rng: np.random.Generator,
    shape: float,
    scale: float,
    mean: float,
    label: str,
) -> float:
    if label == MEAN:
        return mean
    for _ in range(REJECTION_LIMIT):
        draw = float(rng.gamma(shape, scale))
        if label == CONGESTED and draw >= mean:
            return draw
        if label == SPARSE and draw <= mean:
            return draw
    raise SamplerError(
        f"no acceptable {label} draw in {REJECTION_LIMIT} tries "
        f"(shape={shape}, scale={scale}, mean={mean})"
    )


def sample_scenarios(
    instance: Instance,
    qmap: QuadrantMap,
    seed: int,
    count: int,
    gamma_shape: float = 4.0,
    gamma_scale_ratio: float = 0.25,
    distribution: str = "gamma",
    label: str = "",
) -> ScenarioSet:
    """Draw equiprobable fuel scenarios correlated by quadrant role.

    Every directed edge touching the congested quadrant is conditioned at or
    above its mean, edges touching only sparse-or-neutral quadrants at or
    below it, and purely neutral edges consume exactly the mean. Each
    scenario uses its own substream of ``seed`` so the set is reproducible
    regardless of sampling order.
    """
    if count < 1:
        raise ValueError("need at least one scenario")
    if distribution not in ("gamma", "point-mass"):
        raise ValueError(f"unsupported distribution {distribution!r}")
    n = instance.n_vertices
    mean_fuel = instance.nominal_fuel
    prob = 1.0 / count
    scenarios = []
    for sid in range(count):
        fuel = np.array(mean_fuel, dtype=float)
        if distribution == "gamma":
            rng = _substream(seed, _STREAM_SCENARIO, sid)
            for i in range(n):
                for j in range(n):
                    if i == j:
                        continue
                    edge_label = _edge_label(qmap, i, j)
                    mean = float(mean_fuel[i, j])
                    fuel[i, j] = _conditional_gamma(
                        rng, gamma_shape, gamma_scale_ratio * mean, mean, edge_label
                    )
        scenarios.append(Scenario(id=sid, probability=prob, fuel=fuel))
    if not label:
        label = f"{distribution}:seed={seed}:count={count}"
    return ScenarioSet(tuple(scenarios), label=label)
