"""Shared instance builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from fcmurp.instgen import (
    GenConfig,
    assign_quadrants,
    generate_instance,
    sample_scenarios,
)
from fcmurp.model import Instance, Scenario, ScenarioSet, make_instance


def make_case(seed: int, n_targets: int, vehicles: int, **kwargs):
    """Instance plus quadrant map from one seed."""
    config = GenConfig(seed=seed, n_targets=n_targets, vehicles=vehicles, **kwargs)
    instance = generate_instance(config)
    return instance, assign_quadrants(instance, seed)


def make_scenarios(instance, qmap, seed: int, count: int, **kwargs) -> ScenarioSet:
    return sample_scenarios(instance, qmap, seed=seed, count=count, **kwargs)


def square_instance(vehicles: int = 1, fuel_factor: float = 2.25) -> Instance:
    """Tiny hand-checkable layout: home at origin, one refuel depot, two targets."""
    return make_instance(
        target_coords=[(3.0, 0.0), (0.0, 4.0)],
        refuel_coords=[(3.0, 4.0)],
        home_coord=(0.0, 0.0),
        vehicles=vehicles,
        fuel_factor=fuel_factor,
    )


def point_mass(instance: Instance, scale: float = 1.0, sid: int = 0) -> ScenarioSet:
    """Single certain scenario at ``scale`` times the nominal matrix."""
    fuel = np.array(instance.nominal_fuel, dtype=float) * scale
    return ScenarioSet(
        (Scenario(id=sid, probability=1.0, fuel=fuel),), label=f"point:{scale}"
    )


@pytest.fixture
def small_case():
    return make_case(seed=11, n_targets=5, vehicles=2)
