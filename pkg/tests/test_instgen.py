"""Instance generator and quadrant-correlated scenario sampler."""

import numpy as np
import pytest

from conftest import make_case
from fcmurp.instgen import (
    CONGESTED,
    MEAN,
    SPARSE,
    GenConfig,
    assign_quadrants,
    generate_instance,
    quadrant_of,
    sample_scenarios,
)
from fcmurp.model import recompute_lambda, validate_instance


def test_generate_instance_shape_and_capacity():
    inst = generate_instance(GenConfig(seed=2, n_targets=7, vehicles=3))
    assert inst.n_targets == 7
    assert inst.n_depots == 5  # home plus four refuel sites
    assert inst.vehicles == 3
    assert inst.grid == 100.0
    assert inst.fuel_capacity == pytest.approx(2.25 * recompute_lambda(inst))
    assert not validate_instance(inst).fatal


def test_generate_instance_is_deterministic():
    a = generate_instance(GenConfig(seed=9, n_targets=5, vehicles=2))
    b = generate_instance(GenConfig(seed=9, n_targets=5, vehicles=2))
    assert np.array_equal(a.coordinates, b.coordinates)
    assert np.array_equal(a.cost, b.cost)
    c = generate_instance(GenConfig(seed=10, n_targets=5, vehicles=2))
    assert not np.array_equal(a.coordinates, c.coordinates)


def test_refuel_sites_sit_at_quadrant_centers():
    inst = generate_instance(GenConfig(seed=2, n_targets=3, vehicles=1))
    refuel = {tuple(inst.coordinates[d]) for d in range(1, inst.n_depots)}
    assert refuel == {(25.0, 25.0), (75.0, 25.0), (25.0, 75.0), (75.0, 75.0)}
    assert tuple(inst.coordinates[0]) == (50.0, 50.0)


def test_generate_validates_config():
    with pytest.raises(ValueError):
        generate_instance(GenConfig(seed=1, n_targets=0, vehicles=1))
    with pytest.raises(ValueError):
        generate_instance(GenConfig(seed=1, n_targets=3, vehicles=4))
    with pytest.raises(ValueError, match="infeasible configuration"):
        generate_instance(GenConfig(seed=1, n_targets=8, vehicles=1, fuel_factor=0.05))


def test_quadrant_of_splits_at_midlines():
    assert quadrant_of(0.0, 0.0, 100.0) == 0
    assert quadrant_of(60.0, 0.0, 100.0) == 1
    assert quadrant_of(0.0, 60.0, 100.0) == 2
    assert quadrant_of(60.0, 60.0, 100.0) == 3
    # midline points belong to the upper/right side
    assert quadrant_of(50.0, 0.0, 100.0) == 1
    assert quadrant_of(0.0, 50.0, 100.0) == 2
    assert quadrant_of(50.0, 50.0, 100.0) == 3


def test_assign_quadrants_roles_and_labels():
    inst, qmap = make_case(seed=4, n_targets=8, vehicles=2)
    labels = qmap.quadrant_labels
    assert sorted(labels) == sorted([CONGESTED, SPARSE, MEAN, MEAN])
    assert qmap.congested_quadrant != qmap.sparse_quadrant
    assert labels[qmap.congested_quadrant] == CONGESTED
    assert labels[qmap.sparse_quadrant] == SPARSE
    for v, (x, y) in enumerate(inst.coordinates):
        assert qmap.vertex_labels[v] == labels[quadrant_of(float(x), float(y), 100.0)]
    again = assign_quadrants(inst, 4)
    assert again == qmap


def test_sample_scenarios_probabilities_and_label():
    inst, qmap = make_case(seed=4, n_targets=5, vehicles=2)
    scen = sample_scenarios(inst, qmap, seed=17, count=4)
    assert len(scen) == 4
    assert [s.id for s in scen] == [0, 1, 2, 3]
    assert all(s.probability == 0.25 for s in scen)
    assert scen.label == "gamma:seed=17:count=4"
    named = sample_scenarios(inst, qmap, seed=17, count=4, label="mine")
    assert named.label == "mine"


def test_sample_scenarios_respects_quadrant_conditioning():
    inst, qmap = make_case(seed=4, n_targets=8, vehicles=2)
    scen = sample_scenarios(inst, qmap, seed=23, count=3)
    mean = inst.nominal_fuel
    n = inst.n_vertices
    for s in scen:
        assert np.array_equal(np.diag(s.fuel), np.diag(mean))
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                a, b = qmap.vertex_labels[i], qmap.vertex_labels[j]
                if CONGESTED in (a, b):
                    assert s.fuel[i, j] >= mean[i, j]
                elif SPARSE in (a, b):
                    assert s.fuel[i, j] <= mean[i, j]
                else:
                    assert s.fuel[i, j] == mean[i, j]


def test_sample_scenarios_deterministic_and_prefix_stable():
    inst, qmap = make_case(seed=4, n_targets=5, vehicles=2)
    a = sample_scenarios(inst, qmap, seed=5, count=3)
    b = sample_scenarios(inst, qmap, seed=5, count=3)
    for x, y in zip(a, b):
        assert np.array_equal(x.fuel, y.fuel)
    # each scenario draws from its own substream, so prefixes agree
    longer = sample_scenarios(inst, qmap, seed=5, count=6)
    for x, y in zip(a, longer):
        assert np.array_equal(x.fuel, y.fuel)
    other = sample_scenarios(inst, qmap, seed=6, count=3)
    assert not np.array_equal(a.scenarios[0].fuel, other.scenarios[0].fuel)


def test_point_mass_distribution_copies_the_mean():
    inst, qmap = make_case(seed=4, n_targets=4, vehicles=1)
    scen = sample_scenarios(inst, qmap, seed=1, count=2, distribution="point-mass")
    for s in scen:
        assert np.array_equal(s.fuel, inst.nominal_fuel)


def test_sample_scenarios_rejects_bad_arguments():
    inst, qmap = make_case(seed=4, n_targets=4, vehicles=1)
    with pytest.raises(ValueError):
        sample_scenarios(inst, qmap, seed=1, count=0)
    with pytest.raises(ValueError):
        sample_scenarios(inst, qmap, seed=1, count=2, distribution="uniform")


def test_gamma_moments_small_sample():
    """Quick version of the moment check; the full-scale one is in acceptance."""
    rng = np.random.default_rng(123)
    mean = 40.0
    draws = rng.gamma(4.0, 0.25 * mean, size=200_000)
    assert abs(draws.mean() - mean) / mean < 0.02
    assert abs(draws.std() - 0.5 * mean) / (0.5 * mean) < 0.05
