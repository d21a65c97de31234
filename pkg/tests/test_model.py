"""Core data model: matrices, instances, routes, and feasibility walks."""

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_case, square_instance
from fcmurp.model import (
    PROB_TOL,
    Instance,
    RouteSet,
    RouteStructureError,
    Scenario,
    ScenarioSet,
    check_route_structure,
    edge_vector,
    euclidean_matrix,
    is_metric,
    make_instance,
    min_entry_fuel,
    min_exit_fuel,
    nominal_feasibility,
    recompute_lambda,
    route_cost,
    routes_from_edge_vector,
    validate_instance,
)


def test_euclidean_matrix_matches_pairwise_norms():
    coords = np.array([[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]])
    m = euclidean_matrix(coords)
    assert m.shape == (3, 3)
    assert np.allclose(np.diag(m), 0.0)
    assert m[0, 1] == pytest.approx(5.0)
    assert m[1, 2] == pytest.approx(5.0)
    assert m[0, 2] == pytest.approx(10.0)
    assert np.array_equal(m, m.T)


def test_is_metric_accepts_euclidean_and_rejects_violations():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 2.0]])
    m = euclidean_matrix(coords)
    assert is_metric(m)
    bad = m.copy()
    bad[0, 1] = 100.0
    assert not is_metric(bad)


def test_square_instance_layout():
    inst = square_instance()
    # depots first: home then refuel sites, targets after
    assert inst.n_vertices == 4
    assert inst.n_depots == 2
    assert inst.n_targets == 2
    assert list(inst.depot_indices) == [0, 1]
    assert list(inst.target_indices) == [2, 3]
    assert inst.is_depot(1) and inst.is_target(2)
    assert inst.lam == pytest.approx(4.0)
    assert inst.fuel_capacity == pytest.approx(9.0)
    assert inst.cost[0, 2] == pytest.approx(3.0)
    assert inst.cost[2, 3] == pytest.approx(5.0)


def test_lambda_is_max_depot_target_distance():
    inst, _ = make_case(seed=3, n_targets=6, vehicles=2)
    assert inst.lam == pytest.approx(recompute_lambda(inst))
    assert inst.fuel_capacity == pytest.approx(2.25 * inst.lam)


def test_instance_matrices_are_frozen():
    inst = square_instance()
    with pytest.raises(ValueError):
        inst.cost[0, 1] = 99.0


def test_min_exit_and_entry_fuel():
    inst = square_instance()
    exit_fuel = min_exit_fuel(inst.nominal_fuel, inst.n_depots)
    entry_fuel = min_entry_fuel(inst.nominal_fuel, inst.n_depots)
    # target 2 at (3,0): home 3 away, refuel depot 4 away
    assert exit_fuel[2] == pytest.approx(3.0)
    assert entry_fuel[2] == pytest.approx(3.0)
    assert exit_fuel[3] == pytest.approx(3.0)


def test_scenario_probability_bounds():
    fuel = np.zeros((2, 2))
    with pytest.raises(ValueError):
        Scenario(id=0, probability=0.0, fuel=fuel.copy())
    with pytest.raises(ValueError):
        Scenario(id=0, probability=1.5, fuel=fuel.copy())
    Scenario(id=0, probability=1.0, fuel=fuel.copy())


def test_scenario_set_validation():
    fuel = np.zeros((2, 2))
    half = lambda i: Scenario(id=i, probability=0.5, fuel=fuel.copy())
    ScenarioSet((half(0), half(1)))
    with pytest.raises(ValueError):
        ScenarioSet((half(0),))
    with pytest.raises(ValueError):
        ScenarioSet((half(0), half(0)))
    # tolerance admits float dust around one
    eps = Scenario(id=0, probability=1.0 - PROB_TOL / 2, fuel=fuel.copy())
    ScenarioSet((eps,))


def test_from_sequences_collapses_repeated_depots():
    rs = RouteSet.from_sequences([(0, 2, 1, 1, 3, 0, 0)], n_depots=2)
    assert rs.routes == ((0, 2, 1, 3, 0),)
    # repeated targets are left alone for the structure check to reject
    rs2 = RouteSet.from_sequences([(0, 2, 2, 0)], n_depots=2)
    assert rs2.routes == ((0, 2, 2, 0),)


def test_canonical_sorts_routes_only():
    rs = RouteSet(((0, 3, 0), (0, 2, 0)))
    assert rs.canonical().routes == ((0, 2, 0), (0, 3, 0))
    assert rs.canonical().canonical() == rs.canonical()


def test_bare_sequences_strip_depots():
    inst = square_instance(vehicles=2)
    rs = RouteSet(((0, 2, 1, 0), (0, 3, 0)))
    assert rs.bare_sequences(inst) == ((2,), (3,))


def test_check_route_structure_rejections():
    inst = square_instance(vehicles=1)
    check_route_structure(RouteSet(((0, 2, 3, 0),)), inst)
    cases = [
        RouteSet(((0, 2, 3, 0), (0, 2, 0))),  # wrong route count
        RouteSet(((0, 2, 0),)),  # target 3 missing
        RouteSet(((0, 2, 2, 3, 0),)),  # target repeated
        RouteSet(((2, 3, 0),)),  # must start at home
        RouteSet(((0, 2, 3),)),  # must end at home
        RouteSet(((0, 2, 9, 0),)),  # unknown vertex
    ]
    for rs in cases:
        with pytest.raises(RouteStructureError):
            check_route_structure(rs, inst)


def test_route_cost_is_edge_fold():
    inst = square_instance(vehicles=1)
    rs = RouteSet(((0, 2, 1, 3, 0),))
    expected = (
        float(inst.cost[0, 2])
        + float(inst.cost[2, 1])
        + float(inst.cost[1, 3])
        + float(inst.cost[3, 0])
    )
    assert route_cost(rs, inst) == expected


def test_nominal_feasibility_hand_case():
    inst = square_instance(vehicles=1)
    ok, profile = nominal_feasibility(RouteSet(((0, 2, 1, 3, 0),)), inst)
    assert ok
    assert profile.per_route == ((3.0, 7.0, 3.0, 7.0),)
    assert profile.max_segment() == pytest.approx(7.0)
    # direct 0-2-3-0 burns 12 on one segment and strands target 3
    bad, profile = nominal_feasibility(RouteSet(((0, 2, 3, 0),)), inst)
    assert not bad
    assert profile.max_segment() == pytest.approx(12.0)


def test_arrival_reserve_rejects_stranded_target():
    # capacity 9: reaching target 3 via 2 leaves 8 burned, exit needs 3 more
    inst = square_instance(vehicles=1)
    running = float(inst.nominal_fuel[0, 2] + inst.nominal_fuel[2, 3])
    reserve = float(min_exit_fuel(inst.nominal_fuel, inst.n_depots)[3])
    assert running <= inst.fuel_capacity < running + reserve
    ok, _ = nominal_feasibility(RouteSet(((0, 2, 3, 0),)), inst)
    assert not ok


def test_validate_instance_flags_unreachable_targets():
    inst = make_instance(
        target_coords=[(50.0, 50.0)],
        refuel_coords=[(1.0, 0.0)],
        home_coord=(0.0, 0.0),
        vehicles=1,
        fuel_capacity=10.0,
    )
    result = validate_instance(inst)
    assert result.fatal
    assert any("reach" in m for m in result.messages())


def test_validate_instance_accepts_generated(small_case):
    inst, _ = small_case
    result = validate_instance(inst)
    assert result.ok or not result.fatal


def test_edge_vector_round_trip():
    inst = square_instance(vehicles=2)
    rs = RouteSet(((0, 2, 1, 0), (0, 3, 0)))
    edges = edge_vector(rs, inst)
    assert edges == frozenset({(0, 2), (2, 1), (1, 0), (0, 3), (3, 0)})
    back = routes_from_edge_vector(edges, inst)
    assert back.canonical() == rs.canonical()


def test_edge_vector_rejects_duplicate_edges():
    inst, _ = make_case(seed=5, n_targets=4, vehicles=2)
    nd = inst.n_depots
    t = list(inst.target_indices)
    rs = RouteSet(
        (
            (0, t[0], 1, t[1], 0),
            (0, t[2], 1, t[3], 0),
        )
    )
    edge_vector(rs, inst)
    # structurally valid, but both routes leave home through depot 1
    shared = RouteSet(
        (
            (0, 1, t[0], 0),
            (0, 1, t[1], 0),
            (0, t[2], 0),
            (0, t[3], 0),
        )
    )
    inst4, _ = make_case(seed=5, n_targets=4, vehicles=4)
    with pytest.raises(RouteStructureError, match="traversed more than once"):
        edge_vector(shared, inst4)


@given(st.permutations([2, 3, 4, 5]))
def test_canonical_is_order_invariant(perm):
    routes = tuple((0, t, 0) for t in perm)
    rs = RouteSet(routes)
    assert rs.canonical().routes == tuple(sorted(routes))


@given(
    st.lists(
        st.lists(st.sampled_from([0, 1]), min_size=0, max_size=3),
        min_size=1,
        max_size=3,
    )
)
def test_from_sequences_never_leaves_adjacent_depot_pairs(depot_runs):
    seq = [0]
    for run in depot_runs:
        seq.extend(run)
        seq.append(5)  # stand-in target keeps runs separated
    seq.append(0)
    rs = RouteSet.from_sequences([seq], n_depots=2)
    route = rs.routes[0]
    for a, b in zip(route, route[1:]):
        assert not (a == b and a < 2)
