import numpy as np
import pytest
from hypothesis import given, strategies as st

from mixedroute.network import (
    Link, NetworkError, ODPair, RouteProbabilityMatrix, braess_fixture, build_network,
    enumerate_routes, format_network, format_trips, grid_network, k_shortest_paths,
    make_route_set, parse_network_files, path_cost, path_nodes, route_demand,
    route_flows_to_link_flows,
)
from mixedroute.costs import CostModel

from helpers import random_network


def test_braess_network_shape():
    net, ods, _ = braess_fixture()
    assert net.nodes == (1, 2, 3, 4)
    assert net.n_links == 5
    assert net.incidence.shape == (4, 5)
    assert ods == [ODPair(1, 4, 4000.0)]


def test_incidence_columns_have_one_tail_and_one_head():
    net, _ = grid_network(seed=0)
    N = net.incidence
    assert np.all((N == 1).sum(axis=0) == 1)
    assert np.all((N == -1).sum(axis=0) == 1)
    for j, lk in enumerate(net.links):
        assert N[net.nodes.index(lk.tail), j] == 1
        assert N[net.nodes.index(lk.head), j] == -1


def test_single_link_incidence():
    net = build_network([Link(1, 1, 2, 1.0, 10.0)])
    np.testing.assert_array_equal(net.incidence, [[1.0], [-1.0]])


@pytest.mark.parametrize("kwargs", [
    dict(free_flow_time=0.0, capacity=10.0),
    dict(free_flow_time=-1.0, capacity=10.0),
    dict(free_flow_time=1.0, capacity=0.0),
    dict(free_flow_time=1.0, capacity=10.0, length=-1.0),
])
def test_invalid_links_rejected(kwargs):
    with pytest.raises(NetworkError):
        Link(1, 1, 2, **kwargs)


def test_self_loop_and_duplicates_rejected():
    with pytest.raises(NetworkError):
        Link(1, 3, 3, 1.0, 1.0)
    with pytest.raises(NetworkError):
        build_network([Link(1, 1, 2, 1.0, 1.0), Link(1, 2, 3, 1.0, 1.0)])
    with pytest.raises(NetworkError):
        build_network([])


def test_od_validation():
    with pytest.raises(NetworkError):
        ODPair(1, 2, -1.0)
    with pytest.raises(NetworkError):
        ODPair(2, 2, 1.0)
    net, _, _ = braess_fixture()
    with pytest.raises(NetworkError):
        enumerate_routes(net, [ODPair(1, 9, 1.0)], 3)


def test_braess_fixture_costs():
    net, _, table = braess_fixture()
    cm = CostModel(net)
    t = cm.travel_time(np.array([4000.0, 123.0, 999.0, 50.0, 0.0]))
    assert t[0] == pytest.approx(40.0)
    assert t[1] == 45.0 and t[2] == 45.0 and t[3] == 0.0
    assert [lk.length for lk in net.links] == [30.5, 30.5, 30.5, 0.0, 30.5]
    assert set(table) == {1, 2, 3, 4, 5}


def test_enumerate_routes_braess():
    net, ods, _ = braess_fixture()
    rs = enumerate_routes(net, ods, 3)
    assert {r.links for r in rs.routes} == {(1, 3), (2, 5), (1, 4, 5)}
    # ordered by free-flow time: 0 < 45 = 45, tie by link ids
    assert [r.links for r in rs.routes] == [(1, 4, 5), (1, 3), (2, 5)]
    rs1 = enumerate_routes(net, ods, 1)
    assert [r.links for r in rs1.routes] == [(1, 4, 5)]
    rs10 = enumerate_routes(net, ods, 10)
    assert len(rs10.routes) == 3


def test_incidence_matches_routes():
    net, ods, _ = braess_fixture()
    rs = enumerate_routes(net, ods, 3)
    for col, r in enumerate(rs.routes):
        used = {net.link_ids[a] for a in np.flatnonzero(rs.incidence[:, col])}
        assert used == set(r.links)


def test_disconnected_od_raises():
    net = build_network([Link(1, 1, 2, 1.0, 1.0), Link(2, 3, 4, 1.0, 1.0)])
    with pytest.raises(NetworkError):
        enumerate_routes(net, [ODPair(1, 4, 5.0)], 2)
    rs = enumerate_routes(net, [ODPair(1, 4, 0.0)], 2)
    assert rs.n_routes == 0


def test_make_route_set_rejects_bad_chains():
    net, _, _ = braess_fixture()
    with pytest.raises(NetworkError):
        make_route_set(net, [[(1, 5)]])
    with pytest.raises(NetworkError):
        make_route_set(net, [[()]])


def test_route_flows_examples():
    net, ods, _ = braess_fixture()
    rs = make_route_set(net, [[(1, 3), (2, 5), (1, 4, 5)]])
    x = route_flows_to_link_flows(RouteProbabilityMatrix([[0, 0, 1]]), ods, rs)
    np.testing.assert_allclose(x, [4000, 0, 0, 4000, 4000])
    x = route_flows_to_link_flows(RouteProbabilityMatrix([[0.5, 0.5, 0]]), ods, rs)
    np.testing.assert_allclose(x, [2000, 2000, 2000, 0, 2000])
    x = route_flows_to_link_flows(RouteProbabilityMatrix([[0.2, 0.3, 0.5]]), [ODPair(1, 4, 0.0)], rs)
    np.testing.assert_array_equal(x, np.zeros(5))


def test_route_flows_dimension_errors():
    net, ods, _ = braess_fixture()
    rs = enumerate_routes(net, ods, 3)
    with pytest.raises(NetworkError):
        route_flows_to_link_flows(RouteProbabilityMatrix([[0.5, 0.5]]), ods, rs)
    with pytest.raises(NetworkError):
        route_flows_to_link_flows(RouteProbabilityMatrix([[0.5, 0.6, 0.0]]), ods, rs)
    with pytest.raises(NetworkError):
        route_flows_to_link_flows(RouteProbabilityMatrix([[1, 0, 0], [1, 0, 0]]), ods, rs)


def _random_P(rng, rs):
    return RouteProbabilityMatrix([rng.dirichlet(np.ones(len(b))) for b in rs.routes_per_od])


@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0), st.floats(0.0, 1.0))
def test_route_flows_linear_in_P_and_g(seed, scale, lam):
    rng = np.random.default_rng(seed)
    net, ods = grid_network(seed=0)
    rs = enumerate_routes(net, ods, 3)
    P1, P2 = _random_P(rng, rs), _random_P(rng, rs)
    mix = RouteProbabilityMatrix([lam * a + (1 - lam) * b for a, b in zip(P1.rows, P2.rows)])
    x1 = route_flows_to_link_flows(P1, ods, rs)
    x2 = route_flows_to_link_flows(P2, ods, rs)
    np.testing.assert_allclose(route_flows_to_link_flows(mix, ods, rs), lam * x1 + (1 - lam) * x2,
                               rtol=1e-9, atol=1e-7)
    scaled = [ODPair(o.origin, o.destination, scale * o.demand) for o in ods]
    np.testing.assert_allclose(route_flows_to_link_flows(P1, scaled, rs), scale * x1, rtol=1e-9, atol=1e-7)
    assert np.all(x1 >= 0)


@given(st.integers(0, 2**31 - 1))
def test_flow_conservation_at_origins(seed):
    rng = np.random.default_rng(seed)
    net, ods = grid_network(seed=1)
    rs = enumerate_routes(net, ods, 3)
    P = _random_P(rng, rs)
    g = route_demand(rs, ods)
    f = P.flat() * g
    for i, od in enumerate(ods):
        cols = rs.blocks()[i]
        x_i = rs.incidence[:, cols] @ f[cols]
        out_origin = sum(x_i[a] for a in net.out_links(od.origin))
        assert out_origin == pytest.approx(od.demand, rel=1e-9)
        # node balance: N x_i = g_i (e_o - e_d)
        bal = net.incidence @ x_i
        expect = np.zeros(len(net.nodes))
        expect[net.nodes.index(od.origin)] = od.demand
        expect[net.nodes.index(od.destination)] = -od.demand
        np.testing.assert_allclose(bal, expect, atol=1e-7 * od.demand)


def _all_simple_paths(net, o, d):
    out = []

    def dfs(node, path, visited):
        if node == d:
            out.append(tuple(path))
            return
        for a in net.out_links(node):
            lk = net.links[a]
            if lk.head not in visited:
                dfs(lk.head, path + [lk.id], visited | {lk.head})

    dfs(o, [], {o})
    return out


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_yen_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    net, ods = random_network(rng, max_nodes=7, max_links=14)
    times = rng.integers(1, 6, net.n_links).astype(float)  # integer times make ties exact
    od = ods[0]
    got = k_shortest_paths(net, od.origin, od.destination, k, times)
    ranked = sorted(_all_simple_paths(net, od.origin, od.destination),
                    key=lambda p: (path_cost(net, p, times), p))
    assert got == ranked[:k]
    for p in got:
        nodes = path_nodes(net, p)
        assert len(set(nodes)) == len(nodes)


def test_enumerated_routes_sorted_and_distinct():
    net, ods = grid_network(seed=3)
    rs = enumerate_routes(net, ods, 4)
    t0 = {lk.id: lk.free_flow_time for lk in net.links}
    for block in rs.routes_per_od:
        costs = [sum(t0[l] for l in r.links) for r in block]
        assert costs == sorted(costs)
        assert len({r.links for r in block}) == len(block)


# TNTP files

MINIMAL_NET = """<NUMBER OF ZONES> 2
<NUMBER OF NODES> 2
<FIRST THRU NODE> 1
<NUMBER OF LINKS> 1
<END OF METADATA>

~ init term capacity length fftt b power speed toll type ;
1 2 100 1.5 2 0.15 4 0 0 1 ;
"""

MINIMAL_TRIPS = """<NUMBER OF ZONES> 2
<TOTAL OD FLOW> 3.5
<END OF METADATA>

Origin 1
    2 :    3.5;
"""


def test_parse_minimal_files():
    net, ods = parse_network_files(MINIMAL_NET, MINIMAL_TRIPS)
    assert net.n_links == 1
    lk = net.links[0]
    assert (lk.tail, lk.head, lk.capacity, lk.free_flow_time, lk.length) == (1, 2, 100.0, 2.0, 1.5)
    assert lk.grade == 0.0
    assert ods == [ODPair(1, 2, 3.5)]


def test_parse_reports_bad_line():
    bad = MINIMAL_NET.replace("1 2 100 1.5 2 0.15 4 0 0 1 ;", "1 2 100 1.5 2 ;")
    with pytest.raises(NetworkError, match="line 8"):
        parse_network_files(bad, MINIMAL_TRIPS)


@pytest.mark.parametrize("net_text,trips_text", [
    (MINIMAL_NET.replace("<NUMBER OF LINKS> 1\n", ""), MINIMAL_TRIPS),
    (MINIMAL_NET.replace("<END OF METADATA>", ""), MINIMAL_TRIPS),
    (MINIMAL_NET.replace("<NUMBER OF LINKS> 1", "<NUMBER OF LINKS> 2"), MINIMAL_TRIPS),
    (MINIMAL_NET, MINIMAL_TRIPS.replace("3.5;", "-3.5;")),
    (MINIMAL_NET, MINIMAL_TRIPS.replace("<TOTAL OD FLOW> 3.5\n", "")),
    (MINIMAL_NET, MINIMAL_TRIPS.replace("Origin 1\n", "")),
    (MINIMAL_NET, MINIMAL_TRIPS.replace("2 :", "7 :")),
])
def test_parse_errors(net_text, trips_text):
    with pytest.raises(NetworkError):
        parse_network_files(net_text, trips_text)


def test_trips_aggregate_duplicates():
    trips = MINIMAL_TRIPS.replace("2 :    3.5;", "2 : 1.0; 2 : 2.5;")
    _, ods = parse_network_files(MINIMAL_NET, trips)
    assert ods == [ODPair(1, 2, 3.5)]


@given(st.integers(0, 2**31 - 1))
def test_tntp_round_trip(seed):
    rng = np.random.default_rng(seed)
    net, ods = random_network(rng)
    net2, ods2 = parse_network_files(format_network(net), format_trips(ods))
    key = lambda n: [(lk.tail, lk.head, lk.capacity, lk.length, lk.free_flow_time) for lk in n.links]  # noqa: E731
    assert key(net2) == key(net)
    assert {(o.origin, o.destination): o.demand for o in ods2} == \
        {(o.origin, o.destination): o.demand for o in ods}


def test_probability_matrix_validation():
    net, ods, _ = braess_fixture()
    rs = enumerate_routes(net, ods, 3)
    RouteProbabilityMatrix.uniform(rs).validate(rs)
    with pytest.raises(NetworkError):
        RouteProbabilityMatrix([[1.2, -0.2, 0.0]]).validate(rs)
    with pytest.raises(NetworkError):
        RouteProbabilityMatrix([[0.3, 0.3, 0.3]]).validate(rs)
    p = np.array([0.2, 0.3, 0.5])
    assert RouteProbabilityMatrix.from_flat(rs, p).flat().tolist() == p.tolist()


def test_braess_all_paths_enumerated_exhaustively():
    net, _, _ = braess_fixture()
    paths = _all_simple_paths(net, 1, 4)
    assert sorted(paths) == sorted([(1, 3), (2, 5), (1, 4, 5)])
