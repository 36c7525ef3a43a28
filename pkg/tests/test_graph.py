import json

import numpy as np
import pytest

from netmorph.errors import ConfigError
from netmorph.graph import (
    Network,
    cycle_basis,
    detect_flux_loops,
    random_connected_network,
    random_two_route_network,
    validate_network,
)


def path_network():
    verts = [(1, (0.0, 0.0)), (2, (1.0, 0.0)), (3, (2.0, 0.0))]
    edges = [(1, 2, 1.0), (2, 3, 1.0)]
    return Network.build(verts, edges, {1: 1.0, 3: -1.0})


def k4():
    verts = [(k, (np.cos(k), np.sin(k))) for k in range(4)]
    edges = [(a, b, 1.0) for a in range(4) for b in range(a + 1, 4)]
    return Network.build(verts, edges, {0: 1.0, 3: -1.0})


def test_build_canonicalizes_edges_and_defaults_lengths():
    net = Network.build(
        [(5, (0.0, 0.0)), (2, (3.0, 4.0))],
        [(5, 2)],
        {5: 1.0, 2: -1.0},
    )
    assert net.edges == ((2, 5),)
    assert net.lengths[0] == pytest.approx(5.0)


def test_build_rejects_self_loops_and_unknown_vertices():
    verts = [(1, (0.0, 0.0)), (2, (1.0, 0.0))]
    with pytest.raises(ConfigError):
        Network.build(verts, [(1, 1)])
    with pytest.raises(ConfigError):
        Network.build(verts, [(1, 9)])
    with pytest.raises(ConfigError):
        Network.build(verts + [(1, (2.0, 0.0))], [(1, 2)])


def test_incidence_matrix_rows_sum_to_zero():
    net = k4()
    B = net.incidence_matrix()
    assert B.shape == (4, 6)
    assert np.all(B.sum(axis=0) == 0)
    # one +1 and one -1 per edge column
    assert np.all(np.abs(B).sum(axis=0) == 2)


def test_validate_flags_each_problem():
    verts = [(1, (0.0, 0.0)), (2, (1.0, 0.0)), (3, (5.0, 5.0))]
    net = Network.build(verts, [(1, 2)], {1: 1.0, 2: -0.5})
    report = validate_network(net)
    assert not report.ok
    text = " ".join(report.issues)
    assert "disconnected" in text
    assert "sum to" in text

    good = validate_network(path_network())
    assert good.ok and good.issues == ()


def test_cycle_basis_dimension_and_kernel():
    net = k4()
    basis = cycle_basis(net)
    assert basis.vectors.shape == (3, 6)  # m - n + 1 = 6 - 4 + 1
    B = net.incidence_matrix()
    assert np.max(np.abs(B @ basis.vectors.T)) == 0.0
    assert np.linalg.matrix_rank(basis.vectors) == 3


def test_detect_flux_loops_on_forest_and_on_cycle():
    net = k4()
    tree_flux = np.zeros(6)
    tree_flux[0] = 1.0
    assert detect_flux_loops(net, tree_flux) == ()

    basis = cycle_basis(net)
    loops = detect_flux_loops(net, basis.vectors[0])
    assert len(loops) == 1
    assert len(loops[0]) >= 3


def test_json_round_trip():
    net = path_network()
    doc = net.to_json()
    again = Network.from_json(json.loads(json.dumps(doc)))
    assert again.edges == net.edges
    assert np.allclose(again.lengths, net.lengths)
    assert np.allclose(again.sources, net.sources)


def test_from_json_rejects_malformed_documents():
    with pytest.raises(ConfigError):
        Network.from_json({"vertices": [{"id": 1}], "edges": []})


def test_random_connected_network_is_connected_and_balanced():
    rng = np.random.default_rng(5)
    for _ in range(10):
        net = random_connected_network(rng)
        report = validate_network(net)
        assert report.ok, report.issues
        assert abs(float(net.sources.sum())) < 1e-9


def test_random_two_route_network_has_two_disjoint_routes():
    rng = np.random.default_rng(11)
    net, s, t = random_two_route_network(rng)
    assert s in net.vertex_ids and t in net.vertex_ids
    basis = cycle_basis(net)
    assert basis.vectors.shape[0] == 1  # exactly one independent cycle
    assert net.sources[net.index_of[s]] == pytest.approx(1.0)
    assert net.sources[net.index_of[t]] == pytest.approx(-1.0)
