import numpy as np
import pytest

from netmorph.errors import LoopyFlux, UnbalancedComponent
from netmorph.graph import Network, cycle_basis, random_connected_network
from netmorph.kirchhoff import (
    fluxes_from_pressures,
    kirchhoff_residual,
    pressures_from_tree_flux,
    solve_kirchhoff,
    support_components,
)


def path3():
    verts = [(1, (0.0, 0.0)), (2, (1.0, 0.0)), (3, (2.0, 0.0))]
    return Network.build(verts, [(1, 2, 1.0), (2, 3, 1.0)], {1: 1.0, 3: -1.0})


def test_path_pressures_and_fluxes():
    net = path3()
    C = np.ones(2)
    P = solve_kirchhoff(net, C)
    # unit flux along the path: drops of L/C = 1 per edge, zero-mean gauge
    assert np.allclose(P, [1.0, 0.0, -1.0])
    Q = fluxes_from_pressures(net, C, P)
    assert np.allclose(Q, [1.0, 1.0])
    assert kirchhoff_residual(net, C, P) < 1e-12


def test_residual_on_random_networks():
    rng = np.random.default_rng(2)
    for _ in range(15):
        net = random_connected_network(rng)
        C = rng.uniform(0.1, 3.0, net.n_edges)
        P = solve_kirchhoff(net, C)
        assert kirchhoff_residual(net, C, P) <= 1e-10
        assert abs(float(P.mean())) < 1e-9


def test_large_component_takes_iterative_path():
    # a cycle with > 200 vertices exercises the conjugate-gradient branch
    n = 240
    verts = [(k, (np.cos(2 * np.pi * k / n), np.sin(2 * np.pi * k / n))) for k in range(n)]
    edges = [(k, (k + 1) % n, 1.0) for k in range(n - 1)] + [(0, n - 1, 1.0)]
    sources = {0: 1.0, n // 2: -1.0}
    net = Network.build(verts, edges, sources)
    C = np.ones(net.n_edges)
    P = solve_kirchhoff(net, C)
    assert kirchhoff_residual(net, C, P) <= 1e-10
    # symmetric ring: the two arcs split the unit flux evenly
    Q = fluxes_from_pressures(net, C, P)
    assert np.max(np.abs(np.abs(Q) - 0.5)) < 1e-8


def test_dead_edges_partition_into_components():
    net = path3()
    active = np.array([True, False])
    comps = support_components(net, active)
    assert sorted(tuple(sorted(c)) for c in comps) == [(0, 1), (2,)]


def test_unbalanced_component_raises():
    net = path3()
    C = np.array([1.0, 0.0])  # second edge dead: vertex 3 keeps its sink
    with pytest.raises(UnbalancedComponent):
        solve_kirchhoff(net, C)


def test_balanced_dead_split_gets_per_component_gauge():
    verts = [(k, (float(k), 0.0)) for k in range(4)]
    edges = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]
    net = Network.build(verts, edges, {0: 1.0, 1: -1.0, 2: 2.0, 3: -2.0})
    C = np.array([1.0, 0.0, 1.0])
    P = solve_kirchhoff(net, C)
    assert abs(P[0] + P[1]) < 1e-12
    assert abs(P[2] + P[3]) < 1e-12
    assert kirchhoff_residual(net, C, P) <= 1e-10


def test_negative_conductivity_rejected():
    net = path3()
    with pytest.raises(ValueError):
        solve_kirchhoff(net, np.array([1.0, -0.5]))


def test_pressures_from_tree_flux_realizes_the_flux():
    net = path3()
    Q = np.array([1.0, 1.0])
    C, P = pressures_from_tree_flux(net, Q, gamma=0.5)
    assert np.allclose(C, 1.0)  # (Q^2)^(1/(gamma+1)) = 1
    assert np.allclose(fluxes_from_pressures(net, C, P), Q)


def test_pressures_from_tree_flux_rejects_loops():
    verts = [(k, (np.cos(k), np.sin(k))) for k in range(3)]
    edges = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]
    net = Network.build(verts, edges, {})
    z = cycle_basis(net).vectors[0]
    with pytest.raises(LoopyFlux):
        pressures_from_tree_flux(net, z, gamma=0.5)
