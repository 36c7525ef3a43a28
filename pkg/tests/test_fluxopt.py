import numpy as np
import pytest

from netmorph.errors import InfeasibleSources, TooManyTrees
from netmorph.fluxopt import (
    FluxProblem,
    edge_flux_cost,
    energy_relaxed,
    f_gamma,
    minimize_F,
    optimal_C_given_Q,
    shortest_path_check,
    spanning_trees,
    tree_flux,
    verify_tree_theorem,
)
from netmorph.graph import Network, random_two_route_network


def triangle(sources):
    verts = [(1, (0.0, 0.0)), (2, (1.0, 0.0)), (3, (0.5, 0.9))]
    edges = [(1, 2, 1.0), (2, 3, 1.0), (1, 3, 1.0)]
    return Network.build(verts, edges, sources)


def k4():
    verts = [(k, (np.cos(k), np.sin(k))) for k in range(4)]
    edges = [(a, b, 1.0) for a in range(4) for b in range(a + 1, 4)]
    return Network.build(verts, edges, {0: 1.0, 3: -1.0})


def test_cost_density_values():
    # conventional statement at nu = 1
    assert f_gamma(2.0, 2.0) == pytest.approx(3.0 * 2.0 ** (4.0 / 3.0))
    # the envelope used by the optimizers carries (gamma+1)/gamma
    assert edge_flux_cost(2.0, 2.0, 1.0, "gilbert") == pytest.approx(1.5 * 2.0 ** (4.0 / 3.0))
    assert edge_flux_cost(3.0, 2.0, 1.0, "quadratic") == pytest.approx(27.0)


def test_gilbert_cost_is_the_exact_envelope():
    # min over C of (Q^2/C + (nu/gamma) C^gamma) equals the gilbert density
    gamma, nu, Q = 0.7, 1.3, 1.9
    C_star = optimal_C_given_Q(Q, gamma, nu)
    two_term = Q ** 2 / C_star + (nu / gamma) * C_star ** gamma
    assert edge_flux_cost(Q, gamma, nu, "gilbert") == pytest.approx(two_term, rel=1e-12)
    grid = np.linspace(0.2 * C_star, 5.0 * C_star, 4001)
    sampled = (Q ** 2 / grid + (nu / gamma) * grid ** gamma).min()
    assert two_term <= sampled + 1e-9


def test_optimal_C_closed_form():
    assert optimal_C_given_Q(8.0, 1.0 / 3.0, 1.0) == pytest.approx(22.627416997969522)


def test_tree_flux_satisfies_conservation():
    net = k4()
    for tree in spanning_trees(net):
        Q = tree_flux(net, tree)
        assert np.allclose(net.incidence_matrix() @ Q, net.sources, atol=1e-12)
        off_tree = np.setdiff1d(np.arange(net.n_edges), np.asarray(tree))
        assert np.all(Q[off_tree] == 0.0)


def test_spanning_tree_count_on_k4():
    # Cayley: n^(n-2) = 16 labelled trees on four vertices
    assert sum(1 for _ in spanning_trees(k4())) == 16


def test_spanning_tree_cap_raises():
    with pytest.raises(TooManyTrees):
        list(spanning_trees(k4(), cap=5))


def test_quadratic_minimum_is_exact_on_triangle():
    net = triangle({1: -1.0, 2: 3.0, 3: -2.0})
    prob = FluxProblem(net, 2.0, flux_energy_mode="quadratic")
    res = minimize_F(prob)
    assert res.F == pytest.approx(14.0, abs=1e-12)
    assert res.certificate.optimality == "global"
    # optimum is a genuine stationary point: all cycle derivatives vanish
    eps = 1e-7
    index = {edge: k for k, edge in enumerate(net.edges)}
    z = np.zeros(3)
    z[index[(1, 3)]] = 1.0
    z[index[(2, 3)]] = -1.0
    z[index[(1, 2)]] = -1.0
    assert np.max(np.abs(net.incidence_matrix() @ z)) == 0.0
    dF = (energy_relaxed(prob, res.Q + eps * z) - energy_relaxed(prob, res.Q - eps * z)) / (2 * eps)
    assert abs(dF) < 1e-6


def test_tree_enum_matches_descent_for_gamma_one():
    net = k4()
    prob = FluxProblem(net, 1.0, flux_energy_mode="gilbert")
    res_tree = minimize_F(prob, method="tree_enum")
    res_desc = minimize_F(prob, method="cycle_descent")
    assert res_tree.F == pytest.approx(res_desc.F, rel=1e-6)


def test_unbalanced_sources_rejected():
    net = triangle({1: 1.0, 2: 1.0, 3: 1.0})
    with pytest.raises(InfeasibleSources):
        minimize_F(FluxProblem(net, 0.5))


def test_concave_optimum_is_a_tree():
    net = k4()
    prob = FluxProblem(net, 0.5, flux_energy_mode="gilbert")
    res = minimize_F(prob, method="tree_enum")
    assert res.loops == ()
    report = verify_tree_theorem(prob, trials=3)
    assert report.passed
    assert report.worst_margin > 0.0


def test_tree_enum_is_deterministic():
    net = k4()
    prob = FluxProblem(net, 0.5, flux_energy_mode="gilbert")
    Q1 = minimize_F(prob, method="tree_enum").Q
    Q2 = minimize_F(prob, method="tree_enum").Q
    assert np.array_equal(Q1, Q2)


def test_shortest_path_concentration_hand_built():
    # route a: length 2, route b: length 3; unit flow must take a
    verts = [
        (0, (0.0, 0.0)), (1, (3.0, 0.0)),
        (2, (1.5, 1.0)),                     # route a midpoint
        (3, (1.0, -1.0)), (4, (2.0, -1.0)),  # route b midpoints
    ]
    edges = [(0, 2, 1.0), (2, 1, 1.0), (0, 3, 1.0), (3, 4, 1.0), (4, 1, 1.0)]
    net = Network.build(verts, edges, {0: 1.0, 1: -1.0})
    report = shortest_path_check(net, 0, 1, gamma=0.5)
    assert report.match
    assert report.support_is_path
    assert report.support_length == pytest.approx(2.0)
    assert report.oracle_length == pytest.approx(2.0)


def test_shortest_path_check_on_random_instances():
    rng = np.random.default_rng(21)
    for _ in range(5):
        net, s, t = random_two_route_network(rng)
        assert shortest_path_check(net, s, t, gamma=0.5).match


def test_shortest_path_needs_concave_gamma():
    net, s, t = random_two_route_network(np.random.default_rng(1))
    with pytest.raises(ValueError):
        shortest_path_check(net, s, t, gamma=1.5)
