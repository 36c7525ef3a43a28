import numpy as np
import pytest

from netmorph.adaptation import (
    AdaptationParams,
    adaptation_rhs,
    energy_discrete,
    simulate_adaptation,
    step_adaptation,
    write_trajectory_csv,
)
from netmorph.errors import InfiniteEnergy, NonmonotoneEnergy
from netmorph.graph import Network, random_connected_network


def single_edge():
    verts = [(1, (0.0, 0.0)), (2, (1.0, 0.0))]
    return Network.build(verts, [(1, 2, 1.0)], {1: 1.0, 2: -1.0})


def triangle(s2=2.0, s3=-1.0):
    verts = [(1, (0.0, 0.0)), (2, (1.0, 0.0)), (3, (0.5, 0.9))]
    edges = [(1, 2, 1.0), (2, 3, 1.0), (1, 3, 1.0)]
    return Network.build(verts, edges, {1: -1.0, 2: s2, 3: s3})


def test_energy_discrete_values():
    net = single_edge()
    # Q=1, C=1: kinetic 1, metabolic nu/gamma
    assert energy_discrete(net, np.ones(1), np.ones(1), gamma=2.0) == pytest.approx(1.5)
    assert energy_discrete(net, np.ones(1), np.ones(1), gamma=0.5) == pytest.approx(3.0)


def test_energy_dead_edge_with_flux_is_an_error():
    net = single_edge()
    with pytest.raises(InfiniteEnergy):
        energy_discrete(net, np.zeros(1), np.ones(1), gamma=2.0)
    # dead edge with no flux costs nothing
    assert energy_discrete(net, np.zeros(1), np.zeros(1), gamma=2.0) == 0.0


def test_rhs_vanishes_at_the_balanced_conductivity():
    net = single_edge()
    # forced Q = 1 through one edge: C* = (Q^2/nu)^(1/(gamma+1)) = 1
    rhs = adaptation_rhs(net, np.ones(1), np.ones(1), gamma=0.5, nu=1.0)
    assert abs(rhs[0]) < 1e-14


def test_single_edge_converges_to_balance():
    net = single_edge()
    params = AdaptationParams(gamma=0.5, dt=1e-2, t_end=80.0, steady_tol=1e-12)
    run = simulate_adaptation(net, np.array([0.2]), params)
    assert run.converged
    assert run.C[-1, 0] == pytest.approx(1.0, abs=1e-6)


def test_euler_step_matches_hand_computation():
    net = single_edge()
    params = AdaptationParams(gamma=2.0, nu=1.0, dt=0.1)
    C = np.array([2.0])
    C_next, Q, _ = step_adaptation(net, C, params)
    # Q is forced to 1; dC = dt (Q^2/C - nu C^gamma) L = 0.1 (0.5 - 4)
    assert Q[0] == pytest.approx(1.0)
    assert C_next[0] == pytest.approx(2.0 + 0.1 * (0.5 - 4.0))


def test_rk4_agrees_with_euler_to_first_order():
    net = triangle()
    C0 = np.array([1.2, 0.7, 1.0])
    dt = 1e-4
    e = step_adaptation(net, C0, AdaptationParams(gamma=1.5, dt=dt))[0]
    r = step_adaptation(net, C0, AdaptationParams(gamma=1.5, dt=dt, method="rk4"))[0]
    assert np.max(np.abs(e - r)) < 1e-7


def test_energy_never_increases_along_runs():
    rng = np.random.default_rng(8)
    for gamma in (0.5, 1.5):
        net = random_connected_network(rng)
        C0 = rng.uniform(0.5, 2.0, net.n_edges)
        params = AdaptationParams(gamma=gamma, dt=5e-3, t_end=3.0)
        run = simulate_adaptation(net, C0, params)
        rises = np.diff(run.energy)
        assert np.all(rises <= 1e-8 * np.maximum(1.0, np.abs(run.energy[:-1])))


def test_concave_run_prunes_an_edge_for_good():
    net = triangle()
    params = AdaptationParams(gamma=0.5, dt=1e-2, t_end=400.0, steady_tol=1e-13)
    run = simulate_adaptation(net, np.full(3, 0.8), params)
    dead = run.C[-1] == 0.0
    assert dead.sum() == 1  # tree survives: 3 edges, one cycle, one death
    # once pruned, an edge never comes back
    died_at = np.argmax(run.C[:, dead.argmax()] == 0.0)
    assert np.all(run.C[died_at:, dead.argmax()] == 0.0)


def test_oversized_step_warns_and_halves():
    net = triangle()
    params = AdaptationParams(gamma=3.0, dt=5.0, t_end=20.0)
    with pytest.warns(NonmonotoneEnergy):
        run = simulate_adaptation(net, np.full(3, 3.0), params)
    assert run.n_halvings >= 1
    assert run.final_dt < 5.0


def test_clamp_floor_keeps_edges_alive():
    net = triangle()
    params = AdaptationParams(gamma=0.5, dt=1e-2, t_end=60.0, clamp_floor=1e-3)
    run = simulate_adaptation(net, np.full(3, 0.8), params)
    assert np.all(run.C[-1] >= 1e-3)


def test_trajectory_csv_shape(tmp_path):
    net = single_edge()
    run = simulate_adaptation(net, np.array([0.5]), AdaptationParams(gamma=1.0, t_end=0.1))
    out = tmp_path / "traj.csv"
    write_trajectory_csv(net, run, out)
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "t,energy,C_1-2,Q_1-2"
    assert len(lines) == len(run.times) + 1
