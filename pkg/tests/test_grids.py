import numpy as np
import pytest

from netmorph.grids import (
    Grid,
    assemble_fv_operator,
    cell_gradient,
    deposit_tent,
    gather_tent,
    gradient_matrices,
    interp_cell_field,
    quadratic_form_matrix,
    solve_zero_mean,
    theta_quadrature,
)


def test_quadrature_weights_and_moment_identity():
    for M in (4, 5, 8, 16):
        theta, w = theta_quadrature(M)
        assert w.sum() == pytest.approx(np.pi)
        assert np.all(theta[:, 0] >= 0.0)
        moment = np.einsum("m,ma,mb->ab", w, theta, theta)
        assert np.allclose(moment, (np.pi / 2.0) * np.eye(2), atol=1e-12)


def test_quadrature_needs_two_directions():
    with pytest.raises(ValueError):
        theta_quadrature(1)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(shape=(8,), lo=(0.0,), hi=(1.0,), n_dirs=4)  # 1d is single-direction
    with pytest.raises(ValueError):
        Grid.box(4, 4, (0.0, 0.0), (1.0, 1.0), n_dirs=1)
    with pytest.raises(ValueError):
        Grid.line(1)
    with pytest.raises(ValueError):
        Grid.box(4, 4, (1.0, 0.0), (0.0, 1.0))


def test_centers_and_spacing():
    grid = Grid.line(4, 0.0, 2.0)
    assert grid.h[0] == pytest.approx(0.5)
    assert np.allclose(grid.axis_centers(0), [0.25, 0.75, 1.25, 1.75])
    grid2 = Grid.box(2, 3, (0.0, 0.0), (1.0, 3.0), n_dirs=4)
    assert grid2.centers().shape == (2, 3, 2)
    assert grid2.vol == pytest.approx(0.5 * 1.0)


def test_cell_gradient_exact_on_linear_fields():
    grid = Grid.box(6, 5, (0.0, 0.0), (1.2, 1.0), n_dirs=4)
    c = grid.centers()
    p = 2.0 * c[..., 0] - 3.0 * c[..., 1] + 0.7
    g = cell_gradient(grid, p)
    assert np.allclose(g[..., 0], 2.0, atol=1e-12)
    assert np.allclose(g[..., 1], -3.0, atol=1e-12)


def test_gradient_matrices_match_cell_gradient():
    grid = Grid.box(5, 4, (0.0, 0.0), (1.0, 1.0), n_dirs=4)
    rng = np.random.default_rng(0)
    p = rng.normal(size=grid.shape)
    Gs = gradient_matrices(grid)
    g = cell_gradient(grid, p)
    for a in range(2):
        assert np.allclose((Gs[a] @ p.ravel()).reshape(grid.shape), g[..., a])


def test_quadratic_form_is_spd_on_nonconstants():
    grid = Grid.box(5, 5, (0.0, 0.0), (1.0, 1.0), n_dirs=4)
    rng = np.random.default_rng(3)
    perm = rng.uniform(0.5, 2.0, grid.shape)
    A = quadratic_form_matrix(grid, perm)
    x = rng.normal(size=grid.n_cells)
    x -= x.mean()
    assert x @ (A @ x) > 0.0
    ones = np.ones(grid.n_cells)
    assert np.max(np.abs(A @ ones)) < 1e-12


def test_fv_operator_conserves_and_solves_poisson():
    grid = Grid.box(48, 48, (0.0, 0.0), (1.0, 1.0), n_dirs=2)
    c = grid.centers()
    p_exact = np.cos(np.pi * c[..., 0]) * np.cos(2.0 * np.pi * c[..., 1])
    S = (np.pi ** 2 + 4.0 * np.pi ** 2) * p_exact
    S -= S.mean()
    A = assemble_fv_operator(grid, np.ones(grid.shape))
    ones = np.ones(grid.n_cells)
    assert np.max(np.abs(A.T @ ones)) < 1e-10  # column sums: discrete conservation
    p, resid = solve_zero_mean(A, S.ravel() * grid.vol, tol=1e-10)
    assert resid <= 1e-10
    diff = p.reshape(grid.shape) - p_exact
    diff -= diff.mean()
    assert np.sqrt((diff ** 2).mean()) < 5e-3  # second-order at n=48


def test_anisotropic_fv_operator_still_conserves():
    grid = Grid.box(12, 10, (0.0, 0.0), (1.0, 1.0), n_dirs=4)
    rng = np.random.default_rng(9)
    base = rng.uniform(0.5, 1.5, grid.shape)
    perm = np.zeros(grid.shape + (2, 2))
    perm[..., 0, 0] = base + 0.5
    perm[..., 1, 1] = base + 0.7
    perm[..., 0, 1] = perm[..., 1, 0] = 0.3 * base
    A = assemble_fv_operator(grid, perm)
    assert np.max(np.abs(A.T @ np.ones(grid.n_cells))) < 1e-10


def test_deposit_tent_partitions_unity():
    grid = Grid.box(8, 8, (0.0, 0.0), (1.0, 1.0), n_dirs=2)
    rng = np.random.default_rng(4)
    pts = rng.uniform(0.1, 0.9, size=(40, 2))
    vals = rng.uniform(0.5, 2.0, 40)
    field = deposit_tent(grid, pts, vals)
    assert field.shape == grid.shape
    # total deposited mass equals the total point mass
    assert field.sum() * grid.vol == pytest.approx(vals.sum(), rel=1e-12)


def test_interp_cell_field_reproduces_linears_inside():
    grid = Grid.box(16, 16, (0.0, 0.0), (1.0, 1.0), n_dirs=2)
    c = grid.centers()
    field = 1.5 * c[..., 0] - 0.5 * c[..., 1]
    pts = np.array([[0.4, 0.6], [0.25, 0.25], [0.7, 0.3]])
    vals = interp_cell_field(grid, field, pts)
    expect = 1.5 * pts[:, 0] - 0.5 * pts[:, 1]
    assert np.allclose(vals, expect, atol=1e-12)


def test_gather_is_adjoint_to_deposit():
    # sum_cells deposit(v) . f * vol must equal sum_points v * gather(f),
    # including points whose stencil is clipped at the boundary
    grid = Grid.box(10, 12, (0.0, 0.0), (1.0, 1.2), n_dirs=2)
    rng = np.random.default_rng(17)
    pts = rng.uniform(0.0, 1.0, size=(30, 2)) * np.array([1.0, 1.2])
    vals = rng.uniform(0.2, 3.0, 30)
    field = rng.standard_normal(grid.shape)
    lhs = (deposit_tent(grid, pts, vals) * field).sum() * grid.vol
    rhs = (vals * gather_tent(grid, field, pts)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_gather_of_constant_is_exact():
    grid = Grid.line(9, 0.0, 1.0)
    pts = np.array([[0.02], [0.5], [0.98]])
    out = gather_tent(grid, np.full(grid.shape, 3.25), pts)
    assert np.allclose(out, 3.25, atol=1e-13)


def test_gather_carries_component_axes():
    grid = Grid.box(8, 8, (0.0, 0.0), (1.0, 1.0), n_dirs=2)
    field = np.stack([grid.centers()[..., 0], grid.centers()[..., 1]], axis=-1)
    pts = np.array([[0.5, 0.5]])
    out = gather_tent(grid, field, pts)
    assert out.shape == (1, 2)
    assert np.allclose(out[0], [0.5, 0.5], atol=1e-12)
