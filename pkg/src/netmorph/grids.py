"""Uniform cell-centered grids, direction quadrature, and discrete operators.

Fields live at cell centers of a uniform grid over a box; directions live on
the half-circle {theta_1 >= 0} (opposite directions are identified, so one
half suffices) discretized by trapezoid quadrature in the angle. Directional
fields carry a trailing axis of length M; in one dimension there is a single
direction and the axis may be dropped.

Two discrete derivative layouts coexist on purpose. Face differences feed
the conservative finite-volume operator used by the Poisson solver, whose
no-flux boundary makes the cell-wise conservation identity telescope
exactly. Cell-centered gradients (centered inside, one-sided at the
boundary) define the quadratic forms used by the variational solvers, whose
optimality conditions are then exact in the same discrete pairing.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.sparse import bmat, csr_matrix, diags
from scipy.sparse.linalg import lsmr, splu

__all__ = [
    "Grid",
    "theta_quadrature",
    "cell_gradient",
    "gradient_matrices",
    "quadratic_form_matrix",
    "assemble_fv_operator",
    "solve_zero_mean",
    "deposit_tent",
    "gather_tent",
    "interp_cell_field",
]


def theta_quadrature(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid nodes and weights on the half-circle.

    Angles phi_k = -pi/2 + k pi/(M-1), directions (cos phi, sin phi); the
    first component is >= 0 by construction and the weights sum to pi.
    """
    if M < 2:
        raise ValueError("need at least two directions on the half-circle")
    phi = np.linspace(-np.pi / 2.0, np.pi / 2.0, M)
    w = np.full(M, np.pi / (M - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    theta = np.column_stack([np.cos(phi), np.sin(phi)])
    theta[:, 0] = np.abs(theta[:, 0])  # kill the -0.0 roundoff at the poles
    return theta, w


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid over an axis-aligned box."""

    shape: tuple[int, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n_dirs: int = 1

    def __post_init__(self):
        if len(self.shape) not in (1, 2):
            raise ValueError("grids are one- or two-dimensional")
        if len(self.lo) != len(self.shape) or len(self.hi) != len(self.shape):
            raise ValueError("bounds must match dimension")
        if any(n < 2 for n in self.shape):
            raise ValueError("need at least two cells per axis")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("box must have positive extent")
        if len(self.shape) == 1 and self.n_dirs != 1:
            raise ValueError("one-dimensional grids carry a single direction")
        if len(self.shape) == 2 and self.n_dirs < 2:
            raise ValueError("two-dimensional grids need n_dirs >= 2")

    @classmethod
    def line(cls, n: int, lo: float = 0.0, hi: float = 1.0) -> "Grid":
        return cls(shape=(n,), lo=(lo,), hi=(hi,))

    @classmethod
    def box(
        cls,
        nx: int,
        ny: int,
        lo: tuple[float, float] = (0.0, 0.0),
        hi: tuple[float, float] = (1.0, 1.0),
        n_dirs: int = 16,
    ) -> "Grid":
        return cls(shape=(nx, ny), lo=tuple(lo), hi=tuple(hi), n_dirs=n_dirs)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> tuple[float, ...]:
        return tuple((b - a) / n for a, b, n in zip(self.lo, self.hi, self.shape))

    @property
    def vol(self) -> float:
        return float(np.prod(self.h))

    def axis_centers(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        h = self.h[axis]
        return self.lo[axis] + (np.arange(n) + 0.5) * h

    def centers(self) -> np.ndarray:
        """Cell-center coordinates, shape (*shape, dim)."""
        axes = [self.axis_centers(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def directions(self) -> tuple[np.ndarray, np.ndarray]:
        """(theta, w): quadrature directions and weights.

        In one dimension this is the single direction +1 with unit weight.
        """
        if self.dim == 1:
            return np.array([[1.0]]), np.array([1.0])
        return theta_quadrature(self.n_dirs)


def cell_gradient(grid: Grid, p: np.ndarray) -> np.ndarray:
    """Cell-centered gradient, shape (*shape, dim).

    Centered differences inside, one-sided at the boundary cells. Its only
    null vector on a connected grid is the constant.
    """
    p = np.asarray(p, dtype=float).reshape(grid.shape)
    out = np.empty(grid.shape + (grid.dim,))
    for a in range(grid.dim):
        h = grid.h[a]
        g = np.empty_like(p)
        src = np.moveaxis(p, a, 0)
        dst = np.moveaxis(g, a, 0)
        dst[1:-1] = (src[2:] - src[:-2]) / (2.0 * h)
        dst[0] = (src[1] - src[0]) / h
        dst[-1] = (src[-1] - src[-2]) / h
        out[..., a] = g
    return out


def _axis_diff_matrix(n: int, h: float) -> csr_matrix:
    """1D centered/one-sided difference matrix (n x n)."""
    rows, cols, vals = [], [], []
    for i in range(n):
        if i == 0:
            rows += [0, 0]
            cols += [0, 1]
            vals += [-1.0 / h, 1.0 / h]
        elif i == n - 1:
            rows += [i, i]
            cols += [i - 1, i]
            vals += [-1.0 / h, 1.0 / h]
        else:
            rows += [i, i]
            cols += [i - 1, i + 1]
            vals += [-0.5 / h, 0.5 / h]
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def _kron_axis(grid: Grid, mat_1d: csr_matrix, axis: int) -> csr_matrix:
    """Lift a 1D operator on the given axis to the full grid (C order)."""
    if grid.dim == 1:
        return mat_1d.tocsr()
    nx, ny = grid.shape
    from scipy.sparse import kron, identity

    if axis == 0:
        return kron(mat_1d, identity(ny, format="csr"), format="csr")
    return kron(identity(nx, format="csr"), mat_1d, format="csr")


@lru_cache(maxsize=32)
def gradient_matrices(grid: Grid) -> tuple[csr_matrix, ...]:
    """Sparse matrices of the cell-centered gradient, one per axis."""
    return tuple(
        _kron_axis(grid, _axis_diff_matrix(grid.shape[a], grid.h[a]), a)
        for a in range(grid.dim)
    )


def quadratic_form_matrix(grid: Grid, perm: np.ndarray) -> csr_matrix:
    """Assemble A = G^T P G from the cell-centered gradient.

    perm is (*shape,) for scalar permeability or (*shape, dim, dim) for a
    symmetric tensor field. A is singular exactly on constants when the
    permeability keeps the grid connected; the zero-mean solve handles that.
    """
    Gs = gradient_matrices(grid)
    N = grid.n_cells
    perm = np.asarray(perm, dtype=float)
    A = csr_matrix((N, N))
    if perm.shape == grid.shape:
        pr = perm.ravel()
        for G in Gs:
            A = A + G.T @ diags(pr) @ G
        return A
    expected = grid.shape + (grid.dim, grid.dim)
    if perm.shape != expected:
        raise ValueError(f"perm shape {perm.shape} not {grid.shape} or {expected}")
    for a in range(grid.dim):
        for b in range(grid.dim):
            A = A + Gs[a].T @ diags(perm[..., a, b].ravel()) @ Gs[b]
    return A


def _face_avg(arr: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(arr, axis, 0)
    return np.moveaxis(0.5 * (a[1:] + a[:-1]), 0, axis)


def _face_diff(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    a = np.moveaxis(arr, axis, 0)
    return np.moveaxis((a[1:] - a[:-1]) / h, 0, axis)


def assemble_fv_operator(grid: Grid, perm: np.ndarray):
    """Conservative finite-volume operator for -div(P grad p) with no flux.

    Returns a function A(p_flat) -> (-div P grad p) * vol as a sparse matrix.
    Normal fluxes are built on interior faces only (two-point differences
    along the face axis, averaged centered differences for the tensor cross
    terms), so summing the result over all cells gives exactly zero whatever
    p is: the discrete no-flux conservation identity.
    """
    N = grid.n_cells
    perm = np.asarray(perm, dtype=float)

    if grid.dim == 1:
        if perm.shape == grid.shape + (1, 1):
            perm = perm[..., 0, 0]
        if perm.shape != grid.shape:
            raise ValueError(f"perm shape {perm.shape} invalid for 1d grid")
        n = grid.shape[0]
        h = grid.h[0]
        af = 0.5 * (perm[1:] + perm[:-1])
        # face difference matrix D: (n-1, n); A = vol * D^T diag(af) D
        rows = np.repeat(np.arange(n - 1), 2)
        cols = np.empty(2 * (n - 1), dtype=np.intp)
        cols[0::2] = np.arange(n - 1)
        cols[1::2] = np.arange(1, n)
        vals = np.tile([-1.0 / h, 1.0 / h], n - 1)
        D = csr_matrix((vals, (rows, cols)), shape=(n - 1, n))
        return (grid.vol * (D.T @ diags(af) @ D)).tocsr()

    if perm.shape == grid.shape:
        tensor = np.zeros(grid.shape + (2, 2))
        tensor[..., 0, 0] = perm
        tensor[..., 1, 1] = perm
        perm = tensor
    if perm.shape != grid.shape + (2, 2):
        raise ValueError(f"perm shape {perm.shape} invalid for 2d grid")

    nx, ny = grid.shape
    Gx, Gy = gradient_matrices(grid)

    def face_structure(axis: int):
        """Difference and averaging matrices from cells to interior faces."""
        n_faces = (nx - 1) * ny if axis == 0 else nx * (ny - 1)
        rows, cols_lo, cols_hi = [], [], []
        if axis == 0:
            for i in range(nx - 1):
                for j in range(ny):
                    rows.append(i * ny + j)
                    cols_lo.append(i * ny + j)
                    cols_hi.append((i + 1) * ny + j)
        else:
            for i in range(nx):
                for j in range(ny - 1):
                    rows.append(i * (ny - 1) + j)
                    cols_lo.append(i * ny + j)
                    cols_hi.append(i * ny + j + 1)
        rows = np.asarray(rows)
        h = grid.h[axis]
        D = csr_matrix(
            (np.concatenate([np.full(n_faces, -1.0 / h), np.full(n_faces, 1.0 / h)]),
             (np.concatenate([rows, rows]), np.concatenate([cols_lo, cols_hi]))),
            shape=(n_faces, N),
        )
        Avg = csr_matrix(
            (np.full(2 * n_faces, 0.5),
             (np.concatenate([rows, rows]), np.concatenate([cols_lo, cols_hi]))),
            shape=(n_faces, N),
        )
        return D, Avg

    Dx, Avgx = face_structure(0)
    Dy, Avgy = face_structure(1)

    a = perm[..., 0, 0].ravel()
    b = perm[..., 0, 1].ravel()
    c = perm[..., 1, 1].ravel()

    # normal flux through x-faces: a_f dp/dx + b_f (dp/dy averaged to face)
    Fx = diags(Avgx @ a) @ Dx + diags(Avgx @ b) @ (Avgx @ Gy)
    # normal flux through y-faces: b_f (dp/dx averaged) + c_f dp/dy
    Fy = diags(Avgy @ b) @ (Avgy @ Gx) + diags(Avgy @ c) @ Dy

    # D^T scatters face fluxes back with signs -1/h (low cell), +1/h (high
    # cell), i.e. (D^T F)_cell = (F_left - F_right)/h = -div_axis F, so the
    # whole operator is already -div(P grad p) up to the volume factor
    A = grid.vol * (Dx.T @ Fx + Dy.T @ Fy)
    return A.tocsr()


def solve_zero_mean(A, rhs: np.ndarray, tol: float = 1e-10):
    """Solve A x = rhs subject to sum(x) = 0 via a bordered system.

    A must kill constants (A 1 = 0, 1^T A = 0) and rhs must be balanced; the
    bordered matrix [[A, 1], [1^T, 0]] is then regular whenever A is regular
    transverse to constants. Falls back to least squares when the LU breaks
    down. Returns (x, relative residual); callers decide whether a large
    residual is an error for their contract.
    """
    N = A.shape[0]
    rhs = np.asarray(rhs, dtype=float).ravel()
    one_col = csr_matrix(np.ones((N, 1)))
    K = bmat([[A, one_col], [one_col.T, None]], format="csc")
    b = np.concatenate([rhs, [0.0]])
    x = None
    try:
        lu = splu(K)
        sol = lu.solve(b)
        if np.all(np.isfinite(sol)):
            x = sol[:N]
    except RuntimeError:
        x = None
    if x is None:
        sol = lsmr(K, b, atol=1e-14, btol=1e-14, maxiter=20 * N)[0]
        x = sol[:N]
    x = x - x.mean()
    scale = max(1.0, float(np.max(np.abs(rhs), initial=0.0)))
    resid = float(np.max(np.abs(A @ x - rhs))) / scale
    return x, resid


def _tent_stencil(grid: Grid, p: np.ndarray, radius_cells: float):
    """Per-axis indices and tent weights for the point p, or None if empty."""
    reach = int(np.ceil(radius_cells))
    axis_weights = []
    axis_index = []
    for a in range(grid.dim):
        h = grid.h[a]
        centers = grid.axis_centers(a)
        i0 = int(np.floor((p[a] - grid.lo[a]) / h - 0.5))
        idx = np.arange(i0 - reach, i0 + reach + 2)
        idx = idx[(idx >= 0) & (idx < grid.shape[a])]
        w = np.maximum(0.0, 1.0 - np.abs(p[a] - centers[idx]) / (radius_cells * h))
        keep = w > 0
        if not np.any(keep):
            return None
        axis_weights.append(w[keep])
        axis_index.append(idx[keep])
    return axis_index, axis_weights


def deposit_tent(
    grid: Grid,
    points: np.ndarray,
    values: np.ndarray,
    radius_cells: float = 2.0,
) -> np.ndarray:
    """Spread point masses onto cells with a product tent kernel.

    Each point deposits its value with weights prop to
    prod_axis max(0, 1 - |x - x_cell| / (radius_cells * h)), normalized so
    the cell sum times cell volume is exactly 1 per point: total deposited
    mass equals total point value regardless of cutoffs at the boundary.
    values may be (n_points,) or (n_points, k) for simultaneous channels.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    single = values.ndim == 1
    vals = values[:, None] if single else values
    out = np.zeros(grid.shape + (vals.shape[1],))

    for p, v in zip(points, vals):
        stencil = _tent_stencil(grid, p, radius_cells)
        if stencil is None:
            continue
        axis_index, axis_weights = stencil
        if grid.dim == 1:
            w = axis_weights[0]
            total = w.sum() * grid.vol
            out[axis_index[0], :] += (w / total)[:, None] * v[None, :]
        else:
            w = np.outer(axis_weights[0], axis_weights[1])
            total = w.sum() * grid.vol
            ix = np.ix_(axis_index[0], axis_index[1])
            out[ix[0], ix[1], :] += (w / total)[:, :, None] * v[None, None, :]
    return out[..., 0] if single else out


def gather_tent(
    grid: Grid,
    field: np.ndarray,
    points: np.ndarray,
    radius_cells: float = 2.0,
) -> np.ndarray:
    """Sample a cell field at points with the deposit_tent kernel.

    Adjoint of deposit_tent with the same radius: sum_cells dep(v) . field
    * vol == sum_points v * gather(field). A particle scheme that deposits
    conductivity with one kernel and reads the drive back with a narrower
    one leaks flux through the partially loaded fringe cells, which run at
    a different slope than the stencil core; pairing gather with scatter
    closes that balance. Gathering a constant field returns the constant
    exactly, boundary cutoffs included. field may carry trailing component
    axes.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    field = np.asarray(field, dtype=float)
    comp_shape = field.shape[grid.dim:]
    out = np.zeros((points.shape[0],) + comp_shape)

    for k, p in enumerate(points):
        stencil = _tent_stencil(grid, p, radius_cells)
        if stencil is None:
            continue
        axis_index, axis_weights = stencil
        if grid.dim == 1:
            w = axis_weights[0]
            vals = field[axis_index[0]]
        else:
            w = np.outer(axis_weights[0], axis_weights[1])
            vals = field[np.ix_(axis_index[0], axis_index[1])]
        wn = (w / w.sum()).reshape(w.shape + (1,) * len(comp_shape))
        out[k] = (wn * vals).sum(axis=tuple(range(grid.dim)))
    return out


def interp_cell_field(grid: Grid, field: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a cell-centered field at points.

    Clamps to the boundary cell centers outside the center lattice. field
    may carry trailing component axes; they are interpolated together.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    field = np.asarray(field, dtype=float)
    comp_shape = field.shape[grid.dim:]
    n = points.shape[0]

    idx_lo, frac = [], []
    for a in range(grid.dim):
        h = grid.h[a]
        t = (points[:, a] - grid.lo[a]) / h - 0.5
        i0 = np.clip(np.floor(t).astype(np.intp), 0, grid.shape[a] - 2)
        idx_lo.append(i0)
        frac.append(np.clip(t - i0, 0.0, 1.0))

    if grid.dim == 1:
        i0 = idx_lo[0]
        f = frac[0].reshape((n,) + (1,) * len(comp_shape))
        return (1 - f) * field[i0] + f * field[i0 + 1]

    i0, j0 = idx_lo
    fx = frac[0].reshape((n,) + (1,) * len(comp_shape))
    fy = frac[1].reshape((n,) + (1,) * len(comp_shape))
    f00 = field[i0, j0]
    f10 = field[i0 + 1, j0]
    f01 = field[i0, j0 + 1]
    f11 = field[i0 + 1, j0 + 1]
    return ((1 - fx) * (1 - fy) * f00 + fx * (1 - fy) * f10
            + (1 - fx) * fy * f01 + fx * fy * f11)
