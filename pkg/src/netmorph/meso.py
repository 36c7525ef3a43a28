"""Mesoscopic directional conductivity fields and their dynamics.

The state is a conductivity density C(x, theta) over cells x and half-circle
directions theta. It induces the permeability tensor

    P(x) = r I + sum_m w_m C(x, theta_m) theta_m theta_m^T,

through which a pressure solves the no-flux Poisson problem
-div(P grad p) = S. Directional conductivities then adapt with the local
directional pressure slope,

    dC/dt = c0^2 C (theta . grad p)^2 - C^gamma,

which is the Fisher-Rao-type gradient flow of the transport energy
E[C] = int c0^2 C (theta . grad p)^2 + C^gamma / gamma. Stationary states
are analyzed per regime: an explicit 1D profile for any gamma, a strictly
convex variational problem for gamma > 1, and a singular one-direction
construction at gamma = 1. A regularized particle ensemble provides the
curve-supported limit r -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    DegeneratePermeability,
    NoConvergence,
    RotationalInput,
    SingularSystem,
)
from .grids import (
    Grid,
    assemble_fv_operator,
    cell_gradient,
    deposit_tent,
    gather_tent,
    gradient_matrices,
    interp_cell_field,
    quadratic_form_matrix,
    solve_zero_mean,
)
from .tabular import write_csv

__all__ = [
    "assemble_permeability",
    "solve_poisson",
    "directional_slopes",
    "flux_gradient",
    "flux_slopes",
    "step_monokinetic",
    "energy_monokinetic",
    "simulate_monokinetic",
    "MonokineticRun",
    "stationary_1d",
    "Stationary1D",
    "stationary_gamma_gt1",
    "GammaGt1Result",
    "weak_residual",
    "stationary_gamma_eq1",
    "GammaEq1Result",
    "ParticleEnsemble",
    "simulate_particles",
    "ParticleRun",
    "conductance_moment",
    "write_scalar_csv",
    "write_directional_csv",
]


def _directional(grid: Grid, C: np.ndarray) -> np.ndarray:
    """Normalize a conductivity array to shape (*grid.shape, M)."""
    C = np.asarray(C, dtype=float)
    M = grid.directions()[0].shape[0]
    if C.shape == grid.shape + (M,):
        return C
    if grid.dim == 1 and C.shape == grid.shape:
        return C[:, None]
    raise ValueError(f"conductivity shape {C.shape} incompatible with grid")


def assemble_permeability(grid: Grid, C: np.ndarray, r: float = 1e-3) -> np.ndarray:
    """Permeability r I + sum_m w_m C_m theta_m theta_m^T per cell.

    Returns (*shape,) in one dimension and (*shape, 2, 2) in two. r >= 0 is
    the isotropic background that keeps the tensor invertible where the
    directional part degenerates.
    """
    if r < 0:
        raise ConfigError("background permeability r must be nonnegative")
    C = _directional(grid, C)
    theta, w = grid.directions()
    if grid.dim == 1:
        return r + (C * w).sum(axis=-1)
    outer = np.einsum("ma,mb->mab", theta, theta)
    perm = np.einsum("...m,m,mab->...ab", C, w, outer)
    perm[..., 0, 0] += r
    perm[..., 1, 1] += r
    return perm


def _min_eig(grid: Grid, perm: np.ndarray) -> float:
    if grid.dim == 1:
        return float(np.min(perm))
    a = perm[..., 0, 0]
    b = perm[..., 0, 1]
    c = perm[..., 1, 1]
    half_tr = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b ** 2, 0.0))
    return float(np.min(half_tr - disc))


def solve_poisson(
    grid: Grid, perm: np.ndarray, S: np.ndarray, tol: float = 1e-10
) -> np.ndarray:
    """Zero-mean pressure solving -div(P grad p) = S with no-flux walls.

    The permeability must be uniformly elliptic: a cell tensor singular
    beyond threshold raises DegeneratePermeability rather than being
    regularized behind the caller's back. The source must balance to zero
    (no-flux compatibility). SingularSystem signals a residual above tol.
    """
    perm = np.asarray(perm, dtype=float)
    S = np.asarray(S, dtype=float).reshape(grid.shape)
    lo = _min_eig(grid, perm)
    scale = max(1.0, float(np.max(np.abs(perm))))
    if lo <= 1e-12 * scale:
        raise DegeneratePermeability(
            f"minimum permeability eigenvalue {lo:.3e} below threshold"
        )
    balance = float(S.sum()) * grid.vol
    if abs(balance) > 1e-9 * max(1.0, float(np.max(np.abs(S)))):
        raise ConfigError(f"source integrates to {balance:.3e}, not zero")

    A = assemble_fv_operator(grid, perm)
    p, resid = solve_zero_mean(A, S.ravel() * grid.vol, tol)
    if resid > tol:
        raise SingularSystem(f"Poisson residual {resid:.3e} above tol {tol:.3e}")
    return p.reshape(grid.shape)


def directional_slopes(grid: Grid, p: np.ndarray) -> np.ndarray:
    """theta_m . grad p at every cell, shape (*shape, M)."""
    theta, _ = grid.directions()
    grad = cell_gradient(grid, p)
    return np.einsum("...a,ma->...m", grad, theta)


def flux_gradient(grid: Grid, perm: np.ndarray, p: np.ndarray) -> np.ndarray:
    """grad p reconstructed from conservative face fluxes, shape (*shape, dim).

    The finite-volume normal fluxes P grad p . n (zero on walls) are averaged
    back to cell centers and multiplied by the local inverse permeability.
    On smooth fields this matches the centered cell gradient to O(h^2), but
    the reconstruction stays local in C: at fixed through-flux a cell that
    loses conductivity sees a proportionally larger slope, which is what
    keeps the stationary profile pointwise stable at every gamma. Driving
    the adaptation with the centered stencil instead lets odd-even modes
    grow at rate (1 - gamma) C^(gamma-1) whenever gamma < 1, because
    neighbouring cells share face-averaged slopes and the weak cell never
    feels the restoring force.
    """
    p = np.asarray(p, dtype=float).reshape(grid.shape)
    perm = np.asarray(perm, dtype=float)
    if grid.dim == 1:
        a = perm[..., 0, 0] if perm.shape == grid.shape + (1, 1) else perm
        h = grid.h[0]
        af = 0.5 * (a[1:] + a[:-1])
        vf = af * (p[1:] - p[:-1]) / h
        v = np.zeros(grid.shape)
        v[:-1] += 0.5 * vf
        v[1:] += 0.5 * vf
        return (v / a)[..., None]

    a, b, c = perm[..., 0, 0], perm[..., 0, 1], perm[..., 1, 1]
    grad = cell_gradient(grid, p)
    gx, gy = grad[..., 0], grad[..., 1]
    hx, hy = grid.h
    fx = 0.5 * (a[1:, :] + a[:-1, :]) * (p[1:, :] - p[:-1, :]) / hx
    fx += 0.5 * (b[1:, :] + b[:-1, :]) * 0.5 * (gy[1:, :] + gy[:-1, :])
    fy = 0.5 * (c[:, 1:] + c[:, :-1]) * (p[:, 1:] - p[:, :-1]) / hy
    fy += 0.5 * (b[:, 1:] + b[:, :-1]) * 0.5 * (gx[:, 1:] + gx[:, :-1])
    v = np.zeros(grid.shape + (2,))
    v[:-1, :, 0] += 0.5 * fx
    v[1:, :, 0] += 0.5 * fx
    v[:, :-1, 1] += 0.5 * fy
    v[:, 1:, 1] += 0.5 * fy
    return np.linalg.solve(perm, v[..., None])[..., 0]


def flux_slopes(grid: Grid, perm: np.ndarray, p: np.ndarray) -> np.ndarray:
    """theta_m . grad p from the flux-based reconstruction, shape (*shape, M)."""
    theta, _ = grid.directions()
    return np.einsum("...a,ma->...m", flux_gradient(grid, perm, p), theta)


def step_monokinetic(
    grid: Grid,
    C: np.ndarray,
    p: np.ndarray,
    c0: float,
    gamma: float,
    dt: float,
    support: np.ndarray | None = None,
    slopes: np.ndarray | None = None,
) -> np.ndarray:
    """One explicit step of dC/dt = c0^2 C (theta.grad p)^2 - C^gamma.

    The update never resurrects: cells outside the support mask (the initial
    support, by the model's closure) stay at zero, and the result is clamped
    at zero from below. Pass precomputed directional slopes (the simulate
    loop hands in the flux-based reconstruction) to override the centered
    default.
    """
    C = _directional(grid, C)
    g = directional_slopes(grid, p) if slopes is None else slopes
    growth = (c0 ** 2) * C * g ** 2
    decay = np.where(C > 0.0, C ** gamma, 0.0)
    C_next = np.maximum(C + dt * (growth - decay), 0.0)
    if support is not None:
        C_next = np.where(_directional(grid, support.astype(float)) > 0, C_next, 0.0)
    return C_next


def energy_monokinetic(grid: Grid, C: np.ndarray, p: np.ndarray, c0: float, gamma: float) -> float:
    """Transport energy int (c0^2 C (theta.grad p)^2 + C^gamma/gamma) dtheta dx."""
    C = _directional(grid, C)
    g = directional_slopes(grid, p)
    _, w = grid.directions()
    metabolic = np.where(C > 0.0, C ** gamma, 0.0) / gamma
    dens = (c0 ** 2) * C * g ** 2 + metabolic
    return float(np.einsum("...m,m->...", dens, w).sum() * grid.vol)


@dataclass(frozen=True)
class MonokineticRun:
    times: np.ndarray
    energy: np.ndarray
    C: np.ndarray  # snapshots, (k, *shape, M)
    snapshot_times: np.ndarray
    p: np.ndarray  # final pressure
    converged: bool


def simulate_monokinetic(
    grid: Grid,
    C0: np.ndarray,
    S: np.ndarray,
    c0: float,
    gamma: float,
    r: float = 1e-3,
    dt: float = 1e-2,
    t_end: float = 10.0,
    steady_tol: float = 1e-8,
    record_every: int = 0,
    tol: float = 1e-10,
) -> MonokineticRun:
    """Integrate the monokinetic closure with a frozen support mask.

    Each step assembles the permeability at the current C, solves the
    Poisson problem, and advances C explicitly. Stops early when the max
    relative conductivity velocity falls below steady_tol. record_every = k
    stores every k-th state (0 keeps only the endpoints).
    """
    C = _directional(grid, C0).copy()
    support = C > 0.0
    n_steps = int(np.ceil(t_end / dt))
    times = [0.0]
    energies = []
    snaps = [C.copy()]
    snap_times = [0.0]
    converged = False
    p = None

    for k in range(n_steps):
        perm = assemble_permeability(grid, C, r)
        p = solve_poisson(grid, perm, S, tol=tol)
        energies.append(energy_monokinetic(grid, C, p, c0, gamma))
        slopes = flux_slopes(grid, perm, p)
        C_next = step_monokinetic(grid, C, p, c0, gamma, dt, support, slopes=slopes)
        speed = float(np.max(np.abs(C_next - C))) / (dt * max(1.0, float(np.max(C))))
        C = C_next
        times.append(times[-1] + dt)
        if record_every and (k + 1) % record_every == 0:
            snaps.append(C.copy())
            snap_times.append(times[-1])
        if speed <= steady_tol:
            converged = True
            break

    perm = assemble_permeability(grid, C, r)
    p = solve_poisson(grid, perm, S, tol=tol)
    energies.append(energy_monokinetic(grid, C, p, c0, gamma))
    if not record_every or snap_times[-1] != times[-1]:
        snaps.append(C.copy())
        snap_times.append(times[-1])
    return MonokineticRun(
        times=np.asarray(times),
        energy=np.asarray(energies),
        C=np.asarray(snaps),
        snapshot_times=np.asarray(snap_times),
        p=p,
        converged=converged,
    )


@dataclass(frozen=True)
class Stationary1D:
    C: np.ndarray
    B: np.ndarray
    stability: np.ndarray


def cumulative_source(grid: Grid, S: np.ndarray) -> np.ndarray:
    """B(x) = integral of S from the left wall to each cell center."""
    S = np.asarray(S, dtype=float).reshape(grid.shape)
    if grid.dim != 1:
        raise ValueError("cumulative source is a one-dimensional construction")
    h = grid.h[0]
    return (np.cumsum(S) - 0.5 * S) * h


def stationary_1d(grid: Grid, S: np.ndarray, c0: float, gamma: float) -> Stationary1D:
    """Closed-form 1D stationary profile C = (c0 |B|)^(2/(gamma+1)).

    B is the cumulative source; the linearized growth rate at the profile,
    f'(C) = -(1+gamma) (c0^2 B^2)^((gamma-1)/(gamma+1)), is reported as the
    stability indicator (nonpositive wherever B is nonzero).
    """
    B = cumulative_source(grid, S)
    C = (c0 * np.abs(B)) ** (2.0 / (gamma + 1.0))
    with np.errstate(divide="ignore"):
        stability = -(1.0 + gamma) * (c0 ** 2 * B ** 2) ** ((gamma - 1.0) / (gamma + 1.0))
    return Stationary1D(C=C, B=B, stability=stability)


@dataclass(frozen=True)
class GammaGt1Result:
    p: np.ndarray          # node values in 1d, cell values in 2d
    C: np.ndarray          # directional conductivity at the stationary state
    slopes: np.ndarray     # theta . grad p on cells
    objective: np.ndarray  # strictly decreasing iterates
    grad_norm: float
    layout: str            # "node" or "cell"


def _gt1_functional_1d(grid: Grid, S: np.ndarray, c0: float, gamma: float):
    """Value/gradient closures for node-valued p on a 1D grid."""
    n = grid.shape[0]
    h = grid.h[0]
    q = 2.0 * gamma / (gamma - 1.0)
    kappa = (gamma - 1.0) / (2.0 * gamma) * c0 ** (2.0 / (gamma - 1.0))
    S = np.asarray(S, dtype=float).reshape(grid.shape)

    def value(p: np.ndarray) -> float:
        g = (p[1:] - p[:-1]) / h
        lin = S * 0.5 * (p[1:] + p[:-1])
        return float(np.sum(kappa * np.abs(g) ** q * h) - np.sum(lin * h))

    def grad(p: np.ndarray) -> np.ndarray:
        g = (p[1:] - p[:-1]) / h
        flux = kappa * q * np.abs(g) ** (q - 2.0) * g  # (n,)
        out = np.zeros(n + 1)
        out[1:] += flux
        out[:-1] -= flux
        out[1:] -= 0.5 * S * h
        out[:-1] -= 0.5 * S * h
        return out

    return value, grad


def _gt1_functional_2d(grid: Grid, S: np.ndarray, c0: float, gamma: float):
    """Value/gradient closures for cell-valued p on a 2D grid."""
    theta, w = grid.directions()
    q = 2.0 * gamma / (gamma - 1.0)
    kappa = (gamma - 1.0) / (2.0 * gamma) * c0 ** (2.0 / (gamma - 1.0))
    Gs = gradient_matrices(grid)
    S_flat = np.asarray(S, dtype=float).reshape(grid.shape).ravel()
    vol = grid.vol

    def value(p: np.ndarray) -> float:
        g = directional_slopes(grid, p.reshape(grid.shape))
        dens = kappa * np.einsum("...m,m->...", np.abs(g) ** q, w)
        return float(dens.sum() * vol - (S_flat * p).sum() * vol)

    def grad(p: np.ndarray) -> np.ndarray:
        g = directional_slopes(grid, p.reshape(grid.shape))
        flux = kappa * q * np.abs(g) ** (q - 2.0) * g  # (*shape, M)
        out = np.zeros(grid.n_cells)
        for a in range(grid.dim):
            Va = np.einsum("...m,m,m->...", flux, w, theta[:, a])
            out += Gs[a].T @ Va.ravel()
        return (out - S_flat) * vol

    return value, grad


def _descend(value, grad, x0: np.ndarray, tol: float, max_iter: int):
    """Monotone gradient descent: BB trial steps with Armijo backtracking.

    Accepts only strictly decreasing objectives; returns (x, history, gnorm).
    """
    x = x0 - x0.mean()
    f = value(x)
    g = grad(x)
    history = [f]
    step = 1.0 / max(np.linalg.norm(g), 1e-12)
    prev_x, prev_g = None, None
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return x, np.asarray(history), gnorm
        if prev_x is not None:
            s = x - prev_x
            y = g - prev_g
            sy = float(s @ y)
            if sy > 1e-300:
                step = float(s @ s) / sy
        trial = min(max(step, 1e-12), 1e12)
        accepted = False
        for _ in range(80):
            x_new = x - trial * g
            x_new -= x_new.mean()
            f_new = value(x_new)
            if f_new < f - 1e-4 * trial * gnorm ** 2 and np.isfinite(f_new):
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            break  # no strictly decreasing step representable
        prev_x, prev_g = x, g
        x, f = x_new, f_new
        g = grad(x)
        history.append(f)
    gnorm = float(np.linalg.norm(g))
    if gnorm > tol:
        raise NoConvergence(
            f"gradient norm {gnorm:.3e} above tol {tol:.3e} after {len(history)} iterations"
        )
    return x, np.asarray(history), gnorm


def stationary_gamma_gt1(
    grid: Grid,
    S: np.ndarray,
    c0: float,
    gamma: float,
    tol: float = 1e-8,
    max_iter: int = 20000,
) -> GammaGt1Result:
    """Minimize the strictly convex stationary functional for gamma > 1.

    The functional integrates ((gamma-1)/(2 gamma)) c0^(2/(gamma-1))
    |theta . grad p|^(2 gamma/(gamma-1)) over directions minus the source
    pairing; its Euler-Lagrange system is the stationary nonlinear Poisson
    problem, so the returned gradient norm bounds the weak-form residual
    against unit test fields. One dimension uses node-valued p with exact
    cell slopes; two dimensions use cell-valued p with the shared centered
    gradient. C is recovered as (c0 |theta . grad p|)^(2/(gamma-1)).
    """
    if gamma <= 1.0:
        raise ValueError("this stationary problem requires gamma > 1")
    if grid.dim == 1:
        value, gradf = _gt1_functional_1d(grid, S, c0, gamma)
        x0 = np.zeros(grid.shape[0] + 1)
        layout = "node"
    else:
        value, gradf = _gt1_functional_2d(grid, S, c0, gamma)
        x0 = np.zeros(grid.n_cells)
        layout = "cell"
    p, history, gnorm = _descend(value, gradf, x0, tol, max_iter)

    if layout == "node":
        g = ((p[1:] - p[:-1]) / grid.h[0])[:, None]
    else:
        g = directional_slopes(grid, p.reshape(grid.shape))
    C = (c0 * np.abs(g)) ** (2.0 / (gamma - 1.0))
    return GammaGt1Result(
        p=p if layout == "node" else p.reshape(grid.shape),
        C=C,
        slopes=g,
        objective=history,
        grad_norm=gnorm,
        layout=layout,
    )


def weak_residual(
    grid: Grid,
    result: GammaGt1Result,
    S: np.ndarray,
    c0: float,
    gamma: float,
    phi: np.ndarray,
) -> float:
    """Weak-form defect of a stationary candidate against one test field.

    Evaluates int C (theta.grad p)(theta.grad phi) c0^2-normalized minus the
    source pairing, in the same discrete pairing the minimizer used; at an
    exact discrete minimizer this is <grad F(p), phi>.
    """
    if result.layout == "node":
        _, gradf = _gt1_functional_1d(grid, S, c0, gamma)
        return float(gradf(result.p) @ np.asarray(phi).ravel())
    _, gradf = _gt1_functional_2d(grid, S, c0, gamma)
    return float(gradf(result.p.ravel()) @ np.asarray(phi).ravel())


@dataclass(frozen=True)
class GammaEq1Result:
    alpha: np.ndarray    # conductivity mass on the single active direction
    theta: np.ndarray    # unit direction field (first component >= 0)
    sigma: np.ndarray    # +-1 flux orientation along theta
    grad_p: np.ndarray   # pressure slope field, |c0 grad p| = 1 on support
    S: np.ndarray        # source consistent with the construction
    p: np.ndarray        # least-squares potential fitted to grad_p
    max_unit_defect: float
    max_curl: float


def stationary_gamma_eq1(
    grid: Grid,
    w_field: np.ndarray,
    c0: float,
    curl_tol: float = 1e-8,
) -> GammaEq1Result:
    """Singular gamma = 1 stationary state carried by a curl-free flux field.

    Given w with curl w = 0 (checked; RotationalInput otherwise), sets
    grad p = w / (c0 |w|), the active direction to +-w/|w| folded onto the
    half-circle, and the directional mass alpha = c0 |w|; then P grad p = w
    holds cell-wise and the induced source is S = -div w. The unit-slope
    defect max | c0 |grad p| - 1 | on the support certifies stationarity of
    the monokinetic law there.
    """
    if grid.dim != 2:
        raise ValueError("the singular construction lives on 2D grids")
    w_field = np.asarray(w_field, dtype=float)
    if w_field.shape != grid.shape + (2,):
        raise ValueError(f"w shape {w_field.shape} != {grid.shape + (2,)}")

    gx = cell_gradient(grid, w_field[..., 0])
    gy = cell_gradient(grid, w_field[..., 1])
    curl = gy[..., 0] - gx[..., 1]
    scale = max(1.0, float(np.max(np.abs(w_field))))
    max_curl = float(np.max(np.abs(curl)))
    if max_curl > curl_tol * scale:
        raise RotationalInput(f"max |curl w| = {max_curl:.3e} exceeds tolerance")

    mag = np.sqrt(w_field[..., 0] ** 2 + w_field[..., 1] ** 2)
    supp = mag > 1e-14 * scale
    grad_p = np.zeros_like(w_field)
    grad_p[supp] = w_field[supp] / (c0 * mag[supp][..., None])

    unit = np.zeros_like(w_field)
    unit[supp] = w_field[supp] / mag[supp][..., None]
    flip = unit[..., 0] < 0
    exactly_vertical = (unit[..., 0] == 0) & (unit[..., 1] < 0)
    sgn = np.where(flip | exactly_vertical, -1.0, 1.0)
    theta_half = unit * sgn[..., None]
    sigma = np.where(supp, sgn, 0.0)
    alpha = c0 * mag

    S = -(gx[..., 0] + gy[..., 1])

    # potential reconstruction: least squares grad p_fit ~ grad_p
    Gs = gradient_matrices(grid)
    A = quadratic_form_matrix(grid, np.ones(grid.shape))
    rhs = sum(Gs[a].T @ grad_p[..., a].ravel() for a in range(2))
    p_flat, _ = solve_zero_mean(A, rhs, tol=1e-8)

    slope_mag = np.sqrt(grad_p[..., 0] ** 2 + grad_p[..., 1] ** 2)
    max_defect = float(np.max(np.abs(c0 * slope_mag[supp] - 1.0), initial=0.0))
    return GammaEq1Result(
        alpha=alpha,
        theta=theta_half,
        sigma=sigma,
        grad_p=grad_p,
        S=S,
        p=p_flat.reshape(grid.shape),
        max_unit_defect=max_defect,
        max_curl=max_curl,
    )


@dataclass(frozen=True)
class ParticleEnsemble:
    """Weighted oriented particles carrying conductivity.

    positions (N, d), theta (N, d) unit with first component >= 0 (rows are
    flipped on construction when needed), C (N,) nonnegative, weights (N,)
    positive summing to one. Positions, orientations, and weights are fixed
    data of the dynamics; only C evolves.
    """

    positions: np.ndarray
    theta: np.ndarray
    C: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        th = np.atleast_2d(np.asarray(self.theta, dtype=float))
        C = np.asarray(self.C, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        n = pos.shape[0]
        if th.shape != pos.shape or C.shape != (n,) or w.shape != (n,):
            raise ConfigError("inconsistent ensemble array shapes")
        norms = np.linalg.norm(th, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ConfigError("orientations must be unit vectors")
        flip = (th[:, 0] < 0) | ((th[:, 0] == 0) & (th[:, -1] < 0))
        th = th * np.where(flip, -1.0, 1.0)[:, None]
        if np.any(C < 0):
            raise ConfigError("conductivities must be nonnegative")
        if np.any(w <= 0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise ConfigError("weights must be positive and sum to one")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "weights", w)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class ParticleRun:
    times: np.ndarray
    C: np.ndarray       # (k, N) recorded conductivities
    final: ParticleEnsemble
    p: np.ndarray
    converged: bool


def _ensemble_permeability(grid: Grid, ens: ParticleEnsemble, r: float) -> np.ndarray:
    if grid.dim == 1:
        dens = deposit_tent(grid, ens.positions, ens.weights * ens.C)
        return r + dens
    vals = np.column_stack(
        [
            ens.weights * ens.C * ens.theta[:, 0] * ens.theta[:, 0],
            ens.weights * ens.C * ens.theta[:, 0] * ens.theta[:, 1],
            ens.weights * ens.C * ens.theta[:, 1] * ens.theta[:, 1],
        ]
    )
    dep = deposit_tent(grid, ens.positions, vals)
    perm = np.empty(grid.shape + (2, 2))
    perm[..., 0, 0] = dep[..., 0] + r
    perm[..., 0, 1] = dep[..., 1]
    perm[..., 1, 0] = dep[..., 1]
    perm[..., 1, 1] = dep[..., 2] + r
    return perm


def simulate_particles(
    grid: Grid,
    ensemble: ParticleEnsemble,
    S: np.ndarray,
    c0: float,
    gamma: float,
    r: float,
    dt: float = 0.05,
    t_end: float = 30.0,
    steady_tol: float = 1e-7,
    record_every: int = 0,
    tol: float = 1e-10,
) -> ParticleRun:
    """Adapt particle conductivities against the grid-projected pressure.

    Each step deposits w C theta theta^T onto the grid with a tent kernel,
    adds the r I background (r > 0 is required: the ensemble alone does not
    cover the domain), solves the Poisson problem, gathers grad p back at
    the particles with the same tent kernel (the matched pair keeps the
    deposited conductivity and the drive it feels consistent), and advances
    dC/dt = C (c0^2 (theta.grad p)^2 - C^(gamma-1)) explicitly with
    clamping at zero.
    """
    if r <= 0:
        raise DegeneratePermeability("particle ensembles require r > 0")
    C = ensemble.C.copy()
    n_steps = int(np.ceil(t_end / dt))
    times = [0.0]
    recs = [C.copy()]
    converged = False
    p = None

    for k in range(n_steps):
        ens = ParticleEnsemble(ensemble.positions, ensemble.theta, C, ensemble.weights)
        perm = _ensemble_permeability(grid, ens, r)
        p = solve_poisson(grid, perm, S, tol=tol)
        grad = cell_gradient(grid, p)
        gp = gather_tent(grid, grad, ensemble.positions)
        g = np.einsum("na,na->n", gp, ensemble.theta)
        growth = (c0 ** 2) * g ** 2 * C
        decay = np.where(C > 0, C ** gamma, 0.0)
        C_next = np.maximum(C + dt * (growth - decay), 0.0)
        speed = float(np.max(np.abs(C_next - C))) / (dt * max(1.0, float(np.max(C))))
        C = C_next
        times.append(times[-1] + dt)
        if record_every and (k + 1) % record_every == 0:
            recs.append(C.copy())
        if speed <= steady_tol:
            converged = True
            break

    if not record_every or len(recs) == 1 or not np.array_equal(recs[-1], C):
        recs.append(C.copy())
    final = ParticleEnsemble(ensemble.positions, ensemble.theta, C, ensemble.weights)
    return ParticleRun(
        times=np.asarray(times),
        C=np.asarray(recs),
        final=final,
        p=p,
        converged=converged,
    )


def conductance_moment(grid: Grid, C: np.ndarray) -> np.ndarray:
    """Directional moment m(x) = sum_m w_m sqrt(C_m) theta_m, shape (*shape, d)."""
    C = _directional(grid, C)
    theta, w = grid.directions()
    return np.einsum("...m,m,ma->...a", np.sqrt(np.maximum(C, 0.0)), w, theta)


def write_scalar_csv(grid: Grid, field: np.ndarray, path, name: str = "p") -> None:
    """Cell table: x[, y], value."""
    field = np.asarray(field, dtype=float).reshape(grid.shape)
    centers = grid.centers()
    if grid.dim == 1:
        header = ["x", name]
        rows = ([float(centers[i, 0]), float(field[i])] for i in range(grid.shape[0]))
    else:
        header = ["x", "y", name]
        rows = (
            [float(centers[i, j, 0]), float(centers[i, j, 1]), float(field[i, j])]
            for i in range(grid.shape[0])
            for j in range(grid.shape[1])
        )
    write_csv(path, header, rows)


def write_directional_csv(grid: Grid, C: np.ndarray, path) -> None:
    """Directional table: x[, y], direction index, C."""
    C = _directional(grid, C)
    centers = grid.centers()
    M = C.shape[-1]
    if grid.dim == 1:
        header = ["x", "k", "C"]
        rows = (
            [float(centers[i, 0]), m, float(C[i, m])]
            for i in range(grid.shape[0])
            for m in range(M)
        )
    else:
        header = ["x", "y", "k", "C"]
        rows = (
            [float(centers[i, j, 0]), float(centers[i, j, 1]), m, float(C[i, j, m])]
            for i in range(grid.shape[0])
            for j in range(grid.shape[1])
            for m in range(M)
        )
    write_csv(path, header, rows)
