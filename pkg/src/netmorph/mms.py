"""Minimizing movements for the pressureless transport energy.

States are nonnegative directional conductivities C; the metric is the
Fisher-Rao distance d(C0, C1)^2 = 4 int (sqrt C0 - sqrt C1)^2, whose
geodesics move mass vertically without transport. One scheme step solves

    (C+, Q+) = argmin  (1/(2 tau)) d(C, C_n)^2 + E[C, Q]

over pairs with Q feasible for the sources, where

    E[C, Q] = int 2 c0^2 f2(C, Q) + C^gamma / gamma,
    f2(x, y) = y^2 / (2x)  (0 at (0,0), +inf for x = 0, y != 0 or x < 0),

by exact alternation: the Q-subproblem is an equality-constrained quadratic
solved through its pressure multiplier, and the C-subproblem decouples into
pointwise strictly convex scalar problems (gamma >= 1) in u = sqrt(C). Dead
cells stay dead, so iterates remain absolutely continuous with respect to
their predecessors. A scalar Beckmann variant (vector flux q, isotropic
conductivity) provides the gamma = 1 cross-check: both formulations share
optimal values, and the directional optimum concentrates near q/|q|.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import InfeasibleSupport, InnerStall, NoConvergence
from .grids import Grid, gradient_matrices, quadratic_form_matrix, solve_zero_mean
from .meso import _directional, directional_slopes
from .tabular import write_csv

__all__ = [
    "MmsParams",
    "MmsStepResult",
    "MmsTrajectory",
    "bb_integrand",
    "fisher_rao_distance",
    "energy_pressureless",
    "minimize_Q_given_C",
    "mms_step",
    "mms_run",
    "tv_norms",
    "BeckmannRun",
    "BeckmannReport",
    "beckmann_minimize",
    "beckmann_report",
    "beckmann_check",
    "write_mms_csv",
]


@dataclass(frozen=True)
class MmsParams:
    """Controls for one minimizing-movement chain."""

    tau: float
    gamma: float
    c0: float
    inner_tol: float = 1e-10
    max_alternations: int = 60
    r: float = 0.0
    eps_c: float = 1e-12

    def __post_init__(self):
        if self.tau <= 0 or self.gamma <= 0 or self.c0 <= 0:
            raise ValueError("tau, gamma, c0 must be positive")


def bb_integrand(x, y):
    """Lower-semicontinuous quadratic-over-linear f2(x, y) = y^2 / (2x).

    Defined as 0 at (0, 0) and +inf when x = 0 with y != 0 or x < 0, which
    is exactly the convex l.s.c. envelope used by the kinetic term.
    """
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x_arr > 0, y_arr ** 2 / (2.0 * np.where(x_arr > 0, x_arr, 1.0)), 0.0)
    out = np.where((x_arr == 0) & (y_arr != 0), np.inf, out)
    out = np.where(x_arr < 0, np.inf, out)
    if np.isscalar(x) and np.isscalar(y):
        return float(out)
    return out


def fisher_rao_distance(grid: Grid, C0: np.ndarray, C1: np.ndarray) -> float:
    """d(C0, C1) = 2 sqrt(int (sqrt C0 - sqrt C1)^2 dtheta dx)."""
    C0 = _directional(grid, C0)
    C1 = _directional(grid, C1)
    _, w = grid.directions()
    diff2 = (np.sqrt(np.maximum(C0, 0.0)) - np.sqrt(np.maximum(C1, 0.0))) ** 2
    return 2.0 * float(np.sqrt(np.einsum("...m,m->...", diff2, w).sum() * grid.vol))


def energy_pressureless(
    grid: Grid, C: np.ndarray, Q: np.ndarray, gamma: float, c0: float
) -> float:
    """E[C, Q] = int (2 c0^2 f2(C, Q) + C^gamma / gamma) dtheta dx."""
    C = _directional(grid, C)
    Q = _directional(grid, Q)
    _, w = grid.directions()
    kinetic = 2.0 * c0 ** 2 * bb_integrand(C, Q)
    if np.any(np.isinf(kinetic)):
        return float("inf")
    metabolic = np.where(C > 0.0, C ** gamma, 0.0) / gamma
    return float(np.einsum("...m,m->...", kinetic + metabolic, w).sum() * grid.vol)


def tv_norms(grid: Grid, C: np.ndarray, Q: np.ndarray) -> tuple[float, float]:
    """Total masses int |C| and int |Q| over cells and directions."""
    C = _directional(grid, C)
    Q = _directional(grid, Q)
    _, w = grid.directions()
    return (
        float(np.einsum("...m,m->...", np.abs(C), w).sum() * grid.vol),
        float(np.einsum("...m,m->...", np.abs(Q), w).sum() * grid.vol),
    )


def _flux_divergence(grid: Grid, Q: np.ndarray) -> np.ndarray:
    """div of the direction-integrated flux in the discrete weak pairing.

    Integration by parts with no-flux walls reads int grad(phi) . v = -int
    phi div(v), so the cellwise divergence is -G^T sum_m w Q theta.
    """
    theta, w = grid.directions()
    Gs = gradient_matrices(grid)
    out = np.zeros(grid.n_cells)
    for a in range(grid.dim):
        Va = np.einsum("...m,m,m->...", Q, w, theta[:, a])
        out += Gs[a].T @ Va.ravel()
    return -out


def minimize_Q_given_C(
    grid: Grid,
    C: np.ndarray,
    S: np.ndarray,
    c0: float,
    tol: float = 1e-8,
    r: float = 0.0,
    eps_c: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Kinetic-optimal feasible flux for frozen conductivity.

    Minimizes int c0^2 Q^2 / C subject to div(int Q theta dtheta) = S in the
    cell-centered discrete pairing. The optimality system reduces to the
    anisotropic pressure problem A p = 2 c0^2 S with A = G^T P_C G, after
    which Q = -C (theta . grad p) / (2 c0^2): pressure is high at sources
    and the flux runs down-gradient, div(int Q theta) = S. Cells with
    C <= eps_c carry no flux by construction. Returns (Q, p, constraint residual); a residual
    above tol means the support cannot route the sources and raises
    InfeasibleSupport. r > 0 adds an isotropic channel r G^T G for
    experiments with leaky supports (its flux is not part of Q).
    """
    C = _directional(grid, C)
    C_eff = np.where(C > eps_c, C, 0.0)
    theta, w = grid.directions()
    if grid.dim == 1:
        perm = (C_eff * w).sum(axis=-1)
    else:
        outer = np.einsum("ma,mb->mab", theta, theta)
        perm = np.einsum("...m,m,mab->...ab", C_eff, w, outer)
    A = quadratic_form_matrix(grid, perm)
    # pin the pressure where the support has died: without the tiny
    # isotropic channel the operator is singular on the dead region and the
    # factorization breaks once concentration empties most cells. The pin
    # carries none of Q; its share of the routing shows up in the returned
    # constraint residual and stays far below tol.
    pin = 1e-13 * max(float(C_eff.max()), 1.0)
    A = A + (pin + r) * quadratic_form_matrix(grid, np.ones(grid.shape))
    rhs = 2.0 * c0 ** 2 * np.asarray(S, dtype=float).reshape(grid.shape).ravel()
    p, _ = solve_zero_mean(A, rhs, tol)
    p_grid = p.reshape(grid.shape)
    Q = -C_eff * directional_slopes(grid, p_grid) / (2.0 * c0 ** 2)

    defect = _flux_divergence(grid, Q) - np.asarray(S, dtype=float).ravel()
    resid = float(np.max(np.abs(defect))) / max(1.0, float(np.max(np.abs(S))))
    if resid > tol:
        raise InfeasibleSupport(
            f"flux constraint residual {resid:.3e} above tol {tol:.3e}"
        )
    return Q, p_grid, resid


def _prox_sqrtC(
    Cn: np.ndarray, qsq: np.ndarray, tau: float, gamma: float, c0: float
) -> np.ndarray:
    """Proximal C-update, solved in the square-root variable u = sqrt C.

    Returns the conductivity u^2 minimizing (2/tau)(u - sqrt Cn)^2 +
    c0^2 q^2/u^2 + u^(2g)/g. Strictly convex in u >= 0 for gamma >= 1:
    solved by bracketed bisection on the derivative plus Newton polish,
    fully vectorized. For gamma < 1 the scalar problems may be nonconvex;
    each is minimized numerically and compared against u = 0 (a local
    certificate).
    """
    s = np.sqrt(np.maximum(Cn, 0.0)).ravel()
    a = (c0 ** 2) * np.maximum(qsq, 0.0).ravel()
    u = np.zeros_like(s)
    active = (s > 0) | (a > 0)
    if not np.any(active):
        return (u ** 2).reshape(np.shape(Cn))
    sa, aa = s[active], a[active]

    if gamma >= 1.0:
        def hp(x):
            out = (4.0 / tau) * (x - sa) + 2.0 * x ** (2.0 * gamma - 1.0)
            nz = aa > 0
            xx = np.where(x > 0, x, 1.0)
            out = out - np.where(nz, 2.0 * aa / xx ** 3, 0.0)
            out = np.where((x <= 0) & nz, -np.inf, out)
            return out

        hi = np.maximum(sa, 1.0)
        hi = np.maximum(hi, (0.5 * aa * tau) ** (1.0 / 4.0))
        for _ in range(200):
            bad = hp(hi) <= 0
            if not np.any(bad):
                break
            hi = np.where(bad, hi * 2.0, hi)
        lo = np.where(aa > 0, np.finfo(float).tiny, 0.0)
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            neg = hp(mid) < 0
            lo = np.where(neg, mid, lo)
            hi = np.where(neg, hi, mid)
        x = 0.5 * (lo + hi)
        for _ in range(3):  # Newton polish for relative accuracy
            xx = np.maximum(x, np.finfo(float).tiny)
            grad = (4.0 / tau) * (x - sa) + 2.0 * x ** (2.0 * gamma - 1.0) - 2.0 * aa / xx ** 3
            hess = (4.0 / tau) + 2.0 * (2.0 * gamma - 1.0) * xx ** (2.0 * gamma - 2.0) + 6.0 * aa / xx ** 4
            step = grad / hess
            x = np.clip(x - step, lo, hi)
        u[active] = x
        return (u ** 2).reshape(np.shape(Cn))

    # gamma < 1: nonconvex scalar problems, solved one by one
    vals = np.zeros_like(sa)
    for i, (si, ai) in enumerate(zip(sa, aa)):
        def h(x, si=si, ai=ai):
            if x <= 0:
                return (2.0 / tau) * si ** 2 if ai == 0 else np.inf
            return (
                (2.0 / tau) * (x - si) ** 2
                + ai / x ** 2
                + x ** (2.0 * gamma) / gamma
            )

        hi = max(si, 1.0, (0.5 * ai * tau) ** 0.25) * 4.0
        res = optimize.minimize_scalar(h, bounds=(np.finfo(float).tiny, hi), method="bounded",
                                       options={"xatol": 1e-14})
        best_x, best_v = res.x, res.fun
        if ai == 0 and h(0.0) <= best_v:
            best_x = 0.0
        vals[i] = best_x
    u[active] = vals
    return (u ** 2).reshape(np.shape(Cn))


@dataclass(frozen=True)
class MmsStepResult:
    C: np.ndarray
    Q: np.ndarray
    p: np.ndarray
    objective: np.ndarray  # inner alternation trace
    alternations: int
    stalled: bool


def mms_step(
    grid: Grid,
    Cn: np.ndarray,
    S: np.ndarray,
    params: MmsParams,
) -> MmsStepResult:
    """One minimizing movement: alternate exact Q- and C-subproblems.

    Both subproblem solves decrease the step objective by construction, so
    the recorded trace is monotone; an increase beyond roundoff reverts the
    offending update, emits InnerStall, and returns the last good iterate.
    """
    Cn = _directional(grid, Cn)

    def objective(C, Q):
        fr = fisher_rao_distance(grid, C, Cn) ** 2 / (2.0 * params.tau)
        return fr + energy_pressureless(grid, C, Q, params.gamma, params.c0)

    C = Cn.copy()
    Q, p, _ = minimize_Q_given_C(grid, C, S, params.c0, r=params.r, eps_c=params.eps_c)
    trace = [objective(C, Q)]
    stalled = False
    k = 0
    for k in range(1, params.max_alternations + 1):
        C_new = _prox_sqrtC(Cn, Q ** 2, params.tau, params.gamma, params.c0)
        Q_new, p_new, _ = minimize_Q_given_C(
            grid, C_new, S, params.c0, r=params.r, eps_c=params.eps_c
        )
        val = objective(C_new, Q_new)
        if val > trace[-1] + 1e-12 * max(1.0, abs(trace[-1])):
            warnings.warn(
                f"inner alternation raised the objective by {val - trace[-1]:.3e}",
                InnerStall,
            )
            stalled = True
            break
        C, Q, p = C_new, Q_new, p_new
        gain = trace[-1] - val
        trace.append(val)
        if gain <= params.inner_tol * max(1.0, abs(val)):
            break
    return MmsStepResult(C=C, Q=Q, p=p, objective=np.asarray(trace), alternations=k, stalled=stalled)


@dataclass(frozen=True)
class MmsTrajectory:
    C: np.ndarray        # (n+1, *shape, M)
    Q: np.ndarray
    p: np.ndarray        # final pressure
    energy: np.ndarray   # (n+1,)
    fr_increments: np.ndarray  # (n,)
    tv_C: np.ndarray
    tv_Q: np.ndarray
    tv_bound: float


def mms_run(
    grid: Grid,
    C0: np.ndarray,
    S: np.ndarray,
    params: MmsParams,
    n_steps: int,
) -> MmsTrajectory:
    """Run the minimizing-movement chain and enforce its two estimates.

    Per step, the dissipation inequality
    (1/(2 tau)) d(C_n, C_{n+1})^2 + E_{n+1} <= E_n must hold to 1e-8
    relative slack, and total masses must respect
    ||C|| + ||Q|| <= 2 (1 + sqrt2 c0) E_0 (a duality bound, informative for
    c0 >~ 0.26). Violations raise NoConvergence: with exact subproblem
    solves they can only come from solver breakdown.
    """
    C = _directional(grid, C0).astype(float)
    Q0, p, _ = minimize_Q_given_C(grid, C, S, params.c0, r=params.r, eps_c=params.eps_c)
    energy = [energy_pressureless(grid, C, Q0, params.gamma, params.c0)]
    Cs, Qs = [C.copy()], [Q0]
    fr_inc, tvC_list, tvQ_list = [], [], []
    tvC0, tvQ0 = tv_norms(grid, C, Q0)
    tvC_list.append(tvC0)
    tvQ_list.append(tvQ0)
    bound = 2.0 * (1.0 + np.sqrt(2.0) * params.c0) * energy[0]

    for n in range(n_steps):
        step = mms_step(grid, C, S, params)
        d = fisher_rao_distance(grid, step.C, C)
        E_next = energy_pressureless(grid, step.C, step.Q, params.gamma, params.c0)
        lhs = d ** 2 / (2.0 * params.tau) + E_next
        if lhs > energy[-1] + 1e-8 * max(1.0, abs(energy[-1])):
            raise NoConvergence(
                f"dissipation inequality failed at step {n}: {lhs:.12g} > {energy[-1]:.12g}"
            )
        C, p = step.C, step.p
        energy.append(E_next)
        fr_inc.append(d)
        tvC, tvQ = tv_norms(grid, C, step.Q)
        tvC_list.append(tvC)
        tvQ_list.append(tvQ)
        if tvC + tvQ > bound + 1e-8 * max(1.0, bound):
            raise NoConvergence(
                f"mass bound failed at step {n}: {tvC + tvQ:.12g} > {bound:.12g}"
            )
        Cs.append(C.copy())
        Qs.append(step.Q)

    return MmsTrajectory(
        C=np.asarray(Cs),
        Q=np.asarray(Qs),
        p=p,
        energy=np.asarray(energy),
        fr_increments=np.asarray(fr_inc),
        tv_C=np.asarray(tvC_list),
        tv_Q=np.asarray(tvQ_list),
        tv_bound=bound,
    )


@dataclass(frozen=True)
class BeckmannRun:
    C: np.ndarray      # (*shape,)
    q: np.ndarray      # (*shape, d)
    p: np.ndarray
    energy: np.ndarray


def beckmann_minimize(
    grid: Grid,
    S: np.ndarray,
    c0: float,
    tau: float = 0.5,
    n_steps: int = 100,
    C0: np.ndarray | None = None,
    eps_c: float = 1e-12,
) -> BeckmannRun:
    """Minimizing movements for the scalar-conductivity Beckmann form.

    State (C, q) with vector flux q, energy int c0^2 |q|^2 / C + C and
    constraint div q = S. The same alternation applies: q through the
    isotropic pressure problem, C through the pointwise prox with |q|^2.
    """
    S_flat = np.asarray(S, dtype=float).reshape(grid.shape).ravel()
    C = np.ones(grid.shape) if C0 is None else np.asarray(C0, dtype=float).copy()
    Gs = gradient_matrices(grid)

    def solve_q(Cfield):
        perm = np.where(Cfield > eps_c, Cfield, 0.0)
        A = quadratic_form_matrix(grid, perm)
        # tiny isotropic channel pinning the pressure on dead cells; see
        # minimize_Q_given_C for why the operator needs it late in the run
        pin = 1e-13 * max(float(perm.max()), 1.0)
        A = A + pin * quadratic_form_matrix(grid, np.ones(grid.shape))
        pvec, _ = solve_zero_mean(A, 2.0 * c0 ** 2 * S_flat, tol=1e-8)
        grad = np.stack(
            [(Gs[a] @ pvec).reshape(grid.shape) for a in range(grid.dim)], axis=-1
        )
        return -perm[..., None] * grad / (2.0 * c0 ** 2), pvec.reshape(grid.shape)

    def value(Cfield, qfield):
        kin = 2.0 * c0 ** 2 * bb_integrand(Cfield, np.linalg.norm(qfield, axis=-1))
        if np.any(np.isinf(kin)):
            return float("inf")
        return float((kin + Cfield).sum() * grid.vol)

    q, p = solve_q(C)
    energy = [value(C, q)]
    for _ in range(n_steps):
        Cn = C
        def step_obj(Cf, qf):
            fr = 4.0 * ((np.sqrt(np.maximum(Cf, 0.0)) - np.sqrt(np.maximum(Cn, 0.0))) ** 2).sum() * grid.vol
            return fr / (2.0 * tau) + value(Cf, qf)

        prev = step_obj(C, q)
        for _ in range(40):
            C_new = _prox_sqrtC(Cn, (q ** 2).sum(axis=-1), tau, 1.0, c0)
            q_new, p_new = solve_q(C_new)
            val = step_obj(C_new, q_new)
            if val > prev + 1e-12 * max(1.0, abs(prev)):
                break
            C, q, p = C_new, q_new, p_new
            gain = prev - val
            prev = val
            if gain <= 1e-10 * max(1.0, abs(val)):
                break
        energy.append(value(C, q))
    return BeckmannRun(C=C, q=q, p=p, energy=np.asarray(energy))


@dataclass(frozen=True)
class BeckmannReport:
    value_directional: float
    value_beckmann: float
    rel_gap: float
    max_spread: float
    spacing: float
    n_checked: int
    values_ok: bool
    spread_ok: bool

    @property
    def ok(self) -> bool:
        return self.values_ok and self.spread_ok


def beckmann_report(
    grid: Grid,
    traj: MmsTrajectory,
    beck: BeckmannRun,
    value_rtol: float = 0.02,
) -> BeckmannReport:
    """Compare finished directional and Beckmann chains at gamma = 1.

    The final energies agree in the continuum; the directional value carries
    an O(spacing^2) excess from restricting directions to quadrature nodes.
    Wherever the Beckmann flux is appreciable, the directional conductivity
    must concentrate within one quadrature spacing of q/|q|.
    """
    v_dir = float(traj.energy[-1])
    v_beck = float(beck.energy[-1])
    rel_gap = abs(v_dir - v_beck) / max(abs(v_dir), abs(v_beck))

    theta, w = grid.directions()
    phi = np.arctan2(theta[:, 1], theta[:, 0])  # in (-pi/2, pi/2]
    spacing = np.pi / (grid.n_dirs - 1)

    qmag = np.linalg.norm(beck.q, axis=-1)
    mask = qmag > 1e-6 * qmag.max()
    qx = np.where(beck.q[..., 0] < 0, -beck.q[..., 0], beck.q[..., 0])
    qy = np.where(beck.q[..., 0] < 0, -beck.q[..., 1], beck.q[..., 1])
    phi_star = np.arctan2(qy, qx)

    Cf = traj.C[-1]
    delta = phi[None, None, :] - phi_star[..., None]
    delta = (delta + np.pi / 2.0) % np.pi - np.pi / 2.0
    weight = Cf * w
    denom = weight.sum(axis=-1)
    safe = np.where(denom > 0, denom, 1.0)
    spread = np.sqrt((weight * delta ** 2).sum(axis=-1) / safe)
    max_spread = float(spread[mask].max()) if np.any(mask) else 0.0

    return BeckmannReport(
        value_directional=v_dir,
        value_beckmann=v_beck,
        rel_gap=float(rel_gap),
        max_spread=max_spread,
        spacing=float(spacing),
        n_checked=int(mask.sum()),
        values_ok=bool(rel_gap <= value_rtol),
        spread_ok=bool(max_spread <= spacing + 1e-12),
    )


def beckmann_check(
    grid: Grid,
    S: np.ndarray,
    c0: float,
    tau: float = 0.5,
    n_steps: int = 150,
    value_rtol: float = 0.02,
) -> tuple[BeckmannReport, MmsTrajectory, BeckmannRun]:
    """Run both gamma = 1 chains from uniform data and compare them."""
    if grid.dim != 2:
        raise ValueError("the Beckmann comparison needs a 2D grid")
    params = MmsParams(tau=tau, gamma=1.0, c0=c0)
    C0 = np.ones(grid.shape + (grid.n_dirs,))
    traj = mms_run(grid, C0, S, params, n_steps)
    beck = beckmann_minimize(grid, S, c0, tau=tau, n_steps=n_steps)
    return beckmann_report(grid, traj, beck, value_rtol), traj, beck


def write_mms_csv(traj: MmsTrajectory, path) -> None:
    """Per-step table: step, energy, FR increment, total masses."""
    rows = []
    for n in range(len(traj.energy)):
        inc = traj.fr_increments[n - 1] if n > 0 else 0.0
        rows.append([n, traj.energy[n], inc, traj.tv_C[n], traj.tv_Q[n]])
    write_csv(path, ["step", "energy", "fr_increment", "tv_C", "tv_Q"], rows)
