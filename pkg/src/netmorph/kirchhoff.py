"""Nodal pressure solves and flux reconstruction on networks.

Mass conservation at every vertex with the edge flux law
Q_e = C_e (P_u - P_v) / L_e leads to a weighted graph Laplacian system
L P = S. The Laplacian is singular (constants per connected component), so
pressures are fixed by a zero-mean gauge on each connected component of the
conducting subgraph {C > 0}. Solvable at all requires each such component to
carry balanced sources.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import LoopyFlux, SingularSystem, UnbalancedComponent
from .graph import Network, detect_flux_loops, flux_tolerance

__all__ = [
    "support_components",
    "solve_kirchhoff",
    "fluxes_from_pressures",
    "kirchhoff_residual",
    "pressures_from_tree_flux",
]

_DENSE_LIMIT = 200  # per-component size above which CG takes over


def support_components(net: Network, active: np.ndarray) -> tuple[tuple[int, ...], ...]:
    """Connected components (storage indices) of the subgraph of active edges.

    Vertices touched by no active edge come back as singleton components.
    """
    parent = list(range(net.n_vertices))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in np.flatnonzero(active):
        iu, iv = (int(x) for x in net.edge_rows[int(e)])
        ra, rb = find(iu), find(iv)
        if ra != rb:
            parent[ra] = rb
    groups: dict[int, list[int]] = {}
    for i in range(net.n_vertices):
        groups.setdefault(find(i), []).append(i)
    return tuple(tuple(g) for g in groups.values())


def _laplacian_apply(edge_rows: np.ndarray, w: np.ndarray, n: int, x: np.ndarray) -> np.ndarray:
    drop = x[edge_rows[:, 0]] - x[edge_rows[:, 1]]
    out = np.bincount(edge_rows[:, 0], weights=w * drop, minlength=n)
    out -= np.bincount(edge_rows[:, 1], weights=w * drop, minlength=n)
    return out


def _solve_component(
    edge_rows: np.ndarray, w: np.ndarray, S: np.ndarray, tol: float
) -> np.ndarray:
    """Zero-mean solve of L P = S on one connected component.

    Shifting the Laplacian by (1/n) 11^T removes its null space without
    moving the zero-mean solution, since that solution is orthogonal to the
    shift. Dense solve for small components, Jacobi-preconditioned CG above.
    """
    n = S.size
    if n == 1:
        return np.zeros(1)
    if n <= _DENSE_LIMIT:
        L = np.zeros((n, n))
        iu, iv = edge_rows[:, 0], edge_rows[:, 1]
        np.add.at(L, (iu, iu), w)
        np.add.at(L, (iv, iv), w)
        np.add.at(L, (iu, iv), -w)
        np.add.at(L, (iv, iu), -w)
        A = L + 1.0 / n
        try:
            P = np.linalg.solve(A, S)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(f"dense Kirchhoff solve failed: {exc}") from exc
        return P - P.mean()

    diag = np.bincount(edge_rows[:, 0], weights=w, minlength=n)
    diag += np.bincount(edge_rows[:, 1], weights=w, minlength=n)
    op = LinearOperator(
        (n, n),
        matvec=lambda x: _laplacian_apply(edge_rows, w, n, x) + x.mean(),
    )
    M = LinearOperator((n, n), matvec=lambda x: x / (diag + 1.0 / n))
    scale = max(1.0, float(np.max(np.abs(S))))
    P, info = cg(op, S, rtol=0.0, atol=0.1 * tol * scale, M=M, maxiter=50 * n)
    if info != 0:
        raise SingularSystem(f"CG did not converge (info={info})")
    return P - P.mean()


def solve_kirchhoff(
    net: Network,
    C: np.ndarray,
    tol: float = 1e-10,
    support_floor: float = 0.0,
) -> np.ndarray:
    """Pressures for conductivities C, zero-mean per conducting component.

    Edges with C <= support_floor are treated as absent. Raises
    UnbalancedComponent when any conducting component carries net source and
    SingularSystem when the linear solve misses the residual target
    ||L P - S||_inf <= tol * max(1, ||S||_inf).
    """
    C = np.asarray(C, dtype=float)
    if C.shape != (net.n_edges,):
        raise ValueError(f"C shape {C.shape} != ({net.n_edges},)")
    if np.any(C < 0) or not np.all(np.isfinite(C)):
        raise ValueError("conductivities must be finite and nonnegative")

    active = C > support_floor
    comps = support_components(net, active)
    S = net.sources
    s_scale = max(1.0, float(np.max(np.abs(S), initial=0.0)))

    for comp in comps:
        net_source = float(S[list(comp)].sum())
        if abs(net_source) > 1e-9 * s_scale:
            ids = tuple(net.vertex_ids[i] for i in comp)
            raise UnbalancedComponent(
                f"component {ids} has net source {net_source:.3e}"
            )

    P = np.zeros(net.n_vertices)
    edge_comp_w = C[active] / net.lengths[active]
    active_rows = net.edge_rows[active]
    for comp in comps:
        comp_idx = np.asarray(comp, dtype=np.intp)
        local = -np.ones(net.n_vertices, dtype=np.intp)
        local[comp_idx] = np.arange(len(comp))
        mask = local[active_rows[:, 0]] >= 0
        rows = local[active_rows[mask]]
        P[comp_idx] = _solve_component(rows, edge_comp_w[mask], S[comp_idx], tol)

    resid = kirchhoff_residual(net, np.where(active, C, 0.0), P)
    if resid > tol:
        raise SingularSystem(f"Kirchhoff residual {resid:.3e} above tol {tol:.3e}")
    return P


def fluxes_from_pressures(net: Network, C: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Edge fluxes Q_e = C_e (P_u - P_v) / L_e in the canonical orientation."""
    iu, iv = net.edge_rows[:, 0], net.edge_rows[:, 1]
    return np.asarray(C) * (P[iu] - P[iv]) / net.lengths


def kirchhoff_residual(net: Network, C: np.ndarray, P: np.ndarray) -> float:
    """Relative conservation defect ||B Q - S||_inf / max(1, ||S||_inf)."""
    Q = fluxes_from_pressures(net, C, P)
    iu, iv = net.edge_rows[:, 0], net.edge_rows[:, 1]
    out = np.bincount(iu, weights=Q, minlength=net.n_vertices)
    out -= np.bincount(iv, weights=Q, minlength=net.n_vertices)
    defect = float(np.max(np.abs(out - net.sources), initial=0.0))
    return defect / max(1.0, float(np.max(np.abs(net.sources), initial=0.0)))


def pressures_from_tree_flux(
    net: Network,
    Q: np.ndarray,
    gamma: float,
    nu: float = 1.0,
    tol: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Recover (C, P) realizing a loop-free mass-conserving flux.

    The flux support must be a forest (LoopyFlux otherwise). Conductivities
    take the energy-optimal value C = (Q^2 / nu)^(1/(gamma+1)) on carrying
    edges and 0 elsewhere; pressures propagate from an arbitrary root by
    P_v = P_u - Q L / C across carrying edges and unchanged across dead ones,
    then get the zero-mean gauge per connected component. The output satisfies
    the flux law exactly: dead edges carry zero flux for any pressure drop.
    """
    Q = np.asarray(Q, dtype=float)
    loops = detect_flux_loops(net, Q, tol)
    if loops:
        raise LoopyFlux(f"flux carries {len(loops)} loop(s); support must be a forest")

    thresh = flux_tolerance(Q, tol)
    carrying = np.abs(Q) > thresh
    C = np.zeros_like(Q)
    C[carrying] = (Q[carrying] ** 2 / nu) ** (1.0 / (gamma + 1.0))

    # Pressure drops are pinned only across carrying edges. Solve relative
    # pressures inside each carrying-forest component first; dead edges carry
    # zero flux at any pressure difference, so they only transfer an offset
    # when they join a component whose level is still free.
    P = np.zeros(net.n_vertices)
    adj_carry: dict[int, list[int]] = {}
    for e in np.flatnonzero(carrying):
        iu, iv = (int(x) for x in net.edge_rows[int(e)])
        adj_carry.setdefault(iu, []).append(int(e))
        adj_carry.setdefault(iv, []).append(int(e))

    comps = support_components(net, carrying)
    comp_of = np.empty(net.n_vertices, dtype=np.intp)
    for k, comp in enumerate(comps):
        comp_of[list(comp)] = k
        frontier = [comp[0]]
        seen = {comp[0]}
        while frontier:
            x = frontier.pop()
            for e in adj_carry.get(x, ()):
                iu, iv = (int(i) for i in net.edge_rows[e])
                y = iv if x == iu else iu
                if y in seen:
                    continue
                drop = Q[e] * net.lengths[e] / C[e]
                P[y] = P[x] - drop if x == iu else P[x] + drop
                seen.add(y)
                frontier.append(y)

    # Join carrying components across dead edges by shifting whole levels.
    offset = np.zeros(len(comps))
    fixed = np.zeros(len(comps), dtype=bool)
    for e in np.flatnonzero(~carrying):
        iu, iv = (int(x) for x in net.edge_rows[int(e)])
        ka, kb = int(comp_of[iu]), int(comp_of[iv])
        if ka == kb:
            continue
        if not fixed[ka] and not fixed[kb]:
            fixed[ka] = True
        if fixed[ka] and not fixed[kb]:
            offset[kb] = offset[ka] + P[iu] - P[iv]
            fixed[kb] = True
        elif fixed[kb] and not fixed[ka]:
            offset[ka] = offset[kb] + P[iv] - P[iu]
            fixed[ka] = True
    P += offset[comp_of]

    for comp in support_components(net, np.ones(net.n_edges, dtype=bool)):
        idx = np.asarray(comp, dtype=np.intp)
        P[idx] -= P[idx].mean()
    return C, P
