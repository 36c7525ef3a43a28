"""Conductivity adaptation dynamics on networks.

Each edge adjusts its conductivity to the flux it carries,

    dC_e/dt = (Q_e^2 / C_e^2 - nu C_e^(gamma-1)) C_e L_e,

with Q resolved through the Kirchhoff law at every instant. The dynamics is
the constrained gradient flow of

    E[C] = sum_e (Q_e[C]^2 / C_e + (nu/gamma) C_e^gamma) L_e,

so the energy is non-increasing along exact trajectories; the integrator
enforces a discrete version of that and halves its step when violated.
For gamma < 1 the metabolic term is concave and trajectories prune edges
toward trees; gamma >= 1 keeps loops alive.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InfiniteEnergy, NoConvergence, NonmonotoneEnergy, UnbalancedComponent
from .graph import EdgeState, Network, flux_tolerance
from .kirchhoff import fluxes_from_pressures, solve_kirchhoff
from .tabular import write_csv

__all__ = [
    "AdaptationParams",
    "AdaptationRun",
    "energy_discrete",
    "adaptation_rhs",
    "step_adaptation",
    "simulate_adaptation",
    "write_trajectory_csv",
]

_PRUNE = 1e-12  # conductivities below this leave the Kirchhoff support


@dataclass(frozen=True)
class AdaptationParams:
    """Integration controls for the adaptation flow."""

    gamma: float
    nu: float = 1.0
    dt: float = 1e-2
    t_end: float = 10.0
    steady_tol: float = 1e-8
    clamp_floor: float = 0.0
    method: str = "euler"

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be positive")
        if self.method not in ("euler", "rk4"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class AdaptationRun:
    """Recorded trajectory of one adaptation simulation."""

    times: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    energy: np.ndarray
    converged: bool
    final_dt: float
    n_halvings: int

    @property
    def final(self) -> EdgeState:
        return EdgeState(C=self.C[-1], Q=self.Q[-1])


def energy_discrete(
    net: Network, C: np.ndarray, Q: np.ndarray, gamma: float, nu: float = 1.0
) -> float:
    """Transport energy sum_e (Q^2/C + (nu/gamma) C^gamma) L.

    A dead edge forced to carry flux has infinite kinetic cost; that is an
    error state (InfiniteEnergy), not a value, since no admissible dynamics
    reaches it.
    """
    C = np.asarray(C, dtype=float)
    Q = np.asarray(Q, dtype=float)
    dead = C <= 0.0
    if np.any(dead & (np.abs(Q) > flux_tolerance(Q))):
        raise InfiniteEnergy("nonzero flux through a zero-conductivity edge")
    kinetic = np.zeros_like(C)
    alive = ~dead
    kinetic[alive] = Q[alive] ** 2 / C[alive]
    metabolic = np.where(dead, 0.0, (nu / gamma) * C ** gamma)
    return float(np.sum((kinetic + metabolic) * net.lengths))


def adaptation_rhs(net: Network, C: np.ndarray, Q: np.ndarray, gamma: float, nu: float) -> np.ndarray:
    """Growth rate (Q^2/C - nu C^gamma) L, zero on dead edges."""
    C = np.asarray(C, dtype=float)
    out = np.zeros_like(C)
    alive = C > 0.0
    Ca = C[alive]
    out[alive] = (Q[alive] ** 2 / Ca - nu * Ca ** gamma) * net.lengths[alive]
    return out


def _resolve(net: Network, C: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    P = solve_kirchhoff(net, C, tol=tol)
    return fluxes_from_pressures(net, C, P), P


def _prune(C: np.ndarray, floor: float) -> np.ndarray:
    C = np.maximum(C, floor)
    C[C < _PRUNE] = 0.0
    return C


def step_adaptation(
    net: Network,
    C: np.ndarray,
    params: AdaptationParams,
    dt: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance one step; returns (C_next, Q, P) with Q, P evaluated at C.

    Forward Euler by default; rk4 re-resolves the fluxes at each stage.
    Conductivities are clamped at the floor and pruned from the support
    below 1e-12 so extinct edges cannot resurrect.
    """
    dt = params.dt if dt is None else float(dt)
    C = _prune(np.array(C, dtype=float), params.clamp_floor)
    Q, P = _resolve(net, C)

    if params.method == "euler":
        C_next = C + dt * adaptation_rhs(net, C, Q, params.gamma, params.nu)
    else:
        def f(state: np.ndarray) -> np.ndarray:
            state = _prune(np.array(state), params.clamp_floor)
            q, _ = _resolve(net, state)
            return adaptation_rhs(net, state, q, params.gamma, params.nu)

        k1 = adaptation_rhs(net, C, Q, params.gamma, params.nu)
        k2 = f(C + 0.5 * dt * k1)
        k3 = f(C + 0.5 * dt * k2)
        k4 = f(C + dt * k3)
        C_next = C + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    return _prune(C_next, params.clamp_floor), Q, P


def simulate_adaptation(net: Network, C0: np.ndarray, params: AdaptationParams) -> AdaptationRun:
    """Integrate the adaptation flow to t_end or steady state.

    The discrete energy must not grow by more than 10 dt^2 |E| across a step;
    a violating step is discarded, a NonmonotoneEnergy warning is issued, and
    dt is halved before retrying. Persistent failure (dt shrunk by 2^40)
    raises NoConvergence. Steadiness means the max relative conductivity
    velocity drops below steady_tol.
    """
    C = _prune(np.array(C0, dtype=float), params.clamp_floor)
    if C.shape != (net.n_edges,):
        raise ValueError(f"C0 shape {C.shape} != ({net.n_edges},)")
    dt = params.dt
    dt_min = params.dt * 2.0 ** -40
    t = 0.0

    times = [0.0]
    Cs = [C.copy()]
    Q, P = _resolve(net, C)
    Qs, Ps = [Q], [P]
    energies = [energy_discrete(net, C, Q, params.gamma, params.nu)]
    n_halvings = 0
    converged = False

    while t < params.t_end - 1e-12 * params.t_end:
        dt_step = min(dt, params.t_end - t)
        try:
            C_next, Q, P = step_adaptation(net, C, params, dt=dt_step)
            Q_next, P_next = _resolve(net, C_next)
            E_next = energy_discrete(net, C_next, Q_next, params.gamma, params.nu)
        except (UnbalancedComponent, InfiniteEnergy) as exc:
            # the trial step extinguished edges the sources still need; treat
            # it like any other rejected step rather than aborting the run
            warnings.warn(
                f"step at t={t:.6g} broke the conducting support ({exc}); halving dt",
                NonmonotoneEnergy,
            )
            dt *= 0.5
            n_halvings += 1
            if dt < dt_min:
                raise NoConvergence("dt collapsed while enforcing energy decrease") from exc
            continue
        E_prev = energies[-1]
        if E_next > E_prev + 10.0 * dt_step ** 2 * abs(E_prev):
            warnings.warn(
                f"energy rose {E_prev:.6g} -> {E_next:.6g} at t={t:.6g}; halving dt",
                NonmonotoneEnergy,
            )
            dt *= 0.5
            n_halvings += 1
            if dt < dt_min:
                raise NoConvergence("dt collapsed while enforcing energy decrease")
            continue

        rel_speed = float(np.max(np.abs(C_next - C) / dt_step)) / max(
            1.0, float(np.max(np.abs(C)))
        )
        t += dt_step
        C = C_next
        times.append(t)
        Cs.append(C.copy())
        Qs.append(Q_next)
        Ps.append(P_next)
        energies.append(E_next)
        if rel_speed <= params.steady_tol:
            converged = True
            break

    return AdaptationRun(
        times=np.asarray(times),
        C=np.asarray(Cs),
        Q=np.asarray(Qs),
        P=np.asarray(Ps),
        energy=np.asarray(energies),
        converged=converged,
        final_dt=dt,
        n_halvings=n_halvings,
    )


def write_trajectory_csv(net: Network, run: AdaptationRun, path) -> None:
    """Trajectory table: t, energy, then C and Q per edge named "u-v"."""
    names = [f"{u}-{v}" for u, v in net.edges]
    header = ["t", "energy"] + [f"C_{s}" for s in names] + [f"Q_{s}" for s in names]
    rows = (
        [float(run.times[k]), float(run.energy[k])]
        + [float(x) for x in run.C[k]]
        + [float(x) for x in run.Q[k]]
        for k in range(len(run.times))
    )
    write_csv(path, header, rows)
