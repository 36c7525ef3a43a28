"""Scenario configuration: one JSON document describes one reproducible run.

A scenario names a kind (which module owns it), a seed, a parameter block,
and the inputs the kind needs (network, grid, source). run_scenario
dispatches, writes the numeric artifacts as 17-digit CSV plus canonical
JSON, and finishes with a manifest holding content hashes of the scenario,
any referenced input files, and every deterministic artifact, so identical
scenario + seed reruns are byte-identical and verifiable. Figures are
rendered alongside unless disabled; they are advisory and excluded from the
hashed set.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import adaptation, figures, fluxopt, meso, mms
from .errors import ConfigError
from .graph import Network, random_connected_network
from .grids import Grid
from .tabular import write_csv

__all__ = [
    "KINDS",
    "Scenario",
    "RunReport",
    "bundled_scenarios",
    "load_scenario",
    "build_grid",
    "build_source",
    "run_scenario",
]

KINDS = ("discrete", "flux_min", "meso1d", "meso2d", "particles", "mms", "beckmann")
_TOP_KEYS = {"kind", "name", "seed", "params", "net", "net_path", "grid", "source"}


@dataclass(frozen=True)
class Scenario:
    kind: str
    name: str
    seed: int
    params: dict
    net: dict | None
    grid: dict | None
    source: dict | None
    base_dir: Path

    def document(self) -> dict:
        doc = {"kind": self.kind, "name": self.name, "seed": self.seed, "params": self.params}
        for key, val in (("net", self.net), ("grid", self.grid), ("source", self.source)):
            if val is not None:
                doc[key] = val
        return doc


@dataclass(frozen=True)
class RunReport:
    outdir: Path
    outputs: tuple[str, ...]
    figures: tuple[str, ...]
    summary: dict


def bundled_scenarios() -> tuple[str, ...]:
    """Names of the scenario files shipped inside the package."""
    base = resources.files("netmorph") / "scenarios"
    return tuple(sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json")))


def _bundled_text(name: str) -> str | None:
    base = resources.files("netmorph") / "scenarios"
    candidate = base / (name if name.endswith(".json") else name + ".json")
    return candidate.read_text() if candidate.is_file() else None


def load_scenario(ref: str | Path | dict) -> Scenario:
    """Load from a path, a bundled scenario name, or an inline dict."""
    base_dir = Path(".")
    if isinstance(ref, dict):
        doc = ref
        name = doc.get("name", "inline")
    else:
        path = Path(ref)
        if path.is_file():
            text = path.read_text()
            base_dir = path.parent
            name = path.stem
        else:
            text = _bundled_text(str(ref))
            if text is None:
                raise ConfigError(f"scenario {ref!r}: not a file and not a bundled name")
            name = Path(str(ref)).stem
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario {ref!r}: malformed JSON ({exc})") from exc

    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"scenario kind must be one of {KINDS}, got {kind!r}")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object")
    net = doc.get("net")
    if net is None and "net_path" in doc:
        net_path = base_dir / doc["net_path"]
        if not net_path.is_file():
            raise ConfigError(f"net_path {doc['net_path']!r} does not exist")
        net = json.loads(net_path.read_text())
    return Scenario(
        kind=kind,
        name=str(doc.get("name", name)),
        seed=int(doc.get("seed", 0)),
        params=params,
        net=net,
        grid=doc.get("grid"),
        source=doc.get("source"),
        base_dir=base_dir,
    )


def build_grid(spec: dict | None) -> Grid:
    if not isinstance(spec, dict):
        raise ConfigError("this scenario kind needs a grid block")
    try:
        if "n" in spec:
            return Grid.line(int(spec["n"]), float(spec.get("lo", 0.0)), float(spec.get("hi", 1.0)))
        lo = spec.get("lo", [0.0, 0.0])
        hi = spec.get("hi", [1.0, 1.0])
        return Grid.box(
            int(spec["nx"]),
            int(spec["ny"]),
            (float(lo[0]), float(lo[1])),
            (float(hi[0]), float(hi[1])),
            n_dirs=int(spec.get("n_dirs", 16)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid block: {exc}") from exc


def build_source(grid: Grid, spec: dict | None) -> np.ndarray:
    """Assemble a balanced cell source field from its declarative spec.

    Types: "cells" (explicit array), "piecewise" (1D left/right split),
    "endpoints" (1D unit-flux injection in the wall cells), "bumps"
    (normalized Gaussians with signed strengths), "pair" (sugar for one
    +strength and one -strength bump). Bump fields are mean-corrected so the
    no-flux compatibility condition holds exactly.
    """
    if not isinstance(spec, dict):
        raise ConfigError("this scenario kind needs a source block")
    kind = spec.get("type")
    if kind == "cells":
        S = np.asarray(spec["values"], dtype=float)
        if S.size != grid.n_cells:
            raise ConfigError(f"source has {S.size} values for {grid.n_cells} cells")
        return S.reshape(grid.shape)
    if kind == "piecewise":
        if grid.dim != 1:
            raise ConfigError("piecewise sources are one-dimensional")
        split = float(spec.get("split", 0.5 * (grid.lo[0] + grid.hi[0])))
        x = grid.axis_centers(0)
        return np.where(x < split, float(spec["left"]), float(spec["right"]))
    if kind == "endpoints":
        if grid.dim != 1:
            raise ConfigError("endpoint sources are one-dimensional")
        strength = float(spec.get("strength", 1.0))
        S = np.zeros(grid.shape)
        S[0] = strength / grid.h[0]
        S[-1] = -strength / grid.h[0]
        return S
    if kind in ("bumps", "pair"):
        if kind == "pair":
            radius = float(spec.get("radius", 0.05))
            strength = float(spec.get("strength", 1.0))
            bumps = [
                {"center": spec["source"], "strength": strength, "radius": radius},
                {"center": spec["sink"], "strength": -strength, "radius": radius},
            ]
        else:
            bumps = spec["bumps"]
        centers = grid.centers()
        S = np.zeros(grid.shape)
        for bump in bumps:
            c = np.asarray(bump["center"], dtype=float)
            rad = float(bump.get("radius", 0.05))
            d2 = ((centers - c) ** 2).sum(axis=-1)
            g = np.exp(-d2 / (2.0 * rad ** 2))
            total = g.sum() * grid.vol
            if total <= 0:
                raise ConfigError("bump lies entirely outside the grid")
            S += float(bump["strength"]) * g / total
        if spec.get("balance", True):
            S -= S.mean()
        return S
    raise ConfigError(f"unknown source type {kind!r}")


def _build_network(spec: dict | None, rng: np.random.Generator) -> Network:
    if not isinstance(spec, dict):
        raise ConfigError("this scenario kind needs a net block (or net_path)")
    if "random" in spec:
        opts = spec["random"]
        return random_connected_network(
            rng,
            n_vertices=opts.get("n"),
            extra_edge_prob=float(opts.get("extra_edge_prob", 0.4)),
        )
    return Network.from_json(spec)


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_json_bytes(obj))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_scenario(sc: Scenario, outdir: str | Path, render_figures: bool = True) -> RunReport:
    """Dispatch a scenario and write its artifacts plus the manifest."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    runner = _RUNNERS.get(sc.kind)
    if runner is None:
        raise ConfigError(f"unknown scenario kind {sc.kind!r}")
    outputs, figs, summary = runner(sc, outdir, render_figures)
    _write_json(outdir / "summary.json", summary)
    _write_json(outdir / "scenario.json", sc.document())
    outputs = list(outputs) + ["summary.json", "scenario.json"]

    manifest = {
        "tool": "netmorph",
        "version": _version(),
        "scenario": sc.document(),
        "scenario_sha256": hashlib.sha256(_json_bytes(sc.document())).hexdigest(),
        "outputs": {name: _sha256(outdir / name) for name in sorted(outputs)},
        "figures": sorted(figs),
    }
    _write_json(outdir / "manifest.json", manifest)
    return RunReport(
        outdir=outdir,
        outputs=tuple(sorted(outputs) + ["manifest.json"]),
        figures=tuple(sorted(figs)),
        summary=summary,
    )


def _version() -> str:
    from . import __version__

    return __version__


def _run_discrete(sc: Scenario, outdir: Path, render: bool):
    rng = np.random.default_rng(sc.seed)
    net = _build_network(sc.net, rng)
    p = sc.params
    params = adaptation.AdaptationParams(
        gamma=float(p["gamma"]),
        nu=float(p.get("nu", 1.0)),
        dt=float(p.get("dt", 1e-2)),
        t_end=float(p.get("t_end", 10.0)),
        steady_tol=float(p.get("steady_tol", 1e-8)),
        clamp_floor=float(p.get("clamp_floor", 0.0)),
        method=str(p.get("method", "euler")),
    )
    C0 = np.asarray(p.get("C0", 1.0), dtype=float)
    if C0.ndim == 0:
        C0 = np.full(net.n_edges, float(C0))
    run = adaptation.simulate_adaptation(net, C0, params)
    adaptation.write_trajectory_csv(net, run, outdir / "trajectory.csv")
    final = run.final
    write_csv(
        outdir / "final.csv",
        ["u", "v", "length", "C", "Q"],
        (
            [u, v, float(net.lengths[e]), float(final.C[e]), float(final.Q[e])]
            for e, (u, v) in enumerate(net.edges)
        ),
    )
    alive = int((final.C > 1e-12).sum())
    summary = {
        "kind": sc.kind,
        "converged": bool(run.converged),
        "final_energy": float(run.energy[-1]),
        "n_steps": int(len(run.times) - 1),
        "n_halvings": int(run.n_halvings),
        "final_dt": float(run.final_dt),
        "alive_edges": alive,
    }
    figs = []
    if render:
        figures.plot_network(net, final.C, final.Q, outdir / "network.png")
        figures.plot_energy(run.times, run.energy, outdir / "energy.png")
        figs = ["network.png", "energy.png"]
    return ["trajectory.csv", "final.csv"], figs, summary


def _run_flux_min(sc: Scenario, outdir: Path, render: bool):
    rng = np.random.default_rng(sc.seed)
    net = _build_network(sc.net, rng)
    p = sc.params
    problem = fluxopt.FluxProblem(
        net=net,
        gamma=float(p["gamma"]),
        nu=float(p.get("nu", 1.0)),
        flux_energy_mode=str(p.get("flux_energy_mode", "gilbert")),
    )
    res = fluxopt.minimize_F(problem, method=str(p.get("method", "auto")), rng=rng)
    C_opt = fluxopt.optimal_C_given_Q(res.Q, problem.gamma, problem.nu)
    result = {
        "F": float(res.F),
        "Q": [float(q) for q in res.Q],
        "C": [float(c) for c in C_opt],
        "method": res.certificate.method,
        "optimality": res.certificate.optimality,
        "detail": res.certificate.detail,
        "loops": [list(map(int, loop)) for loop in res.loops],
    }
    _write_json(outdir / "result.json", result)
    write_csv(
        outdir / "edges.csv",
        ["u", "v", "length", "Q", "C"],
        (
            [u, v, float(net.lengths[e]), float(res.Q[e]), float(C_opt[e])]
            for e, (u, v) in enumerate(net.edges)
        ),
    )
    summary = {
        "kind": sc.kind,
        "F": float(res.F),
        "optimality": res.certificate.optimality,
        "n_loops": len(res.loops),
    }
    figs = []
    if render:
        figures.plot_network(net, C_opt, res.Q, outdir / "network.png")
        figs = ["network.png"]
    return ["result.json", "edges.csv"], figs, summary


def _run_meso1d(sc: Scenario, outdir: Path, render: bool):
    rng = np.random.default_rng(sc.seed)
    grid = build_grid(sc.grid)
    if grid.dim != 1:
        raise ConfigError("meso1d needs a 1D grid")
    S = build_source(grid, sc.source)
    p = sc.params
    gamma = float(p["gamma"])
    c0 = float(p.get("c0", 1.0))
    pred = meso.stationary_1d(grid, S, c0, gamma)
    base = float(p.get("C0", 0.5))
    amp = float(p.get("perturb_amp", 0.4))
    C0 = base * (1.0 + amp * rng.uniform(-1.0, 1.0, size=grid.shape))[..., None]
    run = meso.simulate_monokinetic(
        grid,
        C0,
        S,
        c0=c0,
        gamma=gamma,
        r=float(p.get("r", 1e-10)),
        dt=float(p.get("dt", 1e-2)),
        t_end=float(p.get("t_end", 40.0)),
        steady_tol=float(p.get("steady_tol", 0.0)),
    )
    C_final = run.C[-1][..., 0]
    mask_level = float(p.get("mask_level", 0.05))
    mask = np.abs(pred.B) > mask_level * max(np.max(np.abs(pred.B)), 1e-300)
    rel = np.abs(C_final - pred.C) / np.maximum(np.abs(pred.C), 1e-300)
    sup_err = float(rel[mask].max()) if np.any(mask) else float("nan")

    x = grid.axis_centers(0)
    write_csv(
        outdir / "profile.csv",
        ["x", "C", "C_stationary", "B", "stability"],
        (
            [float(x[i]), float(C_final[i]), float(pred.C[i]), float(pred.B[i]), float(pred.stability[i])]
            for i in range(grid.shape[0])
        ),
    )
    write_csv(
        outdir / "energy.csv",
        ["t", "energy"],
        ([float(t), float(e)] for t, e in zip(run.times, run.energy)),
    )
    summary = {
        "kind": sc.kind,
        "converged": bool(run.converged),
        "final_energy": float(run.energy[-1]),
        "masked_sup_rel_err": sup_err,
        "stability_max": float(pred.stability.max()),
    }
    figs = []
    if render:
        figures.plot_profile_1d(
            grid, {"C(final)": C_final, "C(stationary)": pred.C}, outdir / "profile.png"
        )
        figures.plot_energy(run.times, run.energy, outdir / "energy.png")
        figs = ["profile.png", "energy.png"]
    return ["profile.csv", "energy.csv"], figs, summary


def _run_meso2d(sc: Scenario, outdir: Path, render: bool):
    grid = build_grid(sc.grid)
    S = build_source(grid, sc.source)
    p = sc.params
    res = meso.stationary_gamma_gt1(
        grid,
        S,
        c0=float(p.get("c0", 1.0)),
        gamma=float(p["gamma"]),
        tol=float(p.get("tol", 1e-8)),
        max_iter=int(p.get("max_iter", 20000)),
    )
    p_cells = res.p if res.layout == "cell" else 0.5 * (res.p[:-1] + res.p[1:])
    meso.write_scalar_csv(grid, p_cells, outdir / "p.csv")
    meso.write_directional_csv(grid, res.C, outdir / "C.csv")
    summary = {
        "kind": sc.kind,
        "objective": float(res.objective[-1]),
        "grad_norm": float(res.grad_norm),
        "iterations": int(len(res.objective)),
        "layout": res.layout,
    }
    figs = []
    if render:
        _, w = grid.directions()
        total = np.einsum("...m,m->...", res.C, w)
        if grid.dim == 2:
            figures.plot_heatmap(grid, res.p, outdir / "p.png", title="pressure")
            figures.plot_heatmap(grid, total, outdir / "C.png", title="total conductivity")
            figs = ["p.png", "C.png"]
        else:
            figures.plot_profile_1d(grid, {"C": total}, outdir / "C.png")
            figs = ["C.png"]
    return ["p.csv", "C.csv"], figs, summary


def _segment_ensemble(p: dict) -> meso.ParticleEnsemble:
    seg = p.get("segment")
    if not isinstance(seg, dict):
        raise ConfigError("particles scenario needs params.segment {a, b, n}")
    a = np.asarray(seg["a"], dtype=float)
    b = np.asarray(seg["b"], dtype=float)
    n = int(seg.get("n", 200))
    ts = (np.arange(n) + 0.5) / n
    pos = a[None, :] + ts[:, None] * (b - a)[None, :]
    direction = (b - a) / np.linalg.norm(b - a)
    theta = np.tile(direction, (n, 1))
    C0 = np.full(n, float(seg.get("C0", 1.0)))
    weights = np.full(n, 1.0 / n)
    return meso.ParticleEnsemble(positions=pos, theta=theta, C=C0, weights=weights)


def _run_particles(sc: Scenario, outdir: Path, render: bool):
    grid = build_grid(sc.grid)
    if grid.dim != 2:
        raise ConfigError("particles scenarios run on 2D grids")
    S = build_source(grid, sc.source)
    p = sc.params
    ens = _segment_ensemble(p)
    gamma = float(p["gamma"])
    c0 = float(p.get("c0", 1.0))
    run = meso.simulate_particles(
        grid,
        ens,
        S,
        c0=c0,
        gamma=gamma,
        r=float(p.get("r", 1e-3)),
        dt=float(p.get("dt", 0.05)),
        t_end=float(p.get("t_end", 30.0)),
        steady_tol=float(p.get("steady_tol", 1e-7)),
    )
    fin = run.final
    n = fin.n_particles
    mid = slice(n // 3, 2 * n // 3)
    mean_mid = float(fin.C[mid].mean())
    target = c0 ** (2.0 / (1.0 + gamma))
    write_csv(
        outdir / "particles.csv",
        ["x", "y", "theta_x", "theta_y", "weight", "C"],
        (
            [
                float(fin.positions[i, 0]),
                float(fin.positions[i, 1]),
                float(fin.theta[i, 0]),
                float(fin.theta[i, 1]),
                float(fin.weights[i]),
                float(fin.C[i]),
            ]
            for i in range(n)
        ),
    )
    meso.write_scalar_csv(grid, run.p, outdir / "pressure.csv")
    summary = {
        "kind": sc.kind,
        "converged": bool(run.converged),
        "mean_C_mid": mean_mid,
        "target": target,
        "gap": abs(mean_mid - target),
    }
    figs = []
    if render:
        figures.plot_particles(grid, fin.positions, fin.theta, fin.C, outdir / "particles.png")
        figures.plot_heatmap(grid, run.p, outdir / "pressure.png", title="pressure")
        figs = ["particles.png", "pressure.png"]
    return ["particles.csv", "pressure.csv"], figs, summary


def _run_mms(sc: Scenario, outdir: Path, render: bool):
    grid = build_grid(sc.grid)
    S = build_source(grid, sc.source)
    p = sc.params
    params = mms.MmsParams(
        tau=float(p.get("tau", 0.5)),
        gamma=float(p["gamma"]),
        c0=float(p.get("c0", 1.0)),
        inner_tol=float(p.get("inner_tol", 1e-10)),
        max_alternations=int(p.get("max_alternations", 60)),
        r=float(p.get("r", 0.0)),
        eps_c=float(p.get("eps_c", 1e-12)),
    )
    C0 = np.full(grid.shape + (grid.n_dirs,), float(p.get("C0", 1.0)))
    traj = mms.mms_run(grid, C0, S, params, n_steps=int(p.get("n_steps", 50)))
    mms.write_mms_csv(traj, outdir / "steps.csv")
    _, w = grid.directions()
    C_total = np.einsum("...m,m->...", traj.C[-1], w)
    meso.write_scalar_csv(grid, C_total, outdir / "C_total.csv", name="C_total")
    outputs = ["steps.csv", "C_total.csv"]
    summary = {
        "kind": sc.kind,
        "final_energy": float(traj.energy[-1]),
        "tv_bound": float(traj.tv_bound),
        "max_tv_total": float((traj.tv_C + traj.tv_Q).max()),
        "dissipation_ok": True,
    }
    if grid.dim == 1:
        qbar = np.einsum("...m,m->...", traj.Q[-1], w)
        x = grid.axis_centers(0)
        write_csv(
            outdir / "qbar.csv",
            ["x", "qbar"],
            ([float(x[i]), float(qbar[i])] for i in range(grid.shape[0])),
        )
        outputs.append("qbar.csv")
        interior = qbar[1:-1]
        summary["qbar_interior_min"] = float(interior.min())
        summary["qbar_interior_max"] = float(interior.max())
    figs = []
    if render:
        steps = np.arange(len(traj.energy))
        figures.plot_energy(steps, traj.energy, outdir / "energy.png", ylabel="E")
        if grid.dim == 2:
            figures.plot_heatmap(grid, C_total, outdir / "C_total.png", title="total conductivity")
            figs = ["energy.png", "C_total.png"]
        else:
            figures.plot_profile_1d(grid, {"C_total": C_total}, outdir / "C_total.png")
            figs = ["energy.png", "C_total.png"]
    return outputs, figs, summary


def _run_beckmann(sc: Scenario, outdir: Path, render: bool):
    grid = build_grid(sc.grid)
    S = build_source(grid, sc.source)
    p = sc.params
    report, _, beck = mms.beckmann_check(
        grid,
        S,
        c0=float(p.get("c0", 1.0)),
        tau=float(p.get("tau", 0.5)),
        n_steps=int(p.get("n_steps", 150)),
        value_rtol=float(p.get("value_rtol", 0.02)),
    )
    meso.write_scalar_csv(grid, beck.C, outdir / "C_scalar.csv", name="C")
    centers = grid.centers()
    write_csv(
        outdir / "q.csv",
        ["x", "y", "q_x", "q_y"],
        (
            [
                float(centers[i, j, 0]),
                float(centers[i, j, 1]),
                float(beck.q[i, j, 0]),
                float(beck.q[i, j, 1]),
            ]
            for i in range(grid.shape[0])
            for j in range(grid.shape[1])
        ),
    )
    summary = {
        "kind": sc.kind,
        "value_directional": report.value_directional,
        "value_beckmann": report.value_beckmann,
        "rel_gap": report.rel_gap,
        "max_spread": report.max_spread,
        "spacing": report.spacing,
        "values_ok": report.values_ok,
        "spread_ok": report.spread_ok,
    }
    figs = []
    if render:
        figures.plot_heatmap(grid, beck.C, outdir / "C_scalar.png", title="scalar conductivity")
        figs = ["C_scalar.png"]
    return ["C_scalar.csv", "q.csv"], figs, summary


_RUNNERS = {
    "discrete": _run_discrete,
    "flux_min": _run_flux_min,
    "meso1d": _run_meso1d,
    "meso2d": _run_meso2d,
    "particles": _run_particles,
    "mms": _run_mms,
    "beckmann": _run_beckmann,
}
