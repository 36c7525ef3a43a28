"""Weighted transport networks: construction, validation, cycle structure.

A network is a finite undirected graph with vertex positions, strictly
positive edge lengths, and per-vertex source strengths S (positive injects
mass, negative withdraws). Edges are stored with endpoints ordered by vertex
id, and every flux array in the toolkit follows the same sign convention: a
positive entry on edge (u, v) with u < v means flow from u toward v.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError

__all__ = [
    "Network",
    "EdgeState",
    "ValidationReport",
    "CycleBasis",
    "validate_network",
    "cycle_basis",
    "detect_flux_loops",
    "flux_tolerance",
    "random_connected_network",
    "random_two_route_network",
]


@dataclass(frozen=True)
class Network:
    """Immutable graph with geometry and sources.

    Attributes
    ----------
    vertex_ids : tuple of int
        External vertex identifiers, in storage order.
    positions : ndarray, shape (n, d)
        Vertex coordinates.
    edges : tuple of (int, int)
        Canonical endpoint pairs (u, v) with u < v, given as vertex ids.
    lengths : ndarray, shape (m,)
        Edge lengths.
    sources : ndarray, shape (n,)
        Source strength per vertex, in storage order.
    """

    vertex_ids: tuple[int, ...]
    positions: np.ndarray
    edges: tuple[tuple[int, int], ...]
    lengths: np.ndarray
    sources: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def index_of(self) -> dict[int, int]:
        """Map from external vertex id to storage row."""
        return {vid: k for k, vid in enumerate(self.vertex_ids)}

    @cached_property
    def edge_rows(self) -> np.ndarray:
        """(m, 2) array of storage-row endpoint indices, lower id first."""
        idx = self.index_of
        return np.array([(idx[u], idx[v]) for u, v in self.edges], dtype=np.intp).reshape(-1, 2)

    def incidence_matrix(self) -> np.ndarray:
        """Signed vertex-edge incidence B with B[u] = +1, B[v] = -1 per edge.

        With the canonical flux convention, B @ Q is the net outflow per
        vertex, so mass conservation reads B @ Q = S.
        """
        B = np.zeros((self.n_vertices, self.n_edges))
        for e, (iu, iv) in enumerate(self.edge_rows):
            B[iu, e] = 1.0
            B[iv, e] = -1.0
        return B

    def with_sources(self, sources: Mapping[int, float] | np.ndarray) -> "Network":
        """Copy of the network with replaced source strengths."""
        if isinstance(sources, Mapping):
            S = np.zeros(self.n_vertices)
            for vid, val in sources.items():
                S[self.index_of[int(vid)]] = float(val)
        else:
            S = np.asarray(sources, dtype=float)
            if S.shape != (self.n_vertices,):
                raise ConfigError(f"sources shape {S.shape} != ({self.n_vertices},)")
        return replace(self, sources=S)

    @classmethod
    def build(
        cls,
        vertices: Sequence[tuple[int, Sequence[float]]],
        edges: Iterable[Sequence[float] | tuple],
        sources: Mapping[int, float] | None = None,
    ) -> "Network":
        """Assemble a network from (id, position) pairs and edge tuples.

        Edge tuples are (u, v) or (u, v, length); omitted lengths default to
        the Euclidean distance between the endpoints. Self-loops and unknown
        vertex ids are structural errors and raise ConfigError; softer issues
        (duplicates, imbalance, disconnection) are left to validate_network.
        """
        ids = tuple(int(v) for v, _ in vertices)
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate vertex ids")
        pos = np.asarray([p for _, p in vertices], dtype=float)
        if pos.ndim != 2:
            raise ConfigError("vertex positions must share one dimension")
        idx = {vid: k for k, vid in enumerate(ids)}

        pairs: list[tuple[int, int]] = []
        lens: list[float] = []
        for spec in edges:
            u, v = int(spec[0]), int(spec[1])
            if u == v:
                raise ConfigError(f"self-loop at vertex {u}")
            if u not in idx or v not in idx:
                raise ConfigError(f"edge ({u}, {v}) references unknown vertex")
            if u > v:
                u, v = v, u
            if len(spec) > 2 and spec[2] is not None:
                ell = float(spec[2])
            else:
                ell = float(np.linalg.norm(pos[idx[u]] - pos[idx[v]]))
            pairs.append((u, v))
            lens.append(ell)

        S = np.zeros(len(ids))
        for vid, val in (sources or {}).items():
            vid = int(vid)
            if vid not in idx:
                raise ConfigError(f"source at unknown vertex {vid}")
            S[idx[vid]] = float(val)

        return cls(ids, pos, tuple(pairs), np.asarray(lens), S)

    @classmethod
    def from_json(cls, source: str | dict) -> "Network":
        """Load a network from a JSON document or path.

        Schema: {"vertices": [{"id", "pos"}], "edges": [{"u", "v", "length"?}],
        "sources": {id: strength}}.
        """
        if isinstance(source, dict):
            doc = source
        else:
            with open(source) as fh:
                doc = json.load(fh)
        try:
            vertices = [(v["id"], v["pos"]) for v in doc["vertices"]]
            edges = [(e["u"], e["v"], e.get("length")) for e in doc["edges"]]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed network document: {exc}") from exc
        return cls.build(vertices, edges, doc.get("sources", {}))

    def to_json(self) -> dict:
        return {
            "vertices": [
                {"id": vid, "pos": [float(x) for x in self.positions[k]]}
                for k, vid in enumerate(self.vertex_ids)
            ],
            "edges": [
                {"u": u, "v": v, "length": float(self.lengths[e])}
                for e, (u, v) in enumerate(self.edges)
            ],
            "sources": {
                str(vid): float(self.sources[k])
                for k, vid in enumerate(self.vertex_ids)
                if self.sources[k] != 0.0
            },
        }


@dataclass(frozen=True)
class EdgeState:
    """Per-edge conductivity and flux snapshot."""

    C: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        if np.shape(self.C) != np.shape(self.Q):
            raise ConfigError("C and Q must have matching shapes")


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: tuple[str, ...]


@dataclass(frozen=True)
class CycleBasis:
    """Fundamental cycles of a network relative to a BFS forest.

    vectors[k] is a signed circulation over edges (+1 along the canonical
    edge direction); chords[k] is the non-tree edge that closes cycle k.
    Every vector satisfies B @ z = 0.
    """

    vectors: np.ndarray
    chords: tuple[int, ...]

    @property
    def n_cycles(self) -> int:
        return len(self.chords)


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def flux_tolerance(Q: np.ndarray, tol: float | None = None) -> float:
    """Default threshold below which a flux entry counts as zero."""
    if tol is not None:
        return float(tol)
    scale = float(np.max(np.abs(Q))) if np.size(Q) else 0.0
    return 1e-9 * max(1.0, scale)


def validate_network(net: Network) -> ValidationReport:
    """Check structural invariants and report every violation found.

    Flags: disconnection, duplicate edges, nonpositive or nonfinite lengths,
    source imbalance, and nonfinite coordinates or sources. Returns a report
    rather than raising so callers can surface all problems at once.
    """
    issues: list[str] = []

    if not np.all(np.isfinite(net.positions)):
        issues.append("nonfinite vertex coordinates")
    if not np.all(np.isfinite(net.sources)):
        issues.append("nonfinite source strengths")

    bad_len = np.flatnonzero(~(np.asarray(net.lengths) > 0) | ~np.isfinite(net.lengths))
    for e in bad_len:
        issues.append(f"edge {net.edges[e]} has nonpositive length {net.lengths[e]}")

    seen: dict[tuple[int, int], int] = {}
    for e, pair in enumerate(net.edges):
        if pair in seen:
            issues.append(f"duplicate edge {pair}")
        else:
            seen[pair] = e

    uf = _UnionFind(net.n_vertices)
    for iu, iv in net.edge_rows:
        uf.union(int(iu), int(iv))
    roots = {uf.find(i) for i in range(net.n_vertices)}
    if len(roots) > 1:
        issues.append(f"network is disconnected ({len(roots)} components)")

    imbalance = float(net.sources.sum())
    if abs(imbalance) > 1e-9 * max(1.0, float(np.max(np.abs(net.sources), initial=0.0))):
        issues.append(f"sources sum to {imbalance:.3e}, not zero")

    return ValidationReport(ok=not issues, issues=tuple(issues))


def _forest_and_chords(net: Network, edge_subset: np.ndarray) -> tuple[list[int], list[int]]:
    """Split a subset of edges into union-find forest edges and chords."""
    uf = _UnionFind(net.n_vertices)
    tree: list[int] = []
    chords: list[int] = []
    for e in np.flatnonzero(edge_subset):
        iu, iv = net.edge_rows[int(e)]
        if uf.union(int(iu), int(iv)):
            tree.append(int(e))
        else:
            chords.append(int(e))
    return tree, chords


def _tree_path_vector(net: Network, tree: Sequence[int], start: int, goal: int) -> np.ndarray:
    """Signed edge-indicator of the forest path start -> goal (storage rows)."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for e in tree:
        iu, iv = (int(x) for x in net.edge_rows[e])
        adj.setdefault(iu, []).append((iv, e))
        adj.setdefault(iv, []).append((iu, e))
    prev: dict[int, tuple[int, int]] = {start: (-1, -1)}
    queue = [start]
    while queue:
        node = queue.pop(0)
        if node == goal:
            break
        for nxt, e in adj.get(node, ()):
            if nxt not in prev:
                prev[nxt] = (node, e)
                queue.append(nxt)
    if goal not in prev:
        raise ValueError("no forest path between requested vertices")
    z = np.zeros(net.n_edges)
    node = goal
    while node != start:
        parent, e = prev[node]
        iu, _ = net.edge_rows[e]
        # traversing parent -> node; canonical direction runs iu -> iv
        z[e] += 1.0 if parent == iu else -1.0
        node = parent
    return z


def cycle_basis(net: Network) -> CycleBasis:
    """Fundamental cycle basis from a spanning forest.

    Each non-tree edge e = (u, v) closes one cycle: +1 on e and the signed
    forest path v -> u. The vectors span the kernel of the incidence matrix,
    one per independent loop (m - n + #components in total).
    """
    all_edges = np.ones(net.n_edges, dtype=bool)
    tree, chords = _forest_and_chords(net, all_edges)
    vectors = []
    for e in chords:
        iu, iv = (int(x) for x in net.edge_rows[e])
        z = _tree_path_vector(net, tree, iv, iu)
        z[e] += 1.0
        vectors.append(z)
    mat = np.array(vectors) if vectors else np.zeros((0, net.n_edges))
    return CycleBasis(vectors=mat, chords=tuple(chords))


def detect_flux_loops(
    net: Network,
    flux: np.ndarray | EdgeState,
    tol: float | None = None,
) -> tuple[tuple[int, ...], ...]:
    """Cycles carried by the above-threshold flux pattern.

    Edges with |Q| > tol (default 1e-9 scaled by max |Q|) form a subgraph;
    returns one edge-index tuple per independent cycle of that subgraph,
    chord first. An empty result certifies the flux support is a forest.
    """
    Q = flux.Q if isinstance(flux, EdgeState) else np.asarray(flux, dtype=float)
    active = np.abs(Q) > flux_tolerance(Q, tol)
    tree, chords = _forest_and_chords(net, active)
    loops = []
    for e in chords:
        iu, iv = (int(x) for x in net.edge_rows[e])
        z = _tree_path_vector(net, tree, iv, iu)
        members = (e,) + tuple(int(k) for k in np.flatnonzero(z))
        loops.append(members)
    return tuple(loops)


def random_connected_network(
    rng: np.random.Generator,
    n_vertices: int | None = None,
    n_range: tuple[int, int] = (4, 7),
    extra_edge_prob: float = 0.4,
    dim: int = 2,
) -> Network:
    """Sample a connected network with random lengths and balanced sources.

    A random recursive tree guarantees connectivity; each remaining vertex
    pair is added independently with probability extra_edge_prob. Lengths are
    uniform in [0.5, 2.0] and sources are centered Gaussians.
    """
    n = int(n_vertices) if n_vertices else int(rng.integers(n_range[0], n_range[1] + 1))
    pos = rng.uniform(0.0, 1.0, size=(n, dim))
    pairs = {(int(rng.integers(0, i)), i) for i in range(1, n)}
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in pairs and rng.uniform() < extra_edge_prob:
                pairs.add((i, j))
    edges = sorted(pairs)
    lengths = rng.uniform(0.5, 2.0, size=len(edges))
    S = rng.normal(0.0, 1.0, size=n)
    S -= S.mean()
    S[-1] -= S.sum()  # exact balance despite rounding
    vertices = [(i, pos[i]) for i in range(n)]
    net = Network.build(vertices, [(u, v, l) for (u, v), l in zip(edges, lengths)], {})
    return net.with_sources(S)


def random_two_route_network(
    rng: np.random.Generator,
) -> tuple[Network, int, int]:
    """Two vertex-disjoint routes between a unit source and a unit sink.

    Each route is a path with 1 to 3 intermediate vertices and random edge
    lengths; returns (network, source id, sink id). Route length sums are
    resampled until they differ by a safe margin so the shorter route is
    unambiguous.
    """
    source, sink = 0, 1
    while True:
        n_a = int(rng.integers(1, 4))
        n_b = int(rng.integers(1, 4))
        len_a = rng.uniform(0.3, 1.5, size=n_a + 1)
        len_b = rng.uniform(0.3, 1.5, size=n_b + 1)
        if abs(len_a.sum() - len_b.sum()) > 0.05:
            break
    ids_a = list(range(2, 2 + n_a))
    ids_b = list(range(2 + n_a, 2 + n_a + n_b))
    n = 2 + n_a + n_b
    vertices = [(i, (float(i), 0.0)) for i in range(n)]
    edges = []
    chain_a = [source] + ids_a + [sink]
    chain_b = [source] + ids_b + [sink]
    for k in range(len(chain_a) - 1):
        edges.append((chain_a[k], chain_a[k + 1], float(len_a[k])))
    for k in range(len(chain_b) - 1):
        edges.append((chain_b[k], chain_b[k + 1], float(len_b[k])))
    net = Network.build(vertices, edges, {source: 1.0, sink: -1.0})
    return net, source, sink
