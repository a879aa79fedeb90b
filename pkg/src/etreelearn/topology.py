"""Physical edge network: random and class-centered topologies, minimum-delay routing."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path as _csgraph_shortest_path

# Delays are snapped to multiples of 1/1024 ms. Sums of such values are exact in
# binary floating point, so path delays do not depend on summation order.
DELAY_QUANTUM = 1.0 / 1024.0
MIN_DELAY_MS = 1.0


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class TopologyGraph:
    """Undirected weighted graph; edge weight is the link transmission delay in ms."""

    node_count: int
    edges: tuple[tuple[int, int, float], ...]
    adjacency: tuple[dict[int, float], ...] = field(repr=False, compare=False)

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable[tuple[int, int, float]]) -> "TopologyGraph":
        if node_count < 1:
            raise TopologyError("node_count must be >= 1")
        adj: list[dict[int, float]] = [dict() for _ in range(node_count)]
        norm = []
        for u, v, w in edges:
            u, v, w = int(u), int(v), float(w)
            if u == v:
                raise TopologyError(f"self-loop on node {u}")
            if not (0 <= u < node_count and 0 <= v < node_count):
                raise TopologyError(f"edge ({u}, {v}) references a node outside 0..{node_count - 1}")
            if not (w >= 0 and math.isfinite(w)):
                raise TopologyError(f"edge ({u}, {v}) has invalid delay {w}")
            if v in adj[u]:
                raise TopologyError(f"duplicate edge ({u}, {v})")
            adj[u][v] = w
            adj[v][u] = w
            norm.append((min(u, v), max(u, v), w))
        norm.sort()
        return cls(node_count, tuple(norm), tuple(adj))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, node: int) -> list[int]:
        return sorted(self.adjacency[node])

    def link_delay(self, u: int, v: int) -> float:
        return self.adjacency[u][v]

    def is_connected(self) -> bool:
        return _component_count(self) == 1

    def to_sparse(self) -> csr_matrix:
        n = self.node_count
        if not self.edges:
            return csr_matrix((n, n))
        u, v, w = (np.array(col) for col in zip(*self.edges))
        rows = np.concatenate([u, v]).astype(int)
        cols = np.concatenate([v, u]).astype(int)
        # explicit zeros survive construction, so zero-delay links stay edges
        return csr_matrix((np.concatenate([w, w]), (rows, cols)), shape=(n, n))


def _component_count(g: TopologyGraph) -> int:
    n, _ = connected_components(g.to_sparse(), directed=False)
    return n


def uniform_bounds(mean: float, std: float) -> tuple[float, float]:
    """Support of the uniform distribution with the given mean and standard deviation."""
    half = std * math.sqrt(3.0)
    return mean - half, mean + half


def draw_delays(rng: np.random.Generator, size: int, mean: float, std: float) -> np.ndarray:
    lo, hi = uniform_bounds(mean, std)
    raw = rng.uniform(lo, hi, size=size) if std > 0 else np.full(size, float(mean))
    raw = np.maximum(raw, MIN_DELAY_MS)
    return np.round(raw / DELAY_QUANTUM) * DELAY_QUANTUM


def generate_random_topology(
    n: int, m: int, delay_mean: float = 50.0, delay_std: float = 50.0, seed: int = 0
) -> TopologyGraph:
    """Random connected graph with ``n`` nodes and exactly ``m`` links.

    A random spanning tree is laid down first (each node attaches to a uniformly
    chosen earlier node of a random permutation), then the remaining links are
    drawn uniformly from the unused node pairs.
    """
    if n < 2:
        raise TopologyError("need at least two nodes")
    if m < n - 1:
        raise TopologyError(f"m={m} links cannot connect n={n} nodes (need >= {n - 1})")
    if m > n * (n - 1) // 2:
        raise TopologyError(f"m={m} exceeds the {n * (n - 1) // 2} possible links")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    pairs: set[tuple[int, int]] = set()
    for i in range(1, n):
        j = int(rng.integers(0, i))
        a, b = int(order[i]), int(order[j])
        pairs.add((min(a, b), max(a, b)))
    extra = m - (n - 1)
    if extra:
        iu, ju = np.triu_indices(n, k=1)
        free = np.array([(a, b) not in pairs for a, b in zip(iu.tolist(), ju.tolist())])
        cand = np.flatnonzero(free)
        pick = np.sort(rng.choice(cand, size=extra, replace=False))
        pairs.update(zip(iu[pick].tolist(), ju[pick].tolist()))
    ordered = sorted(pairs)
    delays = draw_delays(rng, len(ordered), delay_mean, delay_std)
    return TopologyGraph.from_edges(n, [(a, b, w) for (a, b), w in zip(ordered, delays.tolist())])


def generate_fully_connected_topology(n: int, delay_ms: float = 50.0) -> TopologyGraph:
    return TopologyGraph.from_edges(
        n, [(i, j, delay_ms) for i in range(n) for j in range(i + 1, n)]
    )


def generate_class_centered_topology(
    node_classes: Sequence[Iterable[int]],
    delay_mean: float = 50.0,
    delay_std: float = math.sqrt(10.0),
    seed: int = 0,
) -> TopologyGraph:
    """Star per class: a random owner of each class is linked to every other owner.

    Links produced by several classes keep the smallest delay.
    """
    owners: dict[int, list[int]] = {}
    for node, classes in enumerate(node_classes):
        for c in set(classes):
            owners.setdefault(int(c), []).append(node)
    if not owners:
        raise TopologyError("no class is owned by any node")
    rng = np.random.default_rng(seed)
    links: dict[tuple[int, int], float] = {}
    for c in sorted(owners):
        members = sorted(owners[c])
        hub = members[int(rng.integers(len(members)))]
        spokes = [v for v in members if v != hub]
        for v, w in zip(spokes, draw_delays(rng, len(spokes), delay_mean, delay_std).tolist()):
            key = (min(hub, v), max(hub, v))
            links[key] = min(w, links.get(key, math.inf))
    g = TopologyGraph.from_edges(len(node_classes), [(a, b, w) for (a, b), w in links.items()])
    ncomp = _component_count(g)
    if ncomp != 1:
        raise TopologyError(f"class stars form {ncomp} disconnected components")
    return g


def all_pairs_min_delay(g: TopologyGraph) -> np.ndarray:
    """N x N matrix of minimum path delays (Dijkstra from every source)."""
    d = _csgraph_shortest_path(g.to_sparse(), method="D", directed=False)
    if not np.all(np.isfinite(d)):
        i, j = map(int, np.argwhere(~np.isfinite(d))[0])
        raise TopologyError(f"graph is disconnected: node {j} unreachable from node {i}")
    return d


def shortest_path(
    g: TopologyGraph, src: int, dst: int, delays: np.ndarray | None = None
) -> list[int]:
    """Minimum-delay route; among equal-delay routes the lexicographically smallest."""
    n = g.node_count
    if not (0 <= src < n and 0 <= dst < n):
        raise TopologyError(f"node out of range: {src} -> {dst}")
    if delays is None:
        to_dst = _csgraph_shortest_path(g.to_sparse(), method="D", directed=False, indices=dst)
    else:
        to_dst = delays[:, dst]
    if not math.isfinite(to_dst[src]):
        raise TopologyError(f"node {dst} unreachable from node {src}")
    path = [src]
    seen = {src}
    u = src
    while u != dst:
        for v in sorted(g.adjacency[u]):
            if v not in seen and _same(g.adjacency[u][v] + to_dst[v], to_dst[u]):
                break
        else:
            raise TopologyError(f"no consistent next hop from {u} toward {dst}")
        path.append(v)
        seen.add(v)
        u = v
    return path


def _same(a: float, b: float) -> bool:
    return a == b or abs(a - b) <= 1e-9 * max(1.0, abs(b))


class Router:
    """Caches delays and hop counts of the shortest-path routes on one graph."""

    def __init__(self, g: TopologyGraph, delays: np.ndarray | None = None):
        self.graph = g
        self.delays = all_pairs_min_delay(g) if delays is None else delays
        self._hops: dict[tuple[int, int], int] = {}

    def delay(self, src: int, dst: int) -> float:
        return float(self.delays[src, dst])

    def path(self, src: int, dst: int) -> list[int]:
        return shortest_path(self.graph, src, dst, self.delays)

    def hops(self, src: int, dst: int) -> int:
        if src == dst:
            return 0
        key = (src, dst)
        if key not in self._hops:
            self._hops[key] = len(self.path(src, dst)) - 1
        return self._hops[key]


def write_edge_list(g: TopologyGraph, path: str | Path) -> None:
    lines = [f"nodes {g.node_count}"] + [f"{u} {v} {w!r}" for u, v, w in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path: str | Path) -> TopologyGraph:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("nodes "):
        raise TopologyError(f"{path}: first line must be 'nodes N'")
    n = int(lines[0].split()[1])
    edges = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 3:
            raise TopologyError(f"{path}:{lineno}: expected 'u v delay_ms'")
        edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return TopologyGraph.from_edges(n, edges)
