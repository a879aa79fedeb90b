"""Layered aggregation tree built bottom-up from delay medoids, with optional public nodes."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .clustering import AccuracyProfile, ClusterSet, center_node, kmeans_cluster


class TreeError(ValueError):
    pass


LayerClusterer = Callable[[Sequence[int], int, np.ndarray], ClusterSet]


@dataclass(frozen=True)
class PublicNodeConfig:
    gamma: float = 0.1
    delta: float = 0.05

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise TreeError("gamma must lie in (0, 1)")
        if self.delta <= 0:
            raise TreeError("delta must be positive")


@dataclass(frozen=True)
class ETree:
    """``layers[0]`` holds every device, ``layers[l]`` the centers of ``groupings[l-1]``,
    and the last layer the root alone. ``frequencies[l-1]`` is how many child
    aggregations a node of ``layers[l]`` performs per upward send."""

    layers: tuple[tuple[int, ...], ...]
    groupings: tuple[ClusterSet, ...]
    frequencies: tuple[int, ...]
    public_nodes: frozenset[int] = frozenset()

    @property
    def root(self) -> int:
        return self.layers[-1][0]

    @property
    def depth(self) -> int:
        return len(self.layers)

    def children(self, layer: int, node: int) -> list[int]:
        """Nodes of ``layer - 1`` that report to ``node`` of ``layer``."""
        if layer == self.depth - 1:
            return list(self.layers[-2])
        cs = self.groupings[layer - 1]
        kids = set(cs.clusters[cs.centers.index(node)])
        if layer == 1:
            kids |= self.public_nodes
        return sorted(kids)

    def parents(self, layer: int, node: int) -> list[int]:
        if layer == self.depth - 1:
            return []
        if layer == self.depth - 2:
            return [self.root]
        if layer == 0 and node in self.public_nodes:
            return list(self.layers[1])
        cs = self.groupings[layer]
        return [cs.centers[cs.assignment[node]]]

    def frequency(self, layer: int) -> int:
        return 1 if layer == self.depth - 1 else self.frequencies[layer - 1]

    def to_text(self) -> str:
        out = []
        for l in range(self.depth - 1, -1, -1):
            freq = f" a={self.frequency(l)}" if l > 0 else ""
            out.append(f"layer {l + 1}{freq}")
            for n in self.layers[l]:
                ps = self.parents(l, n)
                out.append("  " * (self.depth - l) + f"{n} <- {','.join(map(str, ps)) or '-'}")
        return "\n".join(out)


def build_etree(
    d: np.ndarray,
    layer_ks: Sequence[int],
    frequencies: Sequence[int] | None = None,
    leaf_clustering: ClusterSet | LayerClusterer | None = None,
    upper_clustering: LayerClusterer | None = None,
    seed: int = 0,
) -> ETree:
    """Cluster all devices into K_1 groups, their centers into K_2 groups, and so on;
    the delay medoid of the last center set becomes the root.

    ``leaf_clustering`` may be a ready ClusterSet or a ``(nodes, K, d)`` callable;
    both it and ``upper_clustering`` default to delay-only K-Means.
    """
    n = d.shape[0]
    ks = [int(k) for k in layer_ks]
    if not ks:
        raise TreeError("layer_ks must name at least one clustering layer")
    freqs = [1] * len(ks) if frequencies is None else [int(a) for a in frequencies]
    if len(freqs) != len(ks):
        raise TreeError(f"need {len(ks)} frequencies, got {len(freqs)}")
    if any(a < 1 for a in freqs):
        raise TreeError("aggregation frequencies must be integers >= 1")
    if not 1 <= ks[0] <= n:
        raise TreeError(f"K_1={ks[0]} must be in 1..{n}")
    for lo, hi in zip(ks, ks[1:]):
        if not 1 <= hi <= lo:
            raise TreeError(f"layer sizes must not grow: {ks}")

    def default(nodes, K, dd):
        return kmeans_cluster(nodes, K, dd, seed=seed)

    upper = upper_clustering or default
    current = tuple(range(n))
    layers = [current]
    groupings = []
    for i, K in enumerate(ks):
        if i == 0 and isinstance(leaf_clustering, ClusterSet):
            cs = leaf_clustering
            if cs.nodes != list(current) or cs.K != K:
                raise TreeError("given leaf clustering does not match the devices or K_1")
        elif i == 0 and leaf_clustering is not None:
            cs = leaf_clustering(current, K, d)
        else:
            cs = upper(current, K, d)
        groupings.append(cs)
        current = tuple(sorted(cs.centers))
        layers.append(current)
    layers.append((center_node(current, d),))
    return ETree(tuple(layers), tuple(groupings), tuple(freqs))


def select_public_nodes(
    clusters: ClusterSet, profile: AccuracyProfile, d: np.ndarray, cfg: PublicNodeConfig
) -> list[int]:
    """Probe the nodes closest on average to all cluster centers; keep a node if adding it
    to every cluster it is missing from keeps each cluster's mean accuracy within
    ``cfg.delta`` of the overall mean. Accepted nodes stay in for later probes."""
    acc = profile.acc
    nodes = clusters.nodes
    avg = float(np.mean(acc[nodes]))
    members = [set(c) for c in clusters.clusters]
    reach = {n: float(np.mean([d[n, c] for c in clusters.centers])) for n in nodes}
    n_cand = math.ceil(cfg.gamma * len(nodes))
    candidates = sorted(nodes, key=lambda n: (reach[n], n))[:n_cand]
    chosen = []
    for n in candidates:
        trial = [m | {n} for m in members]
        if all(abs(float(np.mean(acc[sorted(m)])) - avg) < cfg.delta for m in trial):
            members = trial
            chosen.append(n)
    return sorted(chosen)


def attach_public_nodes(tree: ETree, publics: Sequence[int]) -> ETree:
    pub = frozenset(int(p) for p in publics)
    if not pub <= set(tree.layers[0]):
        raise TreeError("public nodes must be devices of the bottom layer")
    if len(tree.layers[1]) == 1:
        return tree  # a single group already reaches everyone
    return replace(tree, public_nodes=tree.public_nodes | pub)
