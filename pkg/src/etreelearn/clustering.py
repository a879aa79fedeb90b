"""Device clustering: delay medoids, K-Means, KMA and the Ununiform-KMA baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataset import LabeledDataset, NodePartition
from .model import TrainConfig, evaluate, init_model, sgd_train


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[tuple[int, ...], ...]  # sorted members per cluster
    centers: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.clusters)

    @property
    def assignment(self) -> dict[int, int]:
        return {n: k for k, members in enumerate(self.clusters) for n in members}

    @property
    def nodes(self) -> list[int]:
        return sorted(n for members in self.clusters for n in members)

    def to_text(self) -> str:
        return "\n".join(
            f"{k}: {' '.join(map(str, members))}; center={c}"
            for k, (members, c) in enumerate(zip(self.clusters, self.centers))
        )

    @classmethod
    def from_text(cls, text: str) -> "ClusterSet":
        clusters, centers = [], []
        for line in filter(None, (ln.strip() for ln in text.splitlines())):
            head, center = line.split(";")
            _, members = head.split(":")
            clusters.append(tuple(sorted(int(t) for t in members.split())))
            centers.append(int(center.split("=")[1]))
        return cls(tuple(clusters), tuple(centers))


@dataclass(frozen=True)
class AccuracyProfile:
    acc: np.ndarray  # pre-trained accuracy, indexed by node id
    rounds: int

    @property
    def acc_avg(self) -> float:
        return float(np.mean(self.acc))


@dataclass(frozen=True)
class KmaConfig:
    delta: float = 0.05
    max_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise ClusteringError("delta must be positive")


def center_node(cluster: Iterable[int], d: np.ndarray) -> int:
    """Member with the smallest total delay to the other members (ties: smallest id)."""
    members = sorted(cluster)
    if not members:
        raise ClusteringError("empty cluster has no center")
    sums = d[np.ix_(members, members)].sum(axis=1)
    return members[int(np.argmin(sums))]


def total_delay_to_centers(cs: ClusterSet, d: np.ndarray) -> float:
    return float(sum(d[n, c] for members, c in zip(cs.clusters, cs.centers) for n in members))


def pretrain_profile(
    partition: NodePartition,
    ds: LabeledDataset,
    probe: LabeledDataset,
    rounds: int = 5,
    cfg: TrainConfig = TrainConfig(),
) -> AccuracyProfile:
    """Train a fresh model on each shard for ``rounds`` epochs and score it on the probe set.

    Every node shuffles with the same seed, so identical shards give identical scores.
    """
    tc = TrainConfig(cfg.learning_rate, rounds, cfg.batch_size, cfg.seed)
    acc = np.empty(len(partition))
    for node, idx in enumerate(partition.shards):
        m = init_model(ds.feature_count, ds.class_count)
        m = sgd_train(m, ds.features[idx], ds.labels[idx], tc, np.random.default_rng(cfg.seed))
        acc[node] = evaluate(m, probe.features, probe.labels)[0]
    return AccuracyProfile(acc, rounds)


Chooser = Callable[[int, list[int], list[set[int]]], int]


def _medoid_sweeps(
    nodes: Sequence[int], K: int, d: np.ndarray, seed: int, max_iters: int, choose: Chooser
) -> ClusterSet:
    """Online medoid clustering shared by K-Means and KMA.

    Centers start at K random nodes. Each sweep visits the nodes in ascending id
    order, takes the node out of its cluster, lets ``choose`` pick a cluster from
    the current centers sorted by delay, then recomputes the centers of the
    cluster it left and the one it joined. Neither step can raise the total
    delay to centers, so the K-Means objective never grows.
    Current centers are never moved, so no cluster can empty. Sweeps repeat until
    a full sweep leaves the centers unchanged or ``max_iters`` is hit.
    """
    nodes = sorted(int(n) for n in nodes)
    if not 1 <= K <= len(nodes):
        raise ClusteringError(f"K={K} must be in 1..{len(nodes)}")
    rng = np.random.default_rng(seed)
    centers = sorted(int(c) for c in rng.choice(nodes, size=K, replace=False))
    members: list[set[int]] = [{c} for c in centers]
    where = {c: k for k, c in enumerate(centers)}
    for _ in range(max_iters):
        before = list(centers)
        for n in nodes:
            if n in centers:
                continue
            old = where.pop(n, None)
            if old is not None:
                members[old].discard(n)
            order = sorted(range(K), key=lambda k: (d[n, centers[k]], centers[k]))
            k = choose(n, order, members)
            members[k].add(n)
            where[n] = k
            for t in {k, old} - {None}:
                centers[t] = center_node(members[t], d)
        if centers == before:
            break
    return ClusterSet(tuple(tuple(sorted(m)) for m in members), tuple(centers))


def kmeans_cluster(
    nodes: Sequence[int], K: int, d: np.ndarray, seed: int = 0, max_iters: int = 50
) -> ClusterSet:
    """Cluster on transmission delay only: every node joins its nearest center."""
    return _medoid_sweeps(nodes, K, d, seed, max_iters, lambda n, order, members: order[0])


def kma_cluster(
    nodes: Sequence[int], K: int, d: np.ndarray, profile: AccuracyProfile, cfg: KmaConfig = KmaConfig()
) -> ClusterSet:
    """K-Means with an accuracy constraint.

    A node tries the clusters of the nearest ceil(K/2) centers in order and joins
    the first one whose mean pre-trained accuracy (node included) stays within
    ``cfg.delta`` of the overall mean; otherwise it joins the nearest center.
    """
    acc = profile.acc
    nodes = list(nodes)
    if any(n >= len(acc) for n in nodes):
        raise ClusteringError("accuracy profile does not cover every node")
    avg = float(np.mean(acc[nodes]))
    half = math.ceil(K / 2)

    def choose(n: int, order: list[int], members: list[set[int]]) -> int:
        for k in order[:half]:
            acc_k = (sum(acc[j] for j in members[k]) + acc[n]) / (len(members[k]) + 1)
            if abs(acc_k - avg) < cfg.delta:
                return k
        return order[0]

    return _medoid_sweeps(nodes, K, d, cfg.seed, cfg.max_iters, choose)


def ununiform_kma_cluster(
    nodes: Sequence[int], K: int, d: np.ndarray, profile: AccuracyProfile, cfg: KmaConfig | None = None
) -> ClusterSet:
    """Deliberately skewed baseline: contiguous blocks of nodes ranked by pre-trained accuracy."""
    nodes = sorted(int(n) for n in nodes)
    if not 1 <= K <= len(nodes):
        raise ClusteringError(f"K={K} must be in 1..{len(nodes)}")
    if any(n >= len(profile.acc) for n in nodes):
        raise ClusteringError("accuracy profile does not cover every node")
    ranked = sorted(nodes, key=lambda n: (profile.acc[n], n))
    base, rem = divmod(len(nodes), K)
    clusters, start = [], 0
    for k in range(K):
        size = base + (1 if k < rem else 0)
        clusters.append(tuple(sorted(ranked[start:start + size])))
        start += size
    return ClusterSet(tuple(clusters), tuple(center_node(c, d) for c in clusters))


def cluster_accuracy_deviation(cs: ClusterSet, profile: AccuracyProfile) -> np.ndarray:
    """|mean cluster accuracy - overall mean| for every cluster."""
    avg = float(np.mean(profile.acc[cs.nodes]))
    return np.array([abs(float(np.mean(profile.acc[list(c)])) - avg) for c in cs.clusters])
