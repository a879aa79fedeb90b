"""Wiring: config -> data, topology, tree -> simulator runs -> CSV files and summaries."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .clustering import (
    AccuracyProfile,
    ClusterSet,
    KmaConfig,
    center_node,
    kma_cluster,
    kmeans_cluster,
    pretrain_profile,
    ununiform_kma_cluster,
)
from .config import DatasetSpec, DistributionSpec, ExperimentConfig, validate
from .dataset import (
    LabeledDataset,
    NodePartition,
    load_csv_dataset,
    partition_iid,
    partition_noniid_classes_per_node,
    partition_noniid_sorted,
    sample_skewed_test_set,
)
from .model import TrainConfig
from .sim import MetricsLog, SimConfig, run
from .topology import (
    TopologyGraph,
    all_pairs_min_delay,
    generate_class_centered_topology,
    generate_fully_connected_topology,
    generate_random_topology,
    read_edge_list,
)
from .tree import ETree, PublicNodeConfig, attach_public_nodes, build_etree, select_public_nodes

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("protocol", "distribution", "runs", "accuracy_mean", "accuracy_std", "hops_mean")


@dataclass
class World:
    """Everything one seed of an experiment needs before any protocol runs."""

    train: LabeledDataset
    test: LabeledDataset
    partition: NodePartition
    graph: TopologyGraph
    delays: np.ndarray
    seed: int


def load_data(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    ds = cfg.dataset
    kw = dict(label_column=ds.label_column, skip_header=ds.skip_header, feature_scale=ds.feature_scale)
    train = load_csv_dataset(ds.train, ds.feature_count, **kw)
    test = load_csv_dataset(ds.test, ds.feature_count, label_map=train.label_map, **kw)
    return train, test


def make_partition(cfg: ExperimentConfig, train: LabeledDataset, seed: int) -> NodePartition:
    n, dist = cfg.topology.nodes, cfg.distribution
    if dist.kind == "iid":
        return partition_iid(train, n, seed=seed)
    if dist.kind == "noniid-k":
        return partition_noniid_classes_per_node(train, n, dist.classes_per_node, seed=seed)
    return partition_noniid_sorted(train, n)


def make_topology(cfg: ExperimentConfig, train: LabeledDataset, part: NodePartition, seed: int) -> TopologyGraph:
    t = cfg.topology
    if t.kind == "random":
        return generate_random_topology(t.nodes, t.links, t.delay_mean_ms, t.delay_std_ms, seed=seed)
    if t.kind == "fully-connected":
        return generate_fully_connected_topology(t.nodes, t.delay_mean_ms)
    if t.kind == "class-centered":
        classes = [part.labels_of(train, k) for k in range(len(part))]
        return generate_class_centered_topology(classes, t.delay_mean_ms, t.delay_std_ms, seed=seed)
    g = read_edge_list(t.path)
    if g.node_count != t.nodes:
        raise ValueError(f"{t.path}: topology has {g.node_count} nodes, config says {t.nodes}")
    return g


def make_world(cfg: ExperimentConfig, seed: int, data=None) -> World:
    train, test = data or load_data(cfg)
    part = make_partition(cfg, train, seed)
    g = make_topology(cfg, train, part, seed)
    return World(train, test, part, g, all_pairs_min_delay(g), seed)


def train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    t = cfg.train
    return TrainConfig(t.learning_rate, t.local_epochs, t.batch_size, seed)


def make_profile(cfg: ExperimentConfig, w: World) -> AccuracyProfile:
    size = min(cfg.tree.probe_size, w.test.size)
    weights = cfg.tree.probe_class_weights or None
    probe = sample_skewed_test_set(w.test, size, class_weights=weights, seed=w.seed)
    tc = train_config(cfg, w.seed)
    return pretrain_profile(w.partition, w.train, probe, cfg.tree.pretrain_rounds, tc)


def leaf_clusters(
    cfg: ExperimentConfig, w: World, algo: str, delta: float | None = None,
    profile: AccuracyProfile | None = None,
) -> ClusterSet:
    nodes = list(range(w.graph.node_count))
    K = cfg.tree.layer_ks[0]
    if algo == "kmeans":
        return kmeans_cluster(nodes, K, w.delays, seed=w.seed)
    profile = profile or make_profile(cfg, w)
    if algo == "kma":
        kc = KmaConfig(delta=cfg.tree.kma_delta if delta is None else delta, seed=w.seed)
        return kma_cluster(nodes, K, w.delays, profile, kc)
    return ununiform_kma_cluster(nodes, K, w.delays, profile)


def make_tree(
    cfg: ExperimentConfig, w: World, algo: str | None = None, delta: float | None = None,
    leaves: ClusterSet | None = None, profile: AccuracyProfile | None = None,
) -> ETree:
    algo = algo or cfg.tree.clustering
    tr = cfg.tree
    if profile is None and (algo != "kmeans" or tr.public_gamma > 0):
        profile = make_profile(cfg, w)
    if leaves is None:
        leaves = leaf_clusters(cfg, w, algo, delta, profile)
    tree = build_etree(w.delays, tr.layer_ks, tr.frequencies, leaf_clustering=leaves, seed=w.seed)
    if tr.public_gamma > 0:
        pub = select_public_nodes(leaves, profile, w.delays, PublicNodeConfig(tr.public_gamma, tr.public_delta))
        tree = attach_public_nodes(tree, pub)
    return tree


def sim_config(cfg: ExperimentConfig, w: World, protocol: str, tree: ETree | None) -> SimConfig:
    s = cfg.sim
    return SimConfig(
        protocol=protocol, graph=w.graph, train=w.train, test=w.test, partition=w.partition,
        tree=tree, train_cfg=train_config(cfg, w.seed), client_fraction=s.client_fraction,
        compute_time_ms=s.compute_time_ms, budget_ms=s.budget_ms,
        sample_interval_ms=s.sample_interval_ms, seed=w.seed, delays=w.delays,
    )


def run_file_name(protocol: str, distribution: str, seed: int) -> str:
    return f"{protocol}_{distribution}_{seed}.csv"


def _run_seed(cfg: ExperimentConfig, seed: int, data) -> dict[str, MetricsLog]:
    w = make_world(cfg, seed, data)
    needs_tree = any(p in ("etree", "grouped") for p in cfg.protocols)
    tree = make_tree(cfg, w) if needs_tree else None
    out = {}
    for p in cfg.protocols:
        log.info("seed %d: running %s", seed, p)
        out[p] = run(sim_config(cfg, w, p, tree))
    return out


def _map(fn: Callable, args: Sequence[tuple], jobs: int) -> list:
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futs = [pool.submit(fn, *a) for a in args]
        return [f.result() for f in futs]


def summarize(results: dict[tuple[str, int], MetricsLog], distribution: str) -> list[dict]:
    rows = []
    for p in dict.fromkeys(k[0] for k in results):
        logs = [results[k] for k in results if k[0] == p]
        acc = np.array([lg.final_accuracy for lg in logs])
        rows.append({
            "protocol": p,
            "distribution": distribution,
            "runs": len(logs),
            "accuracy_mean": float(acc.mean()),
            "accuracy_std": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
            "hops_mean": float(np.mean([lg.total_hops for lg in logs])),
        })
    return rows


def write_summary(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> tuple[dict[tuple[str, int], MetricsLog], list[dict]]:
    """Run every (protocol, seed) pair, then write one CSV per run plus ``summary.csv``.

    Nothing is written until all runs have finished, so a failure leaves no partial output.
    """
    validate(cfg)
    data = load_data(cfg)
    per_seed = _map(_run_seed, [(cfg, s, data) for s in cfg.seeds], jobs)
    results = {(p, s): logs[p] for s, logs in zip(cfg.seeds, per_seed) for p in cfg.protocols}
    rows = summarize(results, cfg.distribution_label)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (p, s), lg in results.items():
        lg.write_csv(out / run_file_name(p, cfg.distribution_label, s))
    write_summary(rows, out / "summary.csv")
    return results, rows


# ---------------------------------------------------------------- clustering comparison


def delta_label(delta: float) -> str:
    return f"kma{round(delta * 100):03d}"


def _cluster_seed(cfg: ExperimentConfig, seed: int, data) -> dict[str, MetricsLog]:
    w = make_world(cfg, seed, data)
    profile = make_profile(cfg, w)
    variants: list[tuple[str, str, float | None]] = [("kmeans", "kmeans", None), ("ununiform-kma", "ununiform-kma", None)]
    variants += [(delta_label(dl), "kma", dl) for dl in cfg.tree.delta_sweep]
    out = {}
    for label, algo, dl in variants:
        tree = make_tree(cfg, w, algo=algo, delta=dl, profile=profile)
        log.info("seed %d: etree with %s leaves", seed, label)
        out[label] = run(sim_config(cfg, w, "etree", tree))
    return out


def cluster_eval(cfg: ExperimentConfig, jobs: int = 1) -> tuple[dict[tuple[str, int], MetricsLog], list[dict]]:
    """E-Tree under K-Means, Ununiform-KMA and KMA for every delta of the sweep.

    Writes ``etree-<variant>_<distribution>_<seed>.csv`` per run and ``cluster_summary.csv``.
    """
    validate(cfg)
    data = load_data(cfg)
    per_seed = _map(_cluster_seed, [(cfg, s, data) for s in cfg.seeds], jobs)
    results = {(label, s): logs[label] for s, logs in zip(cfg.seeds, per_seed) for label in logs}
    rows = summarize(results, cfg.distribution_label)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (label, s), lg in results.items():
        lg.write_csv(out / run_file_name(f"etree-{label}", cfg.distribution_label, s))
    write_summary(rows, out / "cluster_summary.csv")
    return results, rows


def best_kma(rows: list[dict]) -> dict:
    return max((r for r in rows if r["protocol"].startswith("kma")), key=lambda r: r["accuracy_mean"])


# ---------------------------------------------------------------- classes per group


def class_span_groups(
    part: NodePartition, ds: LabeledDataset, K: int, d: np.ndarray, wide: bool
) -> ClusterSet:
    """Hand-built leaf groups for studying how many classes a group should hold.

    Devices are ordered by their majority class. Narrow groups take whole classes
    (several classes merged when K is below the class count, a class split over
    several groups when K exceeds it), so each group holds one or two classes when
    devices are single-class. Wide groups deal the ordered devices round-robin so
    every group sees every class.
    """
    n = len(part)
    if not 1 <= K <= n:
        raise ValueError(f"K={K} must be in 1..{n}")
    major = [int(np.bincount(ds.labels[s], minlength=ds.class_count).argmax()) for s in part.shards]
    order = sorted(range(n), key=lambda k: (major[k], k))
    if wide:
        groups = [sorted(order[i::K]) for i in range(K)]
    else:
        classes = sorted(set(major))
        by_class = {c: [k for k in order if major[k] == c] for c in classes}
        if K <= len(classes):
            groups = [sorted(k for c in chunk for k in by_class[c]) for chunk in np.array_split(classes, K)]
        else:
            # hand out the extra groups to the classes with the most devices
            share = {c: 1 for c in classes}
            for _ in range(K - len(classes)):
                c = max(classes, key=lambda c: (len(by_class[c]) / share[c], -c))
                share[c] += 1
            groups = []
            for c in classes:
                groups += [sorted(g.tolist()) for g in np.array_split(by_class[c], share[c])]
        if any(len(g) == 0 for g in groups):
            raise ValueError(f"cannot form {K} non-empty single-class groups")
    return ClusterSet(tuple(tuple(g) for g in groups), tuple(center_node(g, d) for g in groups))


def group_class_counts(cs: ClusterSet, part: NodePartition, ds: LabeledDataset) -> list[int]:
    return [len(set().union(*(part.labels_of(ds, k) for k in g))) for g in cs.clusters]


def classes_per_group_experiment(
    cfg: ExperimentConfig, ks: Sequence[int] = (5, 8), jobs: int = 1
) -> list[dict]:
    """Final E-Tree accuracy with narrow (1-2 classes) versus wide (all classes) groups.

    Uses a fully connected network with equal link delays so only the grouping differs.
    """
    base = replace(cfg, topology=replace(cfg.topology, kind="fully-connected"))
    data = load_data(base)
    args = [(base, s, data, K) for K in ks for s in cfg.seeds]
    rows = []
    for res in _map(_span_seed, args, jobs):
        rows.extend(res)
    return rows


def _span_seed(cfg: ExperimentConfig, seed: int, data, K: int) -> list[dict]:
    c = replace(cfg, tree=replace(cfg.tree, layer_ks=[K], public_gamma=0.0))
    w = make_world(c, seed, data)
    rows = []
    for kind in ("narrow", "wide"):
        leaves = class_span_groups(w.partition, w.train, K, w.delays, wide=kind == "wide")
        counts = group_class_counts(leaves, w.partition, w.train)
        lg = run(sim_config(c, w, "etree", make_tree(c, w, leaves=leaves)))
        rows.append({
            "K": K, "seed": seed, "grouping": kind, "min_classes": min(counts),
            "max_classes": max(counts), "accuracy": lg.final_accuracy,
        })
    return rows


# ---------------------------------------------------------------- five-protocol accuracy table


def table3_config(data_dir: str | Path, seeds: Sequence[int], output_dir: str | Path, distribution: str) -> ExperimentConfig:
    """Desk-scale setup of the accuracy comparison: 100 devices, 300 links, HAR, K_1=20."""
    root = Path(data_dir)
    cfg = ExperimentConfig(
        dataset=DatasetSpec(str(root / "har_train.csv"), str(root / "har_test.csv"), feature_count=561),
        distribution=DistributionSpec("iid") if distribution == "iid" else DistributionSpec("noniid-k", 4),
        seeds=list(seeds),
        output_dir=str(output_dir),
        name=f"table3-{distribution}",
    )
    return cfg


TABLE3_ROWS = (
    ("etree", "E-Tree"),
    ("federated", "Federated"),
    ("gossip", "Gossip"),
    ("individual", "Individual"),
    ("grouped", "Grouped"),
)


def replicate_table3(
    data_dir: str | Path, seeds: Sequence[int] = (1, 2, 3), output_dir: str | Path = "out/table3", jobs: int = 1
) -> dict[str, list[dict]]:
    """Five protocols under IID and NonIID(4 classes); returns summary rows per distribution."""
    out = {}
    for dist in ("iid", "noniid"):
        cfg = table3_config(data_dir, seeds, Path(output_dir) / dist, dist)
        out[dist] = run_experiment(cfg, jobs=jobs)[1]
    return out


def format_table3(summary: dict[str, list[dict]]) -> str:
    by = {d: {r["protocol"]: r for r in rows} for d, rows in summary.items()}
    lines = [f"{'Method':<12}{'IID':>18}{'NonIID':>18}"]
    for key, name in TABLE3_ROWS:
        cells = []
        for d in ("iid", "noniid"):
            r = by.get(d, {}).get(key)
            cells.append(f"{r['accuracy_mean']:.3f} ± {r['accuracy_std']:.3f}" if r else "-")
        lines.append(f"{name:<12}{cells[0]:>18}{cells[1]:>18}")
    return "\n".join(lines)


def hop_ratio(results: dict[tuple[str, int], MetricsLog], seed: int) -> float:
    return results[("etree", seed)].total_hops / max(1, results[("federated", seed)].total_hops)
