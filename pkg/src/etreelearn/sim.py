"""Discrete-event simulation of E-Tree learning and its baselines.

Time advances only through events: a message arrives after the minimum path
delay between its endpoints, a local update finishes ``compute_time_ms`` after
it starts. Events at equal times run in scheduling order, which makes every run
a pure function of its configuration.
"""
from __future__ import annotations

import csv
import heapq
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .clustering import center_node
from .dataset import LabeledDataset, NodePartition
from .model import (
    ModelDelta,
    ModelParams,
    TrainConfig,
    apply_averaged_deltas,
    average_models,
    delta,
    evaluate,
    init_model,
    sgd_train,
)
from .topology import Router, TopologyGraph
from .tree import ETree

log = logging.getLogger(__name__)

PROTOCOLS = ("etree", "federated", "gossip", "individual", "grouped")
DEFAULT_COMPUTE_MS = 50.0
CSV_COLUMNS = ("round", "sim_time_ms", "accuracy", "loss", "cum_hops")


class SimError(RuntimeError):
    pass


@dataclass
class SimConfig:
    protocol: str
    graph: TopologyGraph
    train: LabeledDataset
    test: LabeledDataset
    partition: NodePartition
    tree: ETree | None = None
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    client_fraction: float = 1.0
    compute_time_ms: float = DEFAULT_COMPUTE_MS
    budget_ms: float = 30000.0
    sample_interval_ms: float = 1000.0
    seed: int = 0
    delays: np.ndarray | None = None
    keep_models: bool = False

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise SimError(f"unknown protocol {self.protocol!r}")
        if not 0 < self.client_fraction <= 1:
            raise SimError("client_fraction must lie in (0, 1]")
        if self.compute_time_ms <= 0:
            raise SimError("compute_time_ms must be positive")
        if self.budget_ms < 0 or self.sample_interval_ms <= 0:
            raise SimError("budget_ms must be >= 0 and sample_interval_ms > 0")
        if len(self.partition) != self.graph.node_count:
            raise SimError("partition must hold one shard per device")
        if self.protocol in ("etree", "grouped") and self.tree is None:
            raise SimError(f"protocol {self.protocol!r} needs a tree")


@dataclass
class RoundRecord:
    round: int
    sim_time_ms: float
    accuracy: float
    loss: float
    cum_hops: int


@dataclass
class MetricsLog:
    protocol: str
    records: list[RoundRecord] = field(default_factory=list)
    total_hops: int = 0
    leaf_updates: int = 0  # local-update deltas absorbed by aggregators
    updates_at: list[int] = field(default_factory=list)  # leaf_updates at each record
    models: list = field(default_factory=list)  # per record, when keep_models is set

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].accuracy

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([r.round, repr(r.sim_time_ms), repr(r.accuracy), repr(r.loss), r.cum_hops])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path: str | Path, protocol: str = "") -> "MetricsLog":
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        recs = [
            RoundRecord(int(r["round"]), float(r["sim_time_ms"]), float(r["accuracy"]),
                        float(r["loss"]), int(r["cum_hops"]))
            for r in rows
        ]
        return cls(protocol, recs, recs[-1].cum_hops if recs else 0)


def communication_cost(log: MetricsLog) -> int:
    return log.total_hops


class EventLoop:
    """Min-heap of (time, priority, seq) keyed callbacks, cut off at the time budget."""

    def __init__(self, budget_ms: float):
        self.budget = budget_ms
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.processed = 0

    def at(self, time: float, kind: str, fn: Callable, *args, priority: int = 0) -> None:
        if time < self.now:
            raise SimError(f"event {kind} scheduled in the past ({time} < {self.now})")
        heapq.heappush(self._heap, (time, priority, self._seq, kind, fn, args))
        self._seq += 1

    def run(self) -> None:
        while self._heap and self._heap[0][0] <= self.budget:
            time, _, _, _kind, fn, args = heapq.heappop(self._heap)
            self.now = time
            self.processed += 1
            fn(*args)


class _World:
    """Shared machinery: routing, hop accounting, local training, evaluation."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.router = Router(cfg.graph, cfg.delays)
        self.loop = EventLoop(cfg.budget_ms)
        self.log = MetricsLog(cfg.protocol)
        self.hops = 0
        self.shards = [(cfg.train.features[idx], cfg.train.labels[idx]) for idx in cfg.partition.shards]
        self._updates = [0] * cfg.graph.node_count
        self.zero = init_model(cfg.train.feature_count, cfg.train.class_count)

    def send(self, src: int, dst: int, fn: Callable, *args, link: bool = False) -> None:
        """Deliver ``fn(*args)`` at ``dst`` after the route delay (or the direct link delay)."""
        if link:
            wait, hops = self.cfg.graph.link_delay(src, dst), 1
        else:
            wait, hops = self.router.delay(src, dst), self.router.hops(src, dst)
        self.loop.at(self.loop.now + wait, "message-arrive", self._arrive, hops, fn, args)

    def _arrive(self, hops: int, fn: Callable, args: tuple) -> None:
        self.hops += hops
        fn(*args)

    def train(self, node: int, m: ModelParams) -> ModelParams:
        self._updates[node] += 1
        rng = np.random.default_rng([self.cfg.seed, node, self._updates[node]])
        X, y = self.shards[node]
        return sgd_train(m, X, y, self.cfg.train_cfg, rng)

    def after_compute(self, fn: Callable, *args) -> None:
        self.loop.at(self.loop.now + self.cfg.compute_time_ms, "local-train-done", fn, *args)

    def record(self, rnd: int, models: list[ModelParams]) -> None:
        t = self.cfg.test
        scores = [evaluate(m, t.features, t.labels) for m in models]
        acc = float(np.mean([s[0] for s in scores]))
        loss = float(np.mean([s[1] for s in scores]))
        self.log.records.append(RoundRecord(rnd, self.loop.now, acc, loss, self.hops))
        self.log.updates_at.append(self.log.leaf_updates)
        if self.cfg.keep_models:
            self.log.models.append(list(models))

    def finish(self) -> MetricsLog:
        self.loop.run()
        self.log.total_hops = self.hops
        log.debug("%s: %d events, %d records, %d hops", self.cfg.protocol,
                  self.loop.processed, len(self.log.records), self.hops)
        return self.log

    def sample_every(self, models: Callable[[], list[ModelParams]]) -> None:
        """Record the mean over ``models()`` at t = 0, dt, 2dt, ... within the budget."""
        k = 0
        step = self.cfg.sample_interval_ms
        while k * step <= self.cfg.budget_ms:
            self.loop.at(k * step, "sample", lambda k=k: self.record(k, models()), priority=1)
            k += 1


# ---------------------------------------------------------------- federated


def run_federated(cfg: SimConfig) -> MetricsLog:
    """FedAvg with the delay medoid of the whole network as master (and client)."""
    w = _World(cfg)
    nodes = list(range(cfg.graph.node_count))
    master = center_node(nodes, w.router.delays)
    state = {"model": w.zero, "round": 0, "pending": {}, "clients": []}
    n_pick = max(1, int(round(cfg.client_fraction * len(nodes))))

    def start_round():
        if n_pick == len(nodes):
            clients = nodes
        else:
            rng = np.random.default_rng([cfg.seed, 7919, state["round"]])
            clients = sorted(int(c) for c in rng.choice(nodes, size=n_pick, replace=False))
        state["clients"], state["pending"] = clients, {}
        m = state["model"]
        for c in clients:
            w.send(master, c, w.after_compute, client_done, c, m)

    def client_done(c, m):
        w.send(c, master, collect, c, delta(w.train(c, m), m))

    def collect(c, dl):
        pend = state["pending"]
        pend[c] = dl
        if len(pend) < len(state["clients"]):
            return
        state["model"] = apply_averaged_deltas(state["model"], [pend[k] for k in state["clients"]])
        w.log.leaf_updates += len(pend)
        state["round"] += 1
        w.record(state["round"], [state["model"]])
        start_round()

    w.record(0, [w.zero])
    start_round()
    return w.finish()


# ---------------------------------------------------------------- tree protocols


class _Aggregator:
    """One aggregation node. Layer 1 nodes average leaf deltas into their model;
    higher layers average the models their child aggregators send up."""

    def __init__(self, world: _World, tree: ETree, layer: int, node: int, freq: int | None):
        self.w, self.tree, self.layer, self.node = world, tree, layer, node
        self.freq = freq  # None: never report upward
        self.kids: list = []
        self.parent: _Aggregator | None = None
        self.on_complete: Callable[["_Aggregator"], None] | None = None
        self.model: ModelParams = world.zero
        self.count = 0
        self.pending: dict = {}

    def start(self, m: ModelParams) -> None:
        self.model, self.count = m, 0
        self.dispatch()

    def dispatch(self) -> None:
        self.pending = {}
        m = self.model
        if self.layer == 1:
            for leaf in self.kids:
                self.w.send(self.node, leaf, self.w.after_compute, self._leaf_done, leaf, m)
        else:
            for kid in self.kids:
                self.w.send(self.node, kid.node, kid.start, m)

    def _leaf_done(self, leaf: int, m: ModelParams) -> None:
        self.w.send(leaf, self.node, self.receive, leaf, delta(self.w.train(leaf, m), m))

    def receive(self, key: int, value) -> None:
        self.pending[key] = value
        if len(self.pending) < len(self.kids):
            return
        if self.layer == 1:
            self.model = apply_averaged_deltas(self.model, [self.pending[k] for k in self.kids])
            self.w.log.leaf_updates += len(self.kids)
        else:
            self.model = average_models([self.pending[k.node] for k in self.kids])
        self.count += 1
        if self.freq is not None and self.count >= self.freq:
            if self.parent is not None:
                self.w.send(self.node, self.parent.node, self.parent.receive, self.node, self.model)
            if self.on_complete is not None:
                self.on_complete(self)
        else:
            self.dispatch()


def _build_aggregators(w: _World, tree: ETree, with_root: bool) -> list[list[_Aggregator]]:
    top = tree.depth - 1 if with_root else 1
    by_layer: list[dict[int, _Aggregator]] = [dict() for _ in range(top + 1)]
    for l in range(1, top + 1):
        freq = tree.frequency(l) if with_root else None
        for n in tree.layers[l]:
            by_layer[l][n] = _Aggregator(w, tree, l, n, freq)
    for l in range(1, top + 1):
        for n, agg in by_layer[l].items():
            kids = tree.children(l, n)
            if l == 1:
                agg.kids = kids
            else:
                agg.kids = [by_layer[l - 1][k] for k in kids]
                for k in agg.kids:
                    k.parent = agg
    return [list(by_layer[l].values()) for l in range(top + 1)]


def run_etree(cfg: SimConfig) -> MetricsLog:
    """Rounds of bottom-up aggregation; a round ends when the root aggregates."""
    w = _World(cfg)
    tree = cfg.tree
    layers = _build_aggregators(w, tree, with_root=True)
    root = layers[-1][0]
    state = {"round": 0}

    def round_done(agg: _Aggregator) -> None:
        state["round"] += 1
        w.record(state["round"], [agg.model])
        agg.start(agg.model)

    root.on_complete = round_done
    w.record(0, [w.zero])
    root.start(w.zero)
    return w.finish()


def run_grouped(cfg: SimConfig) -> MetricsLog:
    """Bottom-layer groups of the tree, each aggregating on its own with no global step."""
    w = _World(cfg)
    groups = _build_aggregators(w, cfg.tree, with_root=False)[1]
    w.sample_every(lambda: [g.model for g in groups])
    for g in groups:
        g.start(w.zero)
    return w.finish()


# ---------------------------------------------------------------- flat protocols


def run_individual(cfg: SimConfig) -> MetricsLog:
    """Every device trains alone; a device's update is folded in like a one-member group."""
    w = _World(cfg)
    models = [w.zero] * cfg.graph.node_count

    def tick(n):
        m = models[n]
        models[n] = apply_averaged_deltas(m, [delta(w.train(n, m), m)])
        w.after_compute(tick, n)

    w.sample_every(lambda: list(models))
    for n in range(cfg.graph.node_count):
        w.after_compute(tick, n)
    return w.finish()


def run_gossip(cfg: SimConfig) -> MetricsLog:
    """Train, push the model to every physical neighbour, average whatever arrives."""
    w = _World(cfg)
    g = cfg.graph
    models = [w.zero] * g.node_count
    nbrs = [g.neighbors(n) for n in range(g.node_count)]

    def tick(n):
        models[n] = w.train(n, models[n])
        for v in nbrs[n]:
            w.send(n, v, merge, v, models[n], link=True)
        w.after_compute(tick, n)

    def merge(n, received):
        models[n] = average_models([models[n], received])

    w.sample_every(lambda: list(models))
    for n in range(g.node_count):
        w.after_compute(tick, n)
    return w.finish()


RUNNERS = {
    "etree": run_etree,
    "federated": run_federated,
    "gossip": run_gossip,
    "individual": run_individual,
    "grouped": run_grouped,
}


def run(cfg: SimConfig) -> MetricsLog:
    return RUNNERS[cfg.protocol](cfg)
