"""Experiment configuration: YAML in, validated dataclasses out, and back again."""
from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .sim import DEFAULT_COMPUTE_MS, PROTOCOLS

DATA_DIR_ENV = "ETREE_DATA_DIR"
DISTRIBUTIONS = ("iid", "noniid-k", "noniid-sorted")
TOPOLOGIES = ("random", "class-centered", "fully-connected", "file")
CLUSTERINGS = ("kmeans", "kma", "ununiform-kma")


class ConfigError(ValueError):
    """Validation failure; ``path`` names the offending field, e.g. ``tree.layer_ks``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class DatasetSpec:
    root: str = ""  # base for relative train/test paths; $ETREE_DATA_DIR wins when set
    train: str = ""
    test: str = ""
    feature_count: int = 0
    label_column: int = -1
    skip_header: bool = False
    feature_scale: float = 1.0


@dataclass
class DistributionSpec:
    kind: str = "iid"
    classes_per_node: int = 4


@dataclass
class TopologySpec:
    kind: str = "random"
    nodes: int = 100
    links: int = 300
    delay_mean_ms: float = 50.0
    delay_std_ms: float = 50.0
    path: str = ""


@dataclass
class TreeSpec:
    layer_ks: list[int] = field(default_factory=lambda: [20])
    frequencies: list[int] = field(default_factory=lambda: [5])
    clustering: str = "kmeans"
    kma_delta: float = 0.05
    delta_sweep: list[float] = field(default_factory=lambda: [0.01, 0.03, 0.05, 0.07, 0.09])
    pretrain_rounds: int = 5
    probe_size: int = 1000
    probe_class_weights: list[float] = field(default_factory=list)  # empty: built-in skewed default
    public_gamma: float = 0.0  # 0 disables public nodes
    public_delta: float = 0.05


@dataclass
class TrainSpec:
    learning_rate: float = 0.02
    local_epochs: int = 1
    batch_size: int = 10


@dataclass
class SimSpec:
    budget_ms: float = 30000.0
    compute_time_ms: float = DEFAULT_COMPUTE_MS
    client_fraction: float = 1.0
    sample_interval_ms: float = 1000.0


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    distribution: DistributionSpec = field(default_factory=DistributionSpec)
    topology: TopologySpec = field(default_factory=TopologySpec)
    tree: TreeSpec = field(default_factory=TreeSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    sim: SimSpec = field(default_factory=SimSpec)
    protocols: list[str] = field(default_factory=lambda: list(PROTOCOLS))
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    output_dir: str = "out"
    name: str = "experiment"

    @property
    def distribution_label(self) -> str:
        d = self.distribution
        return f"noniid-k{d.classes_per_node}" if d.kind == "noniid-k" else d.kind


# ---------------------------------------------------------------- parsing


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        (inner,) = typing.get_args(tp)
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise TypeError(f"unsupported field type {tp}")  # pragma: no cover


def _build(cls: type, data: Any, path: str) -> Any:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown field")
    kwargs = {
        k: _coerce(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()
    }
    return cls(**kwargs)


def config_from_dict(data: dict, check_files: bool = False) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data, "")
    validate(cfg, check_files=check_files)
    return cfg


def load_config(path: str | Path, check_files: bool = True) -> ExperimentConfig:
    """Parse and validate a YAML experiment file.

    Relative dataset paths resolve against ``$ETREE_DATA_DIR`` when it is set,
    otherwise against ``dataset.root`` (itself relative to the config file).
    """
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: malformed YAML ({exc})") from None
    cfg = _build(ExperimentConfig, data, "")
    resolve_paths(cfg, path.parent)
    validate(cfg, check_files=check_files)
    return cfg


def resolve_paths(cfg: ExperimentConfig, base_dir: str | Path) -> None:
    ds = cfg.dataset
    env = os.environ.get(DATA_DIR_ENV)
    root = Path(env) if env else Path(base_dir) / ds.root
    for attr in ("train", "test"):
        p = getattr(ds, attr)
        if p and not Path(p).is_absolute():
            setattr(ds, attr, str(root / p))
    if cfg.topology.path and not Path(cfg.topology.path).is_absolute():
        cfg.topology.path = str(root / cfg.topology.path)


def to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


# ---------------------------------------------------------------- validation


def _check(ok: bool, path: str, msg: str) -> None:
    if not ok:
        raise ConfigError(path, msg)


def validate(cfg: ExperimentConfig, check_files: bool = True) -> None:
    """Range and consistency checks; raises ConfigError naming the first bad field."""
    ds, dist, topo, tree, tr, sim = cfg.dataset, cfg.distribution, cfg.topology, cfg.tree, cfg.train, cfg.sim
    _check(ds.feature_count >= 1, "dataset.feature_count", "must be >= 1")
    _check(ds.feature_scale > 0, "dataset.feature_scale", "must be positive")
    _check(dist.kind in DISTRIBUTIONS, "distribution.kind", f"must be one of {DISTRIBUTIONS}")
    if dist.kind == "noniid-k":
        _check(dist.classes_per_node >= 1, "distribution.classes_per_node", "must be >= 1")
    _check(topo.kind in TOPOLOGIES, "topology.kind", f"must be one of {TOPOLOGIES}")
    _check(topo.nodes >= 1, "topology.nodes", "must be >= 1")
    _check(topo.delay_mean_ms >= 0, "topology.delay_mean_ms", "must be >= 0")
    _check(topo.delay_std_ms >= 0, "topology.delay_std_ms", "must be >= 0")
    if topo.kind == "random":
        n = topo.nodes
        _check(n - 1 <= topo.links <= n * (n - 1) // 2, "topology.links",
               f"must lie in [{n - 1}, {n * (n - 1) // 2}] for {n} nodes")
    if topo.kind == "file":
        _check(bool(topo.path), "topology.path", "required when kind is 'file'")

    ks = tree.layer_ks
    _check(len(ks) >= 1, "tree.layer_ks", "needs at least one entry")
    _check(1 <= ks[0] <= topo.nodes, "tree.layer_ks[0]", f"must lie in 1..{topo.nodes}")
    for i in range(1, len(ks)):
        _check(1 <= ks[i] <= ks[i - 1], f"tree.layer_ks[{i}]", "must lie in 1..previous K")
    _check(len(tree.frequencies) == len(ks), "tree.frequencies", f"needs {len(ks)} entries, one per K")
    for i, a in enumerate(tree.frequencies):
        _check(a >= 1, f"tree.frequencies[{i}]", "must be >= 1")
    _check(tree.clustering in CLUSTERINGS, "tree.clustering", f"must be one of {CLUSTERINGS}")
    _check(tree.kma_delta > 0, "tree.kma_delta", "must be positive")
    for i, dl in enumerate(tree.delta_sweep):
        _check(dl > 0, f"tree.delta_sweep[{i}]", "must be positive")
    _check(tree.pretrain_rounds >= 1, "tree.pretrain_rounds", "must be >= 1")
    _check(tree.probe_size >= 1, "tree.probe_size", "must be >= 1")
    for i, wt in enumerate(tree.probe_class_weights):
        _check(wt > 0, f"tree.probe_class_weights[{i}]", "must be positive")
    if tree.probe_class_weights:
        _check(abs(sum(tree.probe_class_weights) - 1) < 1e-9, "tree.probe_class_weights", "must sum to 1")
    _check(0 <= tree.public_gamma < 1, "tree.public_gamma", "must lie in [0, 1)")
    _check(tree.public_delta > 0, "tree.public_delta", "must be positive")

    _check(tr.learning_rate > 0, "train.learning_rate", "must be positive")
    _check(tr.local_epochs >= 1, "train.local_epochs", "must be >= 1")
    _check(tr.batch_size >= 1, "train.batch_size", "must be >= 1")
    _check(sim.budget_ms >= 0, "sim.budget_ms", "must be >= 0")
    _check(sim.compute_time_ms > 0, "sim.compute_time_ms", "must be positive")
    _check(0 < sim.client_fraction <= 1, "sim.client_fraction", "must lie in (0, 1]")
    _check(sim.sample_interval_ms > 0, "sim.sample_interval_ms", "must be positive")

    _check(len(cfg.protocols) >= 1, "protocols", "must name at least one protocol")
    for i, p in enumerate(cfg.protocols):
        _check(p in PROTOCOLS, f"protocols[{i}]", f"unknown protocol {p!r}; choose from {PROTOCOLS}")
    _check(len(set(cfg.protocols)) == len(cfg.protocols), "protocols", "duplicate entries")
    _check(len(cfg.seeds) >= 1, "seeds", "must list at least one seed")
    _check(len(set(cfg.seeds)) == len(cfg.seeds), "seeds", "duplicate entries")
    _check(bool(cfg.output_dir), "output_dir", "must not be empty")

    if check_files:
        for attr in ("train", "test"):
            p = getattr(ds, attr)
            _check(bool(p), f"dataset.{attr}", "path required")
            _check(Path(p).is_file(), f"dataset.{attr}", f"file not found: {p}")
        if topo.kind == "file":
            _check(Path(topo.path).is_file(), "topology.path", f"file not found: {topo.path}")
