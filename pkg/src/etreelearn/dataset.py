"""CSV datasets, per-device partitions (IID and two NonIID schemes) and the skewed probe set."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# Default class proportions of the skewed probe set for 6 classes.
SKEWED_WEIGHTS_6 = (0.30, 0.25, 0.18, 0.12, 0.09, 0.06)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray  # S x F
    labels: np.ndarray  # S, dense ints in [0, class_count)
    class_count: int
    label_map: dict[int, int] = field(default_factory=dict, compare=False)  # original -> dense

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise DatasetError("features must be S x F and labels length S")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DatasetError("label out of range")

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_count(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=int)
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_count, self.label_map)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class NodePartition:
    shards: tuple[np.ndarray, ...]  # per-device sample indices

    def __len__(self) -> int:
        return len(self.shards)

    def labels_of(self, ds: LabeledDataset, node: int) -> set[int]:
        return set(np.unique(ds.labels[self.shards[node]]).tolist())

    def validate(self, ds: LabeledDataset) -> None:
        allidx = np.concatenate(self.shards) if self.shards else np.empty(0, int)
        if any(len(s) == 0 for s in self.shards):
            raise DatasetError("empty shard")
        if len(allidx) != ds.size or len(np.unique(allidx)) != ds.size:
            raise DatasetError("shards must be disjoint and cover every sample")


def load_csv_dataset(
    path: str | Path,
    feature_count: int,
    label_column: int = -1,
    skip_header: bool = False,
    feature_scale: float = 1.0,
    label_map: dict[int, int] | None = None,
) -> LabeledDataset:
    """Parse a comma-separated file of numeric features plus an integer label.

    Labels are remapped onto 0..C-1 in ascending order of their original values,
    unless ``label_map`` is given (use the training set's map for its test set).
    """
    path = Path(path)
    rows: list[list[float]] = []
    raw_labels: list[int] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != feature_count + 1:
                raise DatasetError(
                    f"{path}:{lineno}: expected {feature_count + 1} fields, got {len(parts)}"
                )
            try:
                lab = parts.pop(label_column)
                label = float(lab)
                if label != int(label):
                    raise ValueError(lab)
                vals = [float(x) for x in parts]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: non-numeric field ({exc})") from None
            rows.append(vals)
            raw_labels.append(int(label))
    if not rows:
        raise DatasetError(f"{path}: no samples")
    if label_map is None:
        label_map = {orig: i for i, orig in enumerate(sorted(set(raw_labels)))}
    try:
        labels = np.array([label_map[v] for v in raw_labels], dtype=int)
    except KeyError as exc:
        raise DatasetError(f"{path}: label {exc.args[0]} not in the label map") from None
    features = np.array(rows, dtype=float) * feature_scale
    return LabeledDataset(features, labels, len(label_map), dict(label_map))


def write_csv_dataset(ds: LabeledDataset, path: str | Path) -> None:
    inv = {v: k for k, v in ds.label_map.items()} or {i: i for i in range(ds.class_count)}
    with Path(path).open("w") as fh:
        for x, y in zip(ds.features, ds.labels):
            fh.write(",".join(repr(float(v)) for v in x) + f",{inv[int(y)]}\n")


def convert_uci_har(src_dir: str | Path, out_dir: str | Path) -> tuple[Path, Path]:
    """Turn the UCI 'HAR Dataset' folder (X_*.txt, y_*.txt) into train/test CSV files."""
    src, out = Path(src_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for split in ("train", "test"):
        x = np.loadtxt(src / split / f"X_{split}.txt")
        y = np.loadtxt(src / split / f"y_{split}.txt", dtype=int)
        target = out / f"har_{split}.csv"
        with target.open("w") as fh:
            for row, label in zip(x, y):
                fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")
        written.append(target)
    return written[0], written[1]


def _even_split(n_items: int, n_parts: int) -> list[int]:
    base, rem = divmod(n_items, n_parts)
    return [base + (1 if i < rem else 0) for i in range(n_parts)]


def partition_iid(ds: LabeledDataset, n_nodes: int, seed: int = 0) -> NodePartition:
    """Shuffle each class and deal its samples round-robin over the devices.

    The dealing position carries over from one class to the next, so shard
    sizes differ by at most one.
    """
    if not 1 <= n_nodes <= ds.size:
        raise DatasetError(f"n_nodes={n_nodes} must be in 1..{ds.size}")
    rng = np.random.default_rng(seed)
    shards: list[list[int]] = [[] for _ in range(n_nodes)]
    pos = 0
    for c in range(ds.class_count):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        for i in idx.tolist():
            shards[pos].append(i)
            pos = (pos + 1) % n_nodes
    return NodePartition(tuple(np.array(sorted(s), dtype=int) for s in shards))


def partition_noniid_classes_per_node(
    ds: LabeledDataset, n_nodes: int, classes_per_node: int, seed: int = 0, max_draws: int = 1000
) -> NodePartition:
    """Each device gets ``classes_per_node`` random labels; a label's samples are split evenly
    among the devices holding it. Label draws repeat until every class is held by someone."""
    C = ds.class_count
    if not 1 <= classes_per_node <= C:
        raise DatasetError(f"classes_per_node={classes_per_node} must be in 1..{C}")
    if not 1 <= n_nodes <= ds.size:
        raise DatasetError(f"n_nodes={n_nodes} must be in 1..{ds.size}")
    present = [c for c in range(C) if np.any(ds.labels == c)]
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        assigned = [np.sort(rng.choice(C, size=classes_per_node, replace=False)) for _ in range(n_nodes)]
        held = set(np.concatenate(assigned).tolist())
        if all(c in held for c in present):
            break
    else:
        raise DatasetError("could not cover every class; too few devices for classes_per_node")
    shards: list[list[int]] = [[] for _ in range(n_nodes)]
    for c in present:
        holders = [k for k in range(n_nodes) if c in assigned[k]]
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        start = 0
        for k, cnt in zip(holders, _even_split(len(idx), len(holders))):
            shards[k].extend(idx[start:start + cnt].tolist())
            start += cnt
    part = NodePartition(tuple(np.array(sorted(s), dtype=int) for s in shards))
    if any(len(s) == 0 for s in part.shards):
        raise DatasetError("a device ended up without samples; its classes are too small")
    return part


def partition_noniid_sorted(ds: LabeledDataset, n_nodes: int) -> NodePartition:
    """Sort by (label, index) and cut into contiguous, near-equal blocks."""
    if not 1 <= n_nodes <= ds.size:
        raise DatasetError(f"n_nodes={n_nodes} must be in 1..{ds.size}")
    order = np.argsort(ds.labels, kind="stable")
    bounds = np.cumsum([0] + _even_split(ds.size, n_nodes))
    return NodePartition(tuple(order[bounds[i]:bounds[i + 1]].copy() for i in range(n_nodes)))


def default_class_weights(class_count: int) -> tuple[float, ...]:
    if class_count == 6:
        return SKEWED_WEIGHTS_6
    geo = 0.7 ** np.arange(class_count)
    return tuple((geo / geo.sum()).tolist())


def largest_remainder(weights: Sequence[float], total: int) -> list[int]:
    quotas = [w * total for w in weights]
    counts = [math.floor(q + 1e-9) for q in quotas]
    short = total - sum(counts)
    by_rem = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in by_rem[:short]:
        counts[i] += 1
    return counts


def sample_skewed_test_set(
    test: LabeledDataset, size: int, class_weights: Sequence[float] | None = None, seed: int = 0
) -> LabeledDataset:
    """Draw a probe set whose class counts follow ``class_weights``."""
    if size <= 0:
        raise DatasetError("probe set size must be positive")
    if size > test.size:
        raise DatasetError(f"size={size} exceeds the {test.size} available samples")
    w = default_class_weights(test.class_count) if class_weights is None else tuple(class_weights)
    if len(w) != test.class_count or any(x <= 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
        raise DatasetError("class_weights must be C positive values summing to 1")
    counts = largest_remainder(w, size)
    rng = np.random.default_rng(seed)
    picked = []
    for c, k in enumerate(counts):
        pool = np.flatnonzero(test.labels == c)
        if k > len(pool):
            raise DatasetError(f"class {c} needs {k} samples but only {len(pool)} exist")
        picked.append(rng.choice(pool, size=k, replace=False))
    return test.subset(np.sort(np.concatenate(picked)))
