import numpy as np
import pytest

from etreelearn.dataset import LabeledDataset

ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]
PENDIGITS = ROOT / "data" / "pendigits"


def blobs(n_per_class=30, classes=3, features=4, seed=0, spread=0.3):
    """Well separated Gaussian clusters, one per class."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 2, size=(classes, features))
    X = np.concatenate([c + spread * rng.normal(size=(n_per_class, features)) for c in centers])
    y = np.repeat(np.arange(classes), n_per_class)
    return LabeledDataset(X, y, classes)


def floyd_warshall(n, edges):
    inf = float("inf")
    d = [[0.0 if i == j else inf for j in range(n)] for i in range(n)]
    for u, v, w in edges:
        if w < d[u][v]:
            d[u][v] = d[v][u] = w
    for k in range(n):
        for i in range(n):
            dik = d[i][k]
            for j in range(n):
                if dik + d[k][j] < d[i][j]:
                    d[i][j] = dik + d[k][j]
    return d


@pytest.fixture
def toy():
    return blobs()


def finite_difference_gradient(m, X, y, h=1e-5):
    """Central differences of the mean cross-entropy, entry by entry."""
    from etreelearn.model import ModelParams, loss

    def at(W, b):
        return loss(ModelParams(W, b), X, y)

    gW = np.zeros_like(m.weights)
    gb = np.zeros_like(m.bias)
    for idx in np.ndindex(*m.weights.shape):
        Wp, Wm = m.weights.copy(), m.weights.copy()
        Wp[idx] += h
        Wm[idx] -= h
        gW[idx] = (at(Wp, m.bias) - at(Wm, m.bias)) / (2 * h)
    for j in range(len(m.bias)):
        bp, bm = m.bias.copy(), m.bias.copy()
        bp[j] += h
        bm[j] -= h
        gb[j] = (at(m.weights, bp) - at(m.weights, bm)) / (2 * h)
    return gW, gb


def max_relative_error(a, b, floor=1e-7):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor)))


def gradient_check_instances(count=100, seed=0):
    """Random (model, X, y) triples with 2-5 classes and 1-6 features."""
    rng = np.random.default_rng(seed)
    from etreelearn.model import ModelParams

    for _ in range(count):
        C, F, S = rng.integers(2, 6), rng.integers(1, 7), rng.integers(1, 12)
        m = ModelParams(rng.normal(size=(C, F)), rng.normal(size=C))
        yield m, rng.normal(size=(S, F)), rng.integers(0, C, size=S)


TINY_YAML = """\
name: tiny
dataset:
  root: data
  train: train.csv
  test: test.csv
  feature_count: 4
distribution:
  kind: noniid-k
  classes_per_node: 2
topology:
  kind: random
  nodes: 12
  links: 20
  delay_mean_ms: 20
  delay_std_ms: 10
tree:
  layer_ks: [3]
  frequencies: [2]
  delta_sweep: [0.05, 0.1]
  pretrain_rounds: 2
  probe_size: 40
train:
  learning_rate: 0.1
  batch_size: 5
sim:
  budget_ms: 2000
  compute_time_ms: 50
seeds: [1, 2]
output_dir: out
"""


@pytest.fixture
def tiny_experiment(tmp_path):
    """A config file over small synthetic CSVs; returns its path."""
    from etreelearn.dataset import write_csv_dataset

    (tmp_path / "data").mkdir()
    write_csv_dataset(blobs(40, 3, 4, seed=0), tmp_path / "data" / "train.csv")
    write_csv_dataset(blobs(20, 3, 4, seed=0), tmp_path / "data" / "test.csv")
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY_YAML)
    return path


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
