"""Convergence figures drawn from the per-run CSV files (optional; the CSVs are the record)."""
from __future__ import annotations

import re
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sim import MetricsLog  # noqa: E402

_RUN_FILE = re.compile(r"^(?P<protocol>[\w-]+?)_(?P<dist>[\w-]+)_(?P<seed>\d+)\.csv$")


def collect_runs(out_dir: str | Path) -> dict[tuple[str, str], dict[int, MetricsLog]]:
    """Group ``{protocol}_{distribution}_{seed}.csv`` files by (protocol, distribution)."""
    runs: dict[tuple[str, str], dict[int, MetricsLog]] = defaultdict(dict)
    for path in sorted(Path(out_dir).glob("*.csv")):
        m = _RUN_FILE.match(path.name)
        if not m or path.stem.endswith("summary"):
            continue
        runs[(m["protocol"], m["dist"])][int(m["seed"])] = MetricsLog.read_csv(path, m["protocol"])
    return dict(runs)


def plot_convergence(out_dir: str | Path, fig_dir: str | Path | None = None) -> list[Path]:
    """One accuracy-versus-simulated-time figure per distribution, one line per protocol and seed."""
    runs = collect_runs(out_dir)
    fig_dir = Path(fig_dir or out_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for dist in sorted({d for _, d in runs}):
        fig, (ax_t, ax_h) = plt.subplots(1, 2, figsize=(11, 4))
        for (proto, d), by_seed in sorted(runs.items()):
            if d != dist:
                continue
            for i, (seed, lg) in enumerate(sorted(by_seed.items())):
                t = [r.sim_time_ms / 1000 for r in lg.records]
                label = proto if i == 0 else None
                color = f"C{sorted(p for p, dd in runs if dd == dist).index(proto) % 10}"
                ax_t.plot(t, [r.accuracy for r in lg.records], color=color, alpha=0.8, label=label)
                ax_h.plot(t, [r.cum_hops for r in lg.records], color=color, alpha=0.8, label=label)
        ax_t.set(xlabel="simulated time (s)", ylabel="test accuracy", title=f"accuracy, {dist}")
        ax_h.set(xlabel="simulated time (s)", ylabel="cumulative hops", title=f"communication, {dist}")
        for ax in (ax_t, ax_h):
            ax.grid(alpha=0.3)
            ax.legend(fontsize=8)
        fig.tight_layout()
        target = fig_dir / f"convergence_{dist}.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        written.append(target)
    return written
