"""Collate results files into CSV tables and render summary figures."""
from __future__ import annotations

import csv
import json
import statistics
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METRIC_KEYS = ("AP", "AF", "BWT", "REM")
GROUP_KEYS = ("name", "method", "track", "fusion")


def find_results(paths: list[str | Path]) -> list[Path]:
    """Results JSON files named directly or found in the given directories."""
    found = []
    for p in map(Path, paths):
        if p.is_dir():
            found += sorted(p.glob("*.json"))
        elif p.is_file():
            found.append(p)
        else:
            raise FileNotFoundError(f"no such results file or directory: {p}")
    return found


def load_results(paths: list[Path]) -> list[dict]:
    runs = []
    for p in paths:
        data = json.loads(Path(p).read_text(encoding="utf-8"))
        if not isinstance(data, dict) or "R" not in data:
            raise ValueError(f"{p} is not a results file")
        data["_path"] = str(p)
        runs.append(data)
    return runs


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def _group(runs: list[dict]) -> dict[tuple, list[dict]]:
    groups = defaultdict(list)
    for r in runs:
        groups[tuple(r.get(k) for k in GROUP_KEYS)].append(r)
    return dict(sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0]))))


def _label(key: tuple) -> str:
    name, method, _, fusion = key
    return f"{name}/{method}" if method != "cmkl" else f"{name}/{method}[{fusion}]"


def write_runs_csv(runs: list[dict], path: Path) -> Path:
    fields = [*GROUP_KEYS, "seed", "status", *METRIC_KEYS, "forgetting", "config_hash", "file"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in runs:
            m = r.get("metrics") or {}
            forgetting = m.get("forgetting") or []
            w.writerow({
                **{k: r.get(k) for k in GROUP_KEYS},
                "seed": r.get("seed"),
                "status": r.get("status"),
                **{k: _fmt(m.get(k)) for k in METRIC_KEYS},
                "forgetting": ";".join(_fmt(f) for f in forgetting),
                "config_hash": r.get("config_hash"),
                "file": Path(r["_path"]).name,
            })
    return path


def write_summary_csv(runs: list[dict], path: Path) -> Path:
    fields = [*GROUP_KEYS, "n_runs", "n_failed"] + [f"{k}_{s}" for k in METRIC_KEYS for s in ("mean", "std")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for key, group in _group(runs).items():
            row = dict(zip(GROUP_KEYS, key))
            ok = [r for r in group if r.get("status") == "ok"]
            row["n_runs"], row["n_failed"] = len(group), len(group) - len(ok)
            for k in METRIC_KEYS:
                vals = [r["metrics"][k] for r in ok if r.get("metrics") and r["metrics"].get(k) is not None]
                row[f"{k}_mean"] = _fmt(statistics.fmean(vals)) if vals else ""
                row[f"{k}_std"] = _fmt(statistics.stdev(vals) if len(vals) > 1 else 0.0) if vals else ""
            w.writerow(row)
    return path


def _mean_matrix(group: list[dict]) -> np.ndarray | None:
    mats = [np.array([[np.nan if v is None else v for v in row] for row in r["R"]], dtype=float) for r in group if r.get("status") == "ok"]
    if not mats or len({m.shape for m in mats}) != 1:
        return None
    stack = np.stack(mats)
    out = np.full(stack.shape[1:], np.nan)
    defined = np.isfinite(stack).any(axis=0)
    out[defined] = np.nanmean(stack[:, defined], axis=0)
    return out


def plot_forgetting(groups: dict[tuple, list[dict]], path: Path) -> Path | None:
    series = {}
    for key, group in groups.items():
        rows = [r["metrics"]["forgetting"] for r in group if r.get("status") == "ok" and r.get("metrics") and r["metrics"].get("forgetting")]
        if rows and len({len(x) for x in rows}) == 1:
            series[_label(key)] = np.mean(np.array(rows, dtype=float), axis=0)
    if not series:
        return None
    n_tasks = max(len(v) for v in series.values())
    width = 0.8 / len(series)
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * n_tasks + 2), 3.5))
    for i, (label, vals) in enumerate(series.items()):
        x = np.arange(1, len(vals) + 1) + (i - (len(series) - 1) / 2) * width
        ax.bar(x, vals, width=width, label=label)
    ax.set_xlabel("task")
    ax.set_ylabel("forgetting (peak - final)")
    ax.set_xticks(range(1, n_tasks + 1))
    ax.axhline(0, color="k", lw=0.6)
    ax.legend(fontsize=7, frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_matrix(R: np.ndarray, title: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(1 + 0.8 * R.shape[1], 0.8 + 0.8 * R.shape[0]))
    im = ax.imshow(np.ma.masked_invalid(R), cmap="viridis")
    for (j, i), v in np.ndenumerate(R):
        if np.isfinite(v):
            ax.text(i, j, f"{v:.3f}", ha="center", va="center", fontsize=7, color="w")
    ax.set_xticks(range(R.shape[1]), [str(i + 1) for i in range(R.shape[1])])
    ax.set_yticks(range(R.shape[0]), [str(j + 1) for j in range(R.shape[0])])
    ax.set_xlabel("evaluated task")
    ax.set_ylabel("after training task")
    ax.set_title(title, fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_router(groups: dict[tuple, list[dict]], path: Path) -> Path | None:
    series = {}
    for key, group in groups.items():
        per_task = defaultdict(list)
        for r in group:
            for k, w in (r.get("router_weights") or {}).items():
                per_task[int(k)].append(w)
        if per_task:
            series[_label(key)] = {k: np.mean(v, axis=0) for k, v in sorted(per_task.items())}
    if not series:
        return None
    fig, axes = plt.subplots(1, len(series), figsize=(3.2 * len(series), 3.2), squeeze=False)
    colors = ("tab:blue", "tab:orange", "tab:green")
    for ax, (label, per_task) in zip(axes[0], series.items()):
        tasks = list(per_task)
        bottom = np.zeros(len(tasks))
        for m, name in enumerate(("structural", "text", "molecular")):
            vals = np.array([per_task[t][m] for t in tasks])
            ax.bar(tasks, vals, bottom=bottom, color=colors[m], label=name)
            bottom += vals
        ax.set_ylim(0, 1)
        ax.set_xticks(tasks)
        ax.set_xlabel("task")
        ax.set_title(label, fontsize=8)
    axes[0][0].set_ylabel("mean router weight")
    axes[0][-1].legend(fontsize=7, frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_=." else "_" for c in label)


def build_report(inputs: list[str | Path], out_dir: str | Path, figures: bool = True) -> list[Path]:
    """Write ``runs.csv``, ``summary.csv`` and (optionally) PNG figures; returns the written paths."""
    runs = load_results(find_results(inputs))
    if not runs:
        raise ValueError("no results files found")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [write_runs_csv(runs, out_dir / "runs.csv"), write_summary_csv(runs, out_dir / "summary.csv")]
    if figures:
        groups = _group(runs)
        for p in (plot_forgetting(groups, out_dir / "forgetting.png"), plot_router(groups, out_dir / "router_weights.png")):
            if p is not None:
                written.append(p)
        for key, group in groups.items():
            R = _mean_matrix(group)
            if R is not None and np.isfinite(R).any():
                written.append(plot_matrix(R, _label(key), out_dir / f"R__{_safe(_label(key))}.png"))
    return written
