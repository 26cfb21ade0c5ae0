"""Sweep runner: cartesian product of config axes, each cell run across all seeds."""
from __future__ import annotations

import csv
import itertools
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

from cmkl.harness.config import ConfigError, ExperimentConfig, config_from_dict, load_config, with_overrides
from cmkl.harness.training import run_sequence

log = logging.getLogger(__name__)

METRIC_KEYS = ("AP", "AF", "BWT", "REM")

# short axis names; any other axis must be a dotted config key
_ALIASES = {
    "buffer_size": "cl.buffer_size",
    "fusion": "model.fusion",
    "method": "method",
    "alpha_text": "model.alpha_text",
    "alpha": "cl.alpha",
    "ewc_mode": "cl.ewc_mode",
}
_FUSION_ALIASES = {"score-fusion": "score"}


def cell_overrides(cfg: ExperimentConfig, cell: dict[str, Any]) -> dict[str, Any]:
    """Dotted overrides realising one sweep cell on top of ``cfg``."""
    out: dict[str, Any] = {}
    for axis, value in cell.items():
        if axis == "lambda_scale":
            scale = float(value)
            out["cl.lambdas"] = {g: lam * scale for g, lam in cfg.cl.lambdas.items()}
            out["cl.uniform_lambda"] = cfg.cl.uniform_lambda * scale
        elif axis in _ALIASES:
            if axis == "fusion":
                value = _FUSION_ALIASES.get(value, value)
            out[_ALIASES[axis]] = value
        elif "." in axis:
            out[axis] = value
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}")
    return out


def cell_name(base: str, cell: dict[str, Any]) -> str:
    parts = [f"{k.split('.')[-1]}={v}" for k, v in cell.items()]
    return "__".join([base, *parts]).replace("/", "-").replace(" ", "")


@dataclass
class Cell:
    params: dict[str, Any]
    runs: list[dict] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.errors)

    def summary(self, key: str) -> tuple[float | None, float | None]:
        vals = [r[key] for r in self.runs if r.get(key) is not None]
        if not vals:
            return None, None
        sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return statistics.fmean(vals), sd


@dataclass
class MatrixReport:
    axes: list[str]
    cells: list[Cell]

    @property
    def n_runs(self) -> int:
        return sum(len(c.runs) + len(c.errors) for c in self.cells)

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for c in self.cells:
            row: dict[str, Any] = {a: c.params[a] for a in self.axes}
            row["status"] = "failed" if c.failed else "ok"
            row["n_ok"] = len(c.runs)
            for key in METRIC_KEYS:
                mean, sd = c.summary(key)
                row[f"{key}_mean"] = "" if mean is None else f"{mean:.6f}"
                row[f"{key}_std"] = "" if sd is None else f"{sd:.6f}"
            row["error"] = "; ".join(c.errors)
            out.append(row)
        return out

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = self.rows()
        fields = [*self.axes, "status", "n_ok"]
        fields += [f"{k}_{s}" for k in METRIC_KEYS for s in ("mean", "std")] + ["error"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)
        return path


RunFn = Callable[[ExperimentConfig, int, "str | Path | None"], Any]


def _default_run(cfg: ExperimentConfig, seed: int, out_dir) -> dict:
    return run_sequence(cfg, seed, out_dir=out_dir).payload


def run_matrix(
    base: ExperimentConfig,
    axes: dict[str, list],
    seeds: list[int] | None = None,
    out_dir: str | Path | None = None,
    run_fn: RunFn | None = None,
) -> MatrixReport:
    """Run every cell of the sweep across ``seeds``; a failing run marks its cell and the sweep continues.

    ``run_fn(cfg, seed, out_dir)`` must return a results payload (a dict with a ``metrics``
    mapping); the default trains with :func:`run_sequence`.
    """
    run_fn = run_fn or _default_run
    seeds = list(seeds or base.seeds)
    names = list(axes)
    cells = []
    for values in itertools.product(*(axes[a] for a in names)):
        params = dict(zip(names, values))
        cell = Cell(params)
        cells.append(cell)
        try:
            ov = cell_overrides(base, params)
            ov["name"] = cell_name(base.name, params)
            cfg = with_overrides(base, ov)
        except ConfigError as exc:
            cell.errors.append(f"config: {exc}")
            log.warning("cell %s invalid: %s", params, exc)
            continue
        for seed in seeds:
            try:
                payload = run_fn(cfg, seed, out_dir)
                cell.runs.append(dict(payload.get("metrics") or {}))
            except Exception as exc:  # noqa: BLE001 -- isolate the cell
                cell.errors.append(f"seed {seed}: {exc!r}")
                log.warning("cell %s seed %d failed: %r", params, seed, exc)
    return MatrixReport(names, cells)


def load_sweep(path: str | Path) -> tuple[ExperimentConfig, dict[str, list], list[int] | None]:
    """Read a sweep file: ``base`` (config path, relative to the sweep file) or inline ``config``,
    a ``sweep`` mapping of axis -> values, and optional ``seeds``."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read sweep {path}: {exc}") from None
    if not isinstance(raw, dict) or not isinstance(raw.get("sweep"), dict) or not raw["sweep"]:
        raise ConfigError(f"{path}: needs a non-empty 'sweep' mapping")
    unknown = set(raw) - {"base", "config", "sweep", "seeds"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    if "base" in raw:
        base = load_config(path.parent / raw["base"])
    else:
        base = config_from_dict(raw.get("config") or {})
    axes = {}
    for axis, values in raw["sweep"].items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{path}: sweep axis {axis!r} needs a non-empty list")
        axes[str(axis)] = values
    seeds = [int(s) for s in raw["seeds"]] if raw.get("seeds") else None
    return base, axes, seeds
