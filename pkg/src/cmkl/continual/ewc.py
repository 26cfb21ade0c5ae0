from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from cmkl.numcore import GROUPS, NonFiniteGradient, ParamSet
from cmkl.numcore import tape as T

DEFAULT_LAMBDAS = {"structural": 10.0, "text": 5.0, "molecular": 1.0, "fusion-decoder": 5.0}
UNIFORM_LAMBDA = 10.0
EWC_MODES = ("per-group", "uniform", "off")


@dataclass
class EWCConfig:
    lambdas: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LAMBDAS))
    mode: str = "per-group"
    uniform_lambda: float = UNIFORM_LAMBDA
    # "sum": running Fisher total with one anchor; "replace": latest Fisher only;
    # "multi": one (F, theta*) pair kept per task
    accumulate: str = "sum"

    def __post_init__(self):
        if self.mode not in EWC_MODES:
            raise ValueError(f"EWC mode must be one of {EWC_MODES}, got {self.mode!r}")
        if self.accumulate not in ("sum", "replace", "multi"):
            raise ValueError(f"unknown Fisher accumulation {self.accumulate!r}")
        missing = set(GROUPS) - set(self.lambdas)
        if missing:
            raise ValueError(f"EWC lambdas missing groups: {sorted(missing)}")
        if any(v < 0 for v in self.lambdas.values()):
            raise ValueError("EWC lambdas must be nonnegative")

    def strength(self, group: str) -> float:
        if self.mode == "off":
            return 0.0
        if self.mode == "uniform":
            return self.uniform_lambda
        return self.lambdas[group]

    def scaled(self, factor: float) -> "EWCConfig":
        return EWCConfig(
            {g: v * factor for g, v in self.lambdas.items()}, self.mode, self.uniform_lambda * factor, self.accumulate
        )


@dataclass
class FisherAnchor:
    """Diagonal Fisher values and the parameter snapshot they anchor to."""

    fisher: dict[str, np.ndarray]
    theta: dict[str, np.ndarray]
    groups: dict[str, str]


def compute_fisher(params: ParamSet, batch_grads: Iterable[dict[str, np.ndarray]]) -> FisherAnchor:
    """Mean over batches of elementwise squared gradients, anchored at ``params``."""
    total = {n: np.zeros_like(v) for _, n, v in params.items()}
    count = 0
    for grads in batch_grads:
        for name in total:
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {name!r} while computing Fisher")
            total[name] += g * g
        count += 1
    if count == 0:
        raise ValueError("Fisher estimation needs at least one batch")
    fisher = {n: v / count for n, v in total.items()}
    theta = {n: v.copy() for _, n, v in params.items()}
    return FisherAnchor(fisher, theta, {n: g for g, n, _ in params.items()})


class EWCState:
    """Anchors accumulated at task boundaries."""

    def __init__(self, config: EWCConfig):
        self.config = config
        self.anchors: list[FisherAnchor] = []

    def consolidate(self, anchor: FisherAnchor) -> None:
        if self.config.accumulate == "multi" or not self.anchors:
            self.anchors.append(anchor)
            return
        prev = self.anchors[-1]
        if self.config.accumulate == "sum":
            fisher = {n: prev.fisher[n] + f for n, f in anchor.fisher.items()}
        else:
            fisher = anchor.fisher
        self.anchors[-1] = FisherAnchor(fisher, anchor.theta, anchor.groups)

    def penalty(self, params) -> T.Node:
        out = T.as_node(0.0)
        for anchor in self.anchors:
            out = out + ewc_penalty(params, anchor, self.config)
        return out


def ewc_penalty(params, anchor: FisherAnchor | None, config: EWCConfig) -> T.Node:
    """sum_k lambda_k sum_i F_i (theta_i - theta*_i)^2 over the four groups.

    ``params`` maps tensor names to arrays or tape nodes (a :class:`ParamSet` also works).
    """
    if anchor is None:
        return T.as_node(0.0)
    per_group: dict[str, T.Node] = {}
    for name, fisher in anchor.fisher.items():
        value = params[name]
        if T.as_node(value).shape != fisher.shape:
            raise ValueError(f"shape mismatch for {name}: {T.as_node(value).shape} vs anchor {fisher.shape}")
        term = T.sum_(T.square(T.as_node(value) - anchor.theta[name]) * fisher)
        group = anchor.groups[name]
        per_group[group] = term if group not in per_group else per_group[group] + term
    out = T.as_node(0.0)
    for group in GROUPS:
        lam = config.strength(group)
        if group in per_group and lam != 0.0:
            out = out + per_group[group] * lam
    return out
