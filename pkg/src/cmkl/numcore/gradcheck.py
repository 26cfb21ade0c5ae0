"""Central-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from cmkl.numcore.params import ParamSet
from cmkl.numcore.tape import Node, backward


@dataclass
class TensorReport:
    name: str
    group: str
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: float
    numeric: float
    checked: int
    # coordinates where the loss has a slope discontinuity inside [x-h, x+h];
    # their errors are kept apart and do not fail the tensor
    kinks: int = 0
    kink_error: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def is_kink(minus: float, base: float, plus: float, h: float, jump_tol: float = 1e-3) -> bool:
    """One-sided slopes disagree by more than smooth curvature over 2h allows."""
    fwd, bwd = (plus - base) / h, (base - minus) / h
    return abs(fwd - bwd) > jump_tol * max(1.0, abs(fwd), abs(bwd))


def analytic_grads(loss_fn: Callable[[dict[str, Node]], Node], params: ParamSet) -> dict[str, np.ndarray]:
    leaves = params.leaves()
    loss = loss_fn(leaves)
    backward(loss)
    return {n: (np.zeros_like(params[n]) if leaves[n].grad is None else leaves[n].grad) for n in params.names()}


def grad_check(
    loss_fn: Callable[[dict[str, Node]], Node],
    params: ParamSet,
    h: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    grads: dict[str, np.ndarray] | None = None,
) -> list[TensorReport]:
    """Compare analytic gradients against (L(θ+h)-L(θ-h))/2h per tensor.

    ``loss_fn`` maps a dict of leaf nodes to a scalar node and must be
    deterministic. ``grads`` overrides the analytic gradients (used to inject a
    corrupted backward in tests). Coordinates are subsampled per tensor when
    ``max_coords`` is set. Coordinates sitting on a kink are counted in
    ``kinks`` and excluded from ``max_rel_error``.
    """
    if grads is None:
        grads = analytic_grads(loss_fn, params)
    base = float(loss_fn(params.leaves()).value)
    if not np.isfinite(base):
        raise FloatingPointError("loss is not finite at the check point")

    rng = np.random.default_rng(seed)
    reports = []
    for group, name, value in params.items():
        flat_idx = np.arange(value.size)
        if max_coords is not None and value.size > max_coords:
            flat_idx = np.sort(rng.choice(value.size, size=max_coords, replace=False))
        worst = (0.0, None, 0.0, 0.0)
        kinks, kink_error = 0, 0.0
        for fi in flat_idx:
            idx = np.unravel_index(fi, value.shape)
            orig = value[idx]
            value[idx] = orig + h
            plus = float(loss_fn(params.leaves()).value)
            value[idx] = orig - h
            minus = float(loss_fn(params.leaves()).value)
            value[idx] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}{idx}")
            numeric = (plus - minus) / (2.0 * h)
            analytic = float(grads[name][idx])
            err = relative_error(analytic, numeric)
            if is_kink(minus, base, plus, h):
                kinks += 1
                kink_error = max(kink_error, err)
                continue
            if err > worst[0] or worst[1] is None:
                worst = (err, tuple(int(i) for i in idx), analytic, numeric)
        reports.append(TensorReport(name, group, worst[0], worst[1] or (), worst[2], worst[3], len(flat_idx), kinks, kink_error))
    return reports
