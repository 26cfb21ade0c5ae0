"""Parameter storage partitioned by encoder group."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from cmkl.numcore.tape import Node, leaf

GROUPS = ("structural", "text", "molecular", "fusion-decoder")

INIT_SCHEMES = ("uniform-glorot", "zeros", "ones", "normal")


@dataclass(frozen=True)
class TensorSpec:
    group: str
    name: str
    shape: tuple[int, ...]
    init: str = "uniform-glorot"
    # glorot fans; defaults to the last two axes of ``shape``
    fan_in: int | None = None
    fan_out: int | None = None
    scale: float = 1.0


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _tensor_seed(seed: int, group: str, name: str) -> np.random.SeedSequence:
    # per-tensor stream: a tensor's initial value does not depend on which
    # other tensors exist or on their creation order
    digest = hashlib.sha256(f"{group}/{name}".encode()).digest()
    return np.random.SeedSequence([seed, int.from_bytes(digest[:8], "little")])


def _init_tensor(spec: TensorSpec, seed: int) -> np.ndarray:
    if not spec.shape or any(s <= 0 for s in spec.shape):
        raise ValueError(f"{spec.group}/{spec.name}: zero-sized shape {spec.shape}")
    if spec.init == "zeros":
        return np.zeros(spec.shape)
    if spec.init == "ones":
        return np.ones(spec.shape)
    rng = np.random.default_rng(_tensor_seed(seed, spec.group, spec.name))
    if spec.init == "normal":
        return spec.scale * rng.standard_normal(spec.shape)
    if spec.init == "uniform-glorot":
        if len(spec.shape) == 1:
            fan_out, fan_in = spec.shape[0], 1
        else:
            fan_out, fan_in = spec.shape[-2], spec.shape[-1]
        fan_in = spec.fan_in or fan_in
        fan_out = spec.fan_out or fan_out
        bound = spec.scale * glorot_bound(fan_in, fan_out)
        return rng.uniform(-bound, bound, size=spec.shape)
    raise ValueError(f"unknown init scheme {spec.init!r}")


class ParamSet:
    """Named float64 tensors, each owned by exactly one of the four groups."""

    def __init__(self, tensors: dict[str, dict[str, np.ndarray]] | None = None):
        self.groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in GROUPS}
        for group, named in (tensors or {}).items():
            for name, value in named.items():
                self.add(group, name, value)

    def add(self, group: str, name: str, value: np.ndarray) -> None:
        if group not in self.groups:
            raise ValueError(f"unknown parameter group {group!r}")
        for g, named in self.groups.items():
            if name in named:
                raise ValueError(f"tensor {name!r} already registered in group {g!r}")
        self.groups[group][name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        for named in self.groups.values():
            if name in named:
                return named[name]
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(name in named for named in self.groups.values())

    def group_of(self, name: str) -> str:
        for g, named in self.groups.items():
            if name in named:
                return g
        raise KeyError(name)

    def items(self) -> Iterator[tuple[str, str, np.ndarray]]:
        for g in GROUPS:
            for name in sorted(self.groups[g]):
                yield g, name, self.groups[g][name]

    def names(self) -> list[str]:
        return [name for _, name, _ in self.items()]

    def copy(self) -> "ParamSet":
        return ParamSet({g: {n: v.copy() for n, v in named.items()} for g, named in self.groups.items()})

    def zeros_like(self) -> "ParamSet":
        return ParamSet({g: {n: np.zeros_like(v) for n, v in named.items()} for g, named in self.groups.items()})

    def leaves(self) -> dict[str, Node]:
        """Fresh differentiable leaves for one forward/backward pass."""
        return {name: leaf(value) for _, name, value in self.items()}

    def num_values(self) -> int:
        return sum(v.size for _, _, v in self.items())

    def allclose(self, other: "ParamSet", atol: float = 0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(np.allclose(v, other[n], rtol=0.0, atol=atol) for _, n, v in self.items())


def init_params(specs: list[TensorSpec], seed: int) -> ParamSet:
    params = ParamSet()
    for spec in specs:
        params.add(spec.group, spec.name, _init_tensor(spec, seed))
    return params


def grads_from_leaves(params: ParamSet, leaves: dict[str, Node]) -> dict[str, np.ndarray]:
    """Collect leaf gradients, substituting zeros for tensors the loss never touched."""
    out = {}
    for _, name, value in params.items():
        g = leaves[name].grad
        out[name] = np.zeros_like(value) if g is None else g
    return out
