"""Finite-difference gradient checks for every differentiable op.

Checks run in float64. Each registered case builds a scalar function of one or
more input arrays; the analytic gradient from ``backward`` is compared with a
central difference at a random subset of coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T

TOLERANCE = 1e-3


@dataclass
class CheckResult:
    name: str
    group: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def numeric_grad(f: Callable[[], float], x: np.ndarray, idx: tuple, h: float = 1e-6) -> float:
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def rel_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(
    build: Callable[[Sequence[T.Tensor]], T.Tensor],
    arrays: Sequence[np.ndarray],
    rng: np.random.Generator,
    probes: int = 12,
    h: float = 1e-6,
    floor: float = 1e-6,
) -> float:
    """Max relative error between backward() and central differences.

    ``build`` maps leaf tensors to a scalar tensor. ``arrays`` are float64 and
    are perturbed in place while probing.
    """
    leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
    # leaves alias the arrays, so perturbations are seen by build()
    loss = build(leaves)
    T.backward(loss)
    worst = 0.0

    def f() -> float:
        with T.no_grad():
            return float(build(leaves).data)

    for leaf, arr in zip(leaves, arrays):
        flat = rng.choice(arr.size, size=min(probes, arr.size), replace=False)
        for k in flat:
            idx = np.unravel_index(k, arr.shape)
            num = numeric_grad(f, arr, idx, h)
            ana = float(leaf.grad[idx])
            worst = max(worst, rel_error(num, ana, floor))
    return worst


def check_module_gradients(
    build: Callable[[], T.Tensor],
    params: Sequence[T.Parameter],
    inputs: Sequence[np.ndarray],
    input_leaves: Sequence[T.Tensor],
    rng: np.random.Generator,
    probes: int = 8,
    h: float = 1e-6,
    floor: float = 1e-6,
) -> float:
    """Like :func:`check_gradients` but for a closure over module parameters."""
    for p in params:
        p.zero_grad()
    for leaf in input_leaves:
        leaf.grad = None
    loss = build()
    T.backward(loss)
    worst = 0.0

    def f() -> float:
        with T.no_grad():
            return float(build().data)

    targets = [(p.data, p.grad) for p in params] + [(a, leaf.grad) for a, leaf in zip(inputs, input_leaves)]
    for arr, grad in targets:
        flat = rng.choice(arr.size, size=min(probes, arr.size), replace=False)
        for k in flat:
            idx = np.unravel_index(k, arr.shape)
            num = numeric_grad(f, arr, idx, h)
            worst = max(worst, rel_error(num, float(grad[idx]), floor))
    return worst


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------

REGISTRY: dict[str, tuple[str, Callable[[np.random.Generator], float]]] = {}


def register(name: str, group: str):
    def deco(fn):
        REGISTRY[name] = (group, fn)
        return fn

    return deco


def run(group: str = "all", seed: int = 0) -> list[CheckResult]:
    # import for registration side effects
    from . import _gradcases  # noqa: F401

    results = []
    for name, (g, fn) in REGISTRY.items():
        if group != "all" and g != group:
            continue
        rng = np.random.default_rng(seed)
        with T.default_dtype(np.float64):
            err = fn(rng)
        results.append(CheckResult(name, g, err))
    return results
