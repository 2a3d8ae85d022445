"""Central-difference gradient verification.

``grad_check`` compares reverse-mode gradients against (f(x+h) - f(x-h)) / 2h
per coordinate. The relative error for a coordinate is
|a - n| / max(1, |a|, |n|); a check passes when the maximum over all checked
coordinates is at or below the tolerance. Reports render as one plain-text
line: ``op=<name> max_rel_err=<value> pass=<bool>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Graph, Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    passed: bool
    worst: Optional[tuple[int, int]] = None  # (input index, flat coordinate)
    note: str = ""

    def line(self) -> str:
        return f"op={self.name} max_rel_err={self.max_rel_err:.6e} pass={self.passed}"


def grad_check(
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    name: str = "fn",
) -> GradCheckResult:
    """Check the reverse-mode gradient of a pure scalar-valued function.

    ``fn`` receives ``inputs`` (each with ``requires_grad=True``) and must
    return a scalar Tensor. It is re-evaluated with nudged coordinates, so it
    must be deterministic and must not mutate its inputs.
    """
    for t in inputs:
        t.zero_grad()
        t.requires_grad = True

    with Graph() as graph:
        out = fn(inputs)
        if out.data.size != 1:
            raise ValueError(f"grad_check: {name} must return a scalar, got shape {out.shape}")
        graph.backward(out)

    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    for t in inputs:
        t.zero_grad()

    def eval_scalar() -> float:
        return float(fn(inputs).data)

    max_err = 0.0
    worst: Optional[tuple[int, int]] = None
    for ti, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        aflat = analytic[ti].reshape(-1)
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + h
            f_plus = eval_scalar()
            flat[ci] = orig - h
            f_minus = eval_scalar()
            flat[ci] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(aflat[ci])
            if not (math.isfinite(a) and math.isfinite(numeric)):
                return GradCheckResult(
                    name, float("inf"), False, (ti, ci),
                    note=f"non-finite gradient at input {ti} coordinate {ci}",
                )
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > max_err:
                max_err = err
                worst = (ti, ci)
    return GradCheckResult(name, max_err, max_err <= tol, worst)
