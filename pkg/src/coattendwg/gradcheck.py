"""Central finite-difference check of tape gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, backward, no_tape, restore_tape


@dataclass
class ParamCheck:
    name: str
    size: int
    max_rel_err: float
    worst_index: tuple
    analytic: float
    numeric: float


@dataclass
class GradcheckReport:
    checks: list[ParamCheck] = field(default_factory=list)
    tol: float = 1e-4

    @property
    def max_rel_err(self) -> float:
        return max((c.max_rel_err for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return all(c.max_rel_err < self.tol for c in self.checks)

    def failures(self) -> list[ParamCheck]:
        return [c for c in self.checks if c.max_rel_err >= self.tol]

    def format(self) -> str:
        width = max((len(c.name) for c in self.checks), default=4)
        lines = [f"{'param':<{width}}  {'size':>6}  {'max_rel_err':>12}"]
        for c in self.checks:
            flag = "" if c.max_rel_err < self.tol else "  FAIL"
            lines.append(f"{c.name:<{width}}  {c.size:>6}  {c.max_rel_err:12.3e}{flag}")
        lines.append(f"overall max rel err {self.max_rel_err:.3e} (tol {self.tol:g})")
        return "\n".join(lines)


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def gradcheck(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradcheckReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` must be deterministic and read the parameter tensors in ``params``
    on every call; each scalar entry is perturbed in place by ``+-h`` and then
    restored exactly.

    Raises:
        ValueError: if ``h`` is not positive.
        FloatingPointError: if any evaluation of ``f`` is non-finite.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    for p in params.values():
        p.requires_grad = True
    with Tape() as tape:
        loss = f()
    backward(loss, tape, leaves=params.values())

    def evaluate() -> float:
        token = no_tape()
        try:
            value = f().item()
        finally:
            restore_tape(token)
        if not math.isfinite(value):
            raise FloatingPointError("non-finite loss during finite differencing")
        return value

    report = GradcheckReport(tol=tol)
    for name, p in params.items():
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        analytic = p.grad.reshape(-1)
        worst = ParamCheck(name, flat.size, 0.0, (), 0.0, 0.0)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate()
            flat[i] = orig - h
            down = evaluate()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = relative_error(analytic[i], numeric)
            if err > worst.max_rel_err or not worst.worst_index:
                worst = ParamCheck(
                    name,
                    flat.size,
                    err,
                    np.unravel_index(i, p.shape),
                    float(analytic[i]),
                    numeric,
                )
        report.checks.append(worst)
    return report
