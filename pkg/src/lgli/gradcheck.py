"""Finite-difference verification of recorded gradients.

Central differences on every coordinate (or a seed-controlled random
subset once an input grows past ``exhaustive_limit``) against the
engine's reverse-mode result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, backward, no_grad


@dataclass
class InputReport:
    """Per-input outcome of a gradient check."""

    index: int
    max_rel_error: float
    worst_coord: Optional[tuple]
    checked_coords: int
    passed: bool


@dataclass
class GradCheckReport:
    tol: float
    h: float
    inputs: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.inputs)

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.inputs), default=0.0)

    def __str__(self) -> str:
        lines = [f"grad_check: tol={self.tol:g} h={self.h:g} -> "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        for r in self.inputs:
            lines.append(
                f"  input[{r.index}]: max_rel_error={r.max_rel_error:.3e} "
                f"over {r.checked_coords} coords "
                f"(worst at {r.worst_coord}) {'ok' if r.passed else 'FAIL'}"
            )
        return "\n".join(lines)


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    exhaustive_limit: int = 128,
    sample_coords: int = 32,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f(*inputs)`` with central differences.

    ``f`` must be deterministic and scalar-valued.  Inputs with
    ``requires_grad`` are checked; any coordinate count above
    ``exhaustive_limit`` is subsampled to ``sample_coords`` coordinates.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    loss = f(*inputs)
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check: forward value is not finite")
    for t in inputs:
        if t.grad is not None:
            t.grad.fill(0.0)
    if loss.node is not None:
        backward(loss)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol, h=h)
    for idx, t in enumerate(inputs):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n = flat.size
        if n <= exhaustive_limit:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=min(sample_coords, n), replace=False)
        worst = 0.0
        worst_coord = None
        aflat = analytic.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            with no_grad():
                fp = f(*inputs).item()
            flat[c] = orig - h
            with no_grad():
                fm = f(*inputs).item()
            flat[c] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError("grad_check: perturbed forward value is not finite")
            numeric = (fp - fm) / (2.0 * h)
            err = _rel_error(float(aflat[c]), numeric)
            if err > worst:
                worst = err
                worst_coord = np.unravel_index(int(c), t.data.shape)
        report.inputs.append(
            InputReport(
                index=idx,
                max_rel_error=worst,
                worst_coord=worst_coord,
                checked_coords=len(coords),
                passed=worst <= tol,
            )
        )
    return report
