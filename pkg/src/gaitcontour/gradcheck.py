"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import Tape, Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    checked: int
    tol: float
    worst: tuple | None = None
    errors: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    """|a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries meaningful."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor] | Tensor, h: float = 1e-5,
               tol: float = 1e-4, max_entries: int | None = None,
               rng: np.random.Generator | None = None, floor: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of scalar ``f()`` against central differences.

    ``f`` closes over ``inputs``; entries are perturbed in place and restored.
    With ``max_entries`` set, that many entries per input are sampled with
    ``rng`` instead of checking every coordinate.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f()
    tape.backward(out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    rng = rng or np.random.default_rng(0)
    worst, worst_at, errors, checked = 0.0, None, [], 0
    for which, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        if max_entries is None or max_entries >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = float(f().data)
                flat[i] = orig - h
                down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            err = relative_error(numeric, float(analytic[which].reshape(-1)[i]), floor)
            errors.append(err)
            checked += 1
            if err > worst:
                worst, worst_at = err, (which, int(i))
    return GradCheckReport(worst, checked, tol, worst_at, errors)
