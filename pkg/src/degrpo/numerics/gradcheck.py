"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tape import ParamTensor, Tape, Tensor

FD_STEP = 1e-5
# relative error switches to absolute below this magnitude, scaled by the
# largest gradient entry of the check when that exceeds 1
REL_FLOOR = 1e-6


class ContractError(ValueError):
    """A caller-supplied function broke its contract (e.g. non-scalar output)."""


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.max_rel_error.items()]
        status = "PASS" if self.passed else "FAIL"
        return f"{status} (tol={self.tol:g}, worst={self.worst:.3e})\n  " + "\n  ".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _scalar(out) -> float:
    data = out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)
    if data.size != 1:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {data.shape}")
    return float(data.reshape(()))


def grad_check(f: Callable[[], Tensor], params: Sequence[ParamTensor], tol: float = 1e-4,
               h: float = FD_STEP) -> GradCheckReport:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` takes no arguments, reads the current values of ``params`` and
    returns a scalar :class:`Tensor`.  It is re-evaluated for every
    perturbed coordinate, so keep it small.
    """
    with Tape() as tape:
        out = f()
    _scalar(out)
    for p in params:
        p.zero_grad()
    tape.backward(out)
    analytic = {id(p): p.grad.copy() for p in params}
    scale = max([1.0] + [float(np.abs(g).max()) for g in analytic.values() if g.size])

    report = GradCheckReport(tol=tol)
    for p in params:
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            f_plus = _scalar(f())
            flat[k] = orig - h
            f_minus = _scalar(f())
            flat[k] = orig
            numeric.flat[k] = (f_plus - f_minus) / (2.0 * h)
        err = relative_error(analytic[id(p)], numeric, REL_FLOOR * scale)
        report.max_rel_error[p.name] = float(err.max()) if err.size else 0.0
    return report
