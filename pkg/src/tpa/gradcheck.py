"""Central-difference gradient verification."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .autodiff import Tape, Tensor, no_grad

FD_STEP = 1e-5


@dataclass
class GradCheckResult:
    passed: bool
    max_rel_error: float
    checked: int
    excluded: int
    errors: np.ndarray = field(repr=False, default=None)


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray, tol: float = 1e-4,
               h: float = FD_STEP, components: Optional[np.ndarray] = None,
               kink_tol: float = 1e-2) -> GradCheckResult:
    """Compare reverse-mode gradients of scalar ``f`` at ``x`` with central differences.

    Per-component error is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``.
    A component is excluded when its one-sided differences disagree by more
    than ``kink_tol`` (relative), which is how relu/hinge/max kinks show up.
    ``components`` restricts the check to a subset of flat indices.
    """
    x = np.array(x, dtype=np.float64)
    xt = Tensor(x, requires_grad=True)
    with Tape() as tape:
        y = f(xt)
        if not np.all(np.isfinite(y.data)):
            raise FloatingPointError("non-finite function value")
        tape.backward(y)
    g_ad = xt.grad.reshape(-1)

    def value(v: np.ndarray) -> float:
        with no_grad():
            out = f(Tensor(v.reshape(x.shape))).data
        val = float(np.asarray(out).reshape(-1)[0])
        if not np.isfinite(val):
            raise FloatingPointError("non-finite function value")
        return val

    flat = x.reshape(-1)
    idx = np.arange(flat.size) if components is None else np.asarray(components)
    f0 = value(flat)
    errors = np.full(flat.size, np.nan)
    excluded = 0
    for i in idx:
        xp = flat.copy()
        xp[i] += h
        xm = flat.copy()
        xm[i] -= h
        fp, fm = value(xp), value(xm)
        fwd = (fp - f0) / h
        bwd = (f0 - fm) / h
        fd = (fp - fm) / (2 * h)
        if abs(fwd - bwd) > kink_tol * max(1.0, abs(fd)):
            excluded += 1
            continue
        errors[i] = abs(g_ad[i] - fd) / max(1.0, abs(g_ad[i]), abs(fd))
    checked = int(np.sum(~np.isnan(errors)))
    max_err = float(np.nanmax(errors)) if checked else 0.0
    return GradCheckResult(max_err <= tol, max_err, checked, excluded, errors.reshape(x.shape))
