"""Central finite-difference oracle for analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NumGraphError, backward


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: int
    worst_index: int
    n_checked: int
    tol: float
    n_refined: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def rel_err(a, n):
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def _diffs(f, flat, j, h):
    orig = flat[j]
    flat[j] = orig + h
    fp = float(f().value)
    flat[j] = orig - h
    fm = float(f().value)
    flat[j] = orig
    return fp, fm


def grad_check(f, params, step=1e-4, tol=1e-6, refine_kinks=True) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` with central differences.

    ``f`` must rebuild its graph from ``params`` on every call.  Each entry of
    every parameter is perturbed by +/- ``step`` in place and restored.

    Piecewise-smooth graphs (max, relu) can switch branch inside the +/- step
    window, which breaks the central difference even though the analytic
    gradient is exact.  With ``refine_kinks`` an entry that fails at ``step``
    and whose one-sided differences disagree is re-measured at step/10,
    step/100, ... down to 1e-6; the smallest error seen is kept.
    """
    if not 1e-6 <= step <= 1e-3:
        raise ValueError("step must lie in [1e-6, 1e-3]")
    for p in params:
        p.zero_grad()
    out = f()
    backward(out)
    f0 = float(out.value)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    worst = (0.0, -1, -1)
    count = refined = 0
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        ana = analytic[pi].reshape(-1)
        errs = np.empty(flat.size)
        for j in range(flat.size):
            fp, fm = _diffs(f, flat, j, step)
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumGraphError(f"non-finite perturbation result at param {pi}, entry {j}")
            err = float(rel_err(ana[j], (fp - fm) / (2.0 * step)))
            h = step
            kink = float(rel_err((fp - f0) / h, (f0 - fm) / h)) > tol
            if refine_kinks and err >= tol and kink:
                refined += 1
                while err >= tol and h / 10 >= 1e-6 * (1 - 1e-9):
                    h /= 10
                    fp, fm = _diffs(f, flat, j, h)
                    err = min(err, float(rel_err(ana[j], (fp - fm) / (2.0 * h))))
            errs[j] = err
        count += flat.size
        if errs.size and errs.max() > worst[0]:
            j = int(errs.argmax())
            worst = (float(errs[j]), pi, j)
    return GradCheckReport(worst[0], worst[1], worst[2], count, tol, refined)
