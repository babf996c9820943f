"""Central-difference verification of reverse-mode gradients."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .autograd import Tensor


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)
    eps: float = 1e-5
    tol: float = 1e-4
    passed: bool = True

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def to_table(self):
        width = max([len(k) for k in self.errors] + [9])
        lines = [f"{'parameter':<{width}}  max_rel_err  ok", "-" * (width + 17)]
        for name, err in self.errors.items():
            lines.append(f"{name:<{width}}  {err:11.3e}  {'yes' if err < self.tol else 'NO'}")
        lines.append(f"eps={self.eps:g} tol={self.tol:g} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def relative_error(g_ad, g_fd):
    return np.abs(g_ad - g_fd) / np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))


def grad_check(f, params, eps=1e-5, tol=1e-4, names=None):
    """Compare reverse-mode gradients of ``f`` with central differences.

    ``f`` maps a dict of name -> Tensor to a scalar Tensor. ``params`` is a dict
    of name -> float64 array; it is not modified. ``names`` restricts which
    entries are perturbed (all by default).
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    names = list(base) if names is None else list(names)

    leaves = {k: Tensor(v.copy(), requires_grad=k in names) for k, v in base.items()}
    out = f(leaves)
    if not np.isfinite(out.data).all():
        raise NumericError("function value is not finite")
    out.backward()

    def value(arrays):
        v = f({k: Tensor(a) for k, a in arrays.items()}).data
        if not np.isfinite(v).all():
            raise NumericError("function value is not finite under perturbation")
        return float(v)

    report = GradCheckReport(eps=eps, tol=tol)
    for name in names:
        g_ad = leaves[name].grad
        if g_ad is None:
            g_ad = np.zeros_like(base[name])
        g_fd = np.zeros_like(base[name])
        work = dict(base)
        arr = base[name].copy()
        work[name] = arr
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            fp = value(work)
            arr[idx] = orig - eps
            fm = value(work)
            arr[idx] = orig
            g_fd[idx] = (fp - fm) / (2 * eps)
        err = relative_error(g_ad, g_fd)
        report.errors[name] = float(err.max()) if err.size else 0.0
    report.passed = report.max_error < tol
    return report
