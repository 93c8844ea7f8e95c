"""Central finite-difference verification of analytic gradients.

The harness perturbs leaf tensors elementwise (f(x+h) - f(x-h)) / 2h and
compares against `gradients`. It is the independent oracle for every
differentiable operation in the package and stays ignorant of how the
analytic rules are implemented.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, gradients


def finite_difference(fn, tensors, h=1e-5, samples=None, rng=None):
    """Numeric gradients of scalar fn(*tensors) wrt each tensor.

    fn must rebuild its graph from the tensors it is given on every call.
    Tensors with requires_grad=False are skipped (they carry no analytic
    gradient to compare against). When `samples` is set, only that many
    elements per tensor are probed (chosen by `rng`); unprobed entries are
    NaN in the result.
    """
    grads = []
    for ti, t in enumerate(tensors):
        base = t.data
        if not t.requires_grad:
            grads.append(np.full(base.shape, np.nan))
            continue
        if samples is None or samples >= base.size:
            positions = np.arange(base.size)
            g = np.zeros(base.size)
        else:
            positions = rng.choice(base.size, size=samples, replace=False)
            g = np.full(base.size, np.nan)
        for pos in positions:
            plus = base.copy().reshape(-1)
            plus[pos] += h
            minus = base.copy().reshape(-1)
            minus[pos] -= h
            args_p = list(tensors)
            args_m = list(tensors)
            args_p[ti] = Tensor(plus.reshape(base.shape), requires_grad=True, name=t.name)
            args_m[ti] = Tensor(minus.reshape(base.shape), requires_grad=True, name=t.name)
            fp = float(fn(*args_p).data)
            fm = float(fn(*args_m).data)
            g[pos] = (fp - fm) / (2.0 * h)
        grads.append(g.reshape(base.shape))
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, 1). The unit floor turns the
    comparison into an absolute one near zero, where central differences
    only carry ~1e-10 of signal."""
    mask = np.isfinite(numeric)
    if not mask.any():
        return 0.0
    a = analytic[mask]
    n = numeric[mask]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1.0)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(fn, tensors, h=1e-5, samples=None, rng=None) -> float:
    """Max relative error between analytic and numeric gradients of fn."""
    loss = fn(*tensors)
    analytic = gradients(loss, tensors)
    numeric = finite_difference(fn, tensors, h=h, samples=samples, rng=rng)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
