"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..losses import LossWeights, loss_total
from .network import ScNetParams, forward

# below this magnitude both gradients count as zero and the error is absolute
GRAD_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    n_checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic, numeric, floor: float = GRAD_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_gradients(loss_fn, params: dict, analytic: dict, eps: float = 1e-5,
                    names=None) -> GradCheckResult:
    """Compare ``analytic`` against central differences of ``loss_fn(params)``.

    ``loss_fn`` takes a dict of arrays and returns a scalar; arrays in
    ``params`` are perturbed in place and restored.
    """
    worst = (0.0, "", (), 0)
    count = 0
    for name in names or list(params):
        p = params[name]
        if p.dtype != np.float64:
            raise TypeError("gradient checks need double precision")
        num = np.empty_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = loss_fn(params)
            flat[i] = old - eps
            fm = loss_fn(params)
            flat[i] = old
            num.reshape(-1)[i] = (fp - fm) / (2 * eps)
        err = relative_error(analytic[name], num)
        count += err.size
        j = int(np.argmax(err))
        if err.size and err.reshape(-1)[j] > worst[0]:
            worst = (float(err.reshape(-1)[j]), name, np.unravel_index(j, p.shape), 0)
    return GradCheckResult(worst[0], worst[1], tuple(int(i) for i in worst[2]), count)


def gradient_check(params: ScNetParams, x, gt_depth, gt_seg, eps: float = 1e-5,
                   weights: LossWeights = LossWeights(), names=None) -> GradCheckResult:
    """Worst relative error of the analytic L_total parameter gradients."""
    params = params.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)

    def total(w):
        p = ScNetParams(params.topology, w, params.running)
        d, s, _ = forward(p, x, train=True)
        return loss_total(d, s, gt_depth, gt_seg, weights)[0].l_total

    d, s, trace = forward(params, x, train=True)
    _, gd, gs = loss_total(d, s, gt_depth, gt_seg, weights)
    analytic = trace.backward(gd, gs)
    return check_gradients(total, params.weights, analytic, eps, names)
