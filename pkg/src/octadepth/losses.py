"""Training objective: segmentation MSE, region-weighted depth MSE and an
SSIM structure term, each returning its value and input gradients.

All means run over every pixel of the batch. The structure term is
``1 - mean SSIM`` so that minimising it increases similarity.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .ssim import DEFAULT_PARAMS, SSIMParams, mean_ssim_grad


@dataclass(frozen=True)
class LossWeights:
    vessel: float = 0.8
    background: float = 0.2

    def __post_init__(self):
        if self.vessel < 0 or self.background < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    l_seg: float
    l_accuracy: float
    l_structure: float
    l_total: float

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(*arrays):
    s = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != s:
            raise ValueError(f"shape mismatch {s} vs {np.shape(a)}")


def mse(pred, gt) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _same_shape(pred, gt)
    r = pred - gt
    return float(np.mean(r * r)), 2.0 * r / r.size


def loss_seg(pred_seg, gt_seg) -> tuple[float, np.ndarray]:
    return mse(pred_seg, gt_seg)


def weighted_sum(vessel_mse: float, background_mse: float, weights: LossWeights) -> float:
    return weights.vessel * vessel_mse + weights.background * background_mse


def loss_accuracy(pred_depth, gt_depth, pred_mask, gt_mask,
                  weights: LossWeights = LossWeights()):
    """Returns ``(value, d_pred_depth, d_pred_mask)``.

    The predicted regions use the soft predicted mask; the reference regions
    use the ground-truth mask.
    """
    pd = np.asarray(pred_depth, dtype=np.float64)
    gd = np.asarray(gt_depth, dtype=np.float64)
    m = np.asarray(pred_mask, dtype=np.float64)
    g = np.asarray(gt_mask, dtype=np.float64)
    _same_shape(pd, gd, m, g)
    rv = pd * m - gd * g
    rb = pd * (1.0 - m) - gd * (1.0 - g)
    n = pd.size
    value = weighted_sum(float(np.mean(rv * rv)), float(np.mean(rb * rb)), weights)
    wv, wb = 2.0 * weights.vessel / n, 2.0 * weights.background / n
    d_pd = wv * rv * m + wb * rb * (1.0 - m)
    d_m = (wv * rv - wb * rb) * pd
    return value, d_pd, d_m


def loss_structure(pred_depth, gt_depth, params: SSIMParams = DEFAULT_PARAMS):
    s, grad = mean_ssim_grad(pred_depth, gt_depth, params)
    return 1.0 - s, -grad


def loss_total(pred_depth, pred_seg, gt_depth, gt_seg,
               weights: LossWeights = LossWeights(),
               params: SSIMParams = DEFAULT_PARAMS):
    """Returns ``(LossBreakdown, d_pred_depth, d_pred_seg)``."""
    l_seg, g_seg = loss_seg(pred_seg, gt_seg)
    l_acc, g_acc_d, g_acc_m = loss_accuracy(pred_depth, gt_depth, pred_seg, gt_seg, weights)
    l_str, g_str = loss_structure(pred_depth, gt_depth, params)
    total = l_seg + l_acc + l_str
    return (LossBreakdown(l_seg, l_acc, l_str, total),
            g_acc_d + g_str, g_seg + g_acc_m)
