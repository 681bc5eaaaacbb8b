"""Depth-map and point-cloud evaluation metrics.

Depth metrics are computed over pixels that are valid in the ground truth and
have ground-truth depth above ``EPS`` (ratios are undefined at zero depth).
An optional extra mask restricts the domain further, e.g. to vessel pixels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .raster import DepthMap
from .spatial import KDTree
from .ssim import DEFAULT_PARAMS, SSIMParams, mean_ssim

EPS = 1e-6
THRESHOLDS = (1.25, 1.25**2, 1.25**3)


class UndefinedMetricError(ValueError):
    """No pixels or points to evaluate."""


@dataclass
class DepthMetricReport:
    acc_delta1: float
    acc_delta2: float
    acc_delta3: float
    ard: float
    rmse: float
    ssim: float | None
    n_pixels: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CloudMetricReport:
    chamfer: float
    hausdorff: float
    n_pred: int
    n_gt: int
    units: str = "mm"

    def to_dict(self) -> dict:
        return asdict(self)


def _unpack(d):
    if isinstance(d, DepthMap):
        return d.image.data, d.valid.bits.astype(bool)
    a = np.asarray(getattr(d, "data", d), dtype=np.float64)
    return a, np.ones(a.shape, bool)


def evaluation_pixels(pred, gt, mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Flattened (pred, gt) values over the evaluation domain."""
    p, _ = _unpack(pred)
    g, gvalid = _unpack(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    sel = gvalid & (g > EPS)
    if mask is not None:
        m = np.asarray(getattr(mask, "bits", mask))
        if m.shape != g.shape:
            raise ValueError("mask shape differs from depth maps")
        sel &= m.astype(bool)
    if not sel.any():
        raise UndefinedMetricError("no evaluable pixels")
    return p[sel], g[sel]


def delta_accuracy(pred, gt, threshold: float = 1.25, mask=None) -> float:
    p, g = evaluation_pixels(pred, gt, mask)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(p / g, g / p)
    return float(np.mean(ratio < threshold))


def ard(pred, gt, mask=None) -> float:
    p, g = evaluation_pixels(pred, gt, mask)
    return float(np.mean(np.abs(p - g) / g))


def rmse(pred, gt, mask=None) -> float:
    p, g = evaluation_pixels(pred, gt, mask)
    return float(np.sqrt(np.mean((p - g) ** 2)))


def depth_report(pred, gt, mask=None, params: SSIMParams = DEFAULT_PARAMS) -> DepthMetricReport:
    p, g = evaluation_pixels(pred, gt, mask)
    accs = [delta_accuracy(pred, gt, t, mask) for t in THRESHOLDS]
    pa, ga = _unpack(pred)[0], _unpack(gt)[0]
    ssim = None
    if min(pa.shape) >= params.window:
        ssim = mean_ssim(pa, ga, params)
    return DepthMetricReport(
        acc_delta1=accs[0], acc_delta2=accs[1], acc_delta3=accs[2],
        ard=ard(pred, gt, mask), rmse=rmse(pred, gt, mask), ssim=ssim,
        n_pixels=int(p.size),
    )


# ---------------------------------------------------------------------------
# Point sets
# ---------------------------------------------------------------------------


def _points(a) -> np.ndarray:
    a = np.asarray(getattr(a, "points", a), dtype=np.float64).reshape(-1, 3)
    if len(a) == 0:
        raise UndefinedMetricError("empty point set")
    return a


def nn_distances(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbour distances A->B and B->A via the KD-tree."""
    a, b = _points(a), _points(b)
    return KDTree(b).query(a)[0], KDTree(a).query(b)[0]


def chamfer_from_nn(d_ab: np.ndarray, d_ba: np.ndarray) -> float:
    return float(0.5 * (np.mean(d_ab) + np.mean(d_ba)))


def hausdorff_from_nn(d_ab: np.ndarray, d_ba: np.ndarray) -> float:
    return float(max(np.max(d_ab), np.max(d_ba)))


def chamfer(a, b) -> float:
    """Symmetric mean of mean nearest-neighbour Euclidean distances."""
    return chamfer_from_nn(*nn_distances(a, b))


def hausdorff(a, b) -> float:
    return hausdorff_from_nn(*nn_distances(a, b))


def cloud_report(pred, gt, units: str = "mm", scale: float = 1.0) -> CloudMetricReport:
    """CD/HD of ``pred`` against ``gt``; distances are divided by ``scale``."""
    d_ab, d_ba = nn_distances(pred, gt)
    return CloudMetricReport(
        chamfer=chamfer_from_nn(d_ab, d_ba) / scale,
        hausdorff=hausdorff_from_nn(d_ab, d_ba) / scale,
        n_pred=len(d_ab), n_gt=len(d_ba), units=units,
    )
