"""Phantom datasets on disk, the toy training loop and held-out evaluation."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .metrics import ard, depth_report, rmse
from .phantom import PhantomConfig, make_sample
from .ssim import mean_ssim
from .raster import (BinaryMask, DepthMap, Image2D, load_pfm, load_pgm, save_mask_pgm,
                     save_pfm, save_pgm)
from .recon3d import PointCloud3, encode_ply
from .scnet import Topology, adam_step, forward, init_params, update_running_stats
from .scnet.optim import AdamState

log = logging.getLogger(__name__)

TOY_PHANTOM = PhantomConfig(canvas=(64, 64), radius_root=2.5, depth_levels=3)


@dataclass(frozen=True)
class TrainConfig:
    levels: int = 4
    base_width: int = 8
    steps: int = 200
    batch: int = 4
    lr: float = 1e-3
    train_fraction: float = 0.7
    weights: losses.LossWeights = field(default_factory=losses.LossWeights)

    def __post_init__(self):
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be at least 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")

    @property
    def topology(self) -> Topology:
        return Topology(self.levels, self.base_width, 1)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    angio: np.ndarray  # (n, 1, h, w)
    depth: np.ndarray  # (n, 1, h, w)
    seg: np.ndarray  # (n, 1, h, w)
    names: list

    def __len__(self):
        return len(self.names)

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset(self.angio[idx], self.depth[idx], self.seg[idx],
                       [self.names[i] for i in idx])


# ---------------------------------------------------------------------------
# Dataset files
# ---------------------------------------------------------------------------


def sample_paths(root, name: str) -> dict:
    root = Path(root)
    return {"angio": root / f"{name}_angio.pgm", "depth": root / f"{name}_depth.pfm",
            "seg": root / f"{name}_seg.pgm", "cloud": root / f"{name}_centerline.ply",
            "meta": root / f"{name}_meta.json"}


def write_dataset(root, n: int, seed: int, config: PhantomConfig = TOY_PHANTOM,
                  noise_level: float = 0.05) -> list[Path]:
    """Write ``n`` phantom quadruplets (each with its own ``_meta.json``) plus
    a ``meta.json`` index; sample ``i`` uses seed ``seed + i``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    written, names = [], []
    for i in range(n):
        name = f"{i:04d}"
        smp = make_sample(seed + i, config, noise_level)
        p = sample_paths(root, name)
        save_pgm(smp.angiogram, p["angio"])
        save_pfm(smp.depth_gt.image, p["depth"])
        save_mask_pgm(smp.seg_gt, p["seg"])
        p["cloud"].write_bytes(encode_ply(PointCloud3(smp.centerline_gt)))
        p["meta"].write_text(json.dumps(
            {"seed": seed + i, "phantom": config.to_dict(), "noise_level": noise_level,
             "mm_per_px": smp.mm_per_px, "mm_per_depth": smp.mm_per_depth},
            indent=2, sort_keys=True) + "\n")
        written += [p["angio"], p["depth"], p["seg"], p["cloud"], p["meta"]]
        names.append(name)
    meta = {"n": n, "seed": seed, "noise_level": noise_level,
            "phantom": config.to_dict(), "samples": names,
            "mm_per_px": smp.mm_per_px, "mm_per_depth": smp.mm_per_depth}
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(root / "meta.json")
    return written


def load_dataset(root) -> Dataset:
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"no dataset at {root} (meta.json missing)")
    names = json.loads(meta_path.read_text())["samples"]
    a, d, s = [], [], []
    for name in names:
        p = sample_paths(root, name)
        a.append(load_pgm(p["angio"]).data)
        d.append(load_pfm(p["depth"]).data)
        s.append((load_pgm(p["seg"]).data > 0.5).astype(np.float64))
    stack = lambda xs: np.stack(xs)[:, None].astype(np.float32)  # noqa: E731
    return Dataset(stack(a), stack(d), stack(s), names)


def split(n: int, train_fraction: float = 0.7) -> tuple[list[int], list[int]]:
    """First ``round(n * fraction)`` samples train, the rest test; both non-empty."""
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    k = min(max(int(round(n * train_fraction)), 1), n - 1)
    return list(range(k)), list(range(k, n))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def batch_loss(params, data: Dataset, weights: losses.LossWeights, train: bool = True):
    pd, ps, _ = forward(params, data.angio, train=train)
    br, _, _ = losses.loss_total(pd.astype(np.float64), ps.astype(np.float64),
                                 data.depth.astype(np.float64), data.seg.astype(np.float64),
                                 weights)
    return br


@dataclass
class TrainResult:
    params: object
    log: list
    initial: losses.LossBreakdown
    final: losses.LossBreakdown


def train(data: Dataset, cfg: TrainConfig = TrainConfig(), seed: int = 0) -> TrainResult:
    """Adam on mini-batches drawn with ``default_rng(seed)``. Initial and final
    losses are measured on the whole training set with batch statistics."""
    params = init_params(cfg.topology, seed)
    rng = np.random.default_rng([seed, 2])
    initial = batch_loss(params, data, cfg.weights)
    state = AdamState()
    records = []
    n = len(data)
    for step in range(1, cfg.steps + 1):
        idx = rng.choice(n, size=min(cfg.batch, n), replace=False)
        b = data.subset(sorted(idx.tolist()))
        pd, ps, trace = forward(params, b.angio, train=True)
        br, gd, gs = losses.loss_total(pd.astype(np.float64), ps.astype(np.float64),
                                       b.depth.astype(np.float64), b.seg.astype(np.float64),
                                       cfg.weights)
        grads = trace.backward(gd.astype(pd.dtype), gs.astype(ps.dtype))
        params.weights = adam_step(params.weights, grads, state, lr=cfg.lr)
        update_running_stats(params, trace)
        records.append({"step": step, **br.to_dict()})
        if step % 20 == 0 or step == cfg.steps:
            log.info("step %d l_total %.5f", step, br.l_total)
    final = batch_loss(params, data, cfg.weights)
    return TrainResult(params, records, initial, final)


def predict(params, angio) -> tuple[np.ndarray, np.ndarray]:
    """Inference with running statistics. ``angio`` is ``(h, w)`` or ``(n, 1, h, w)``."""
    x = np.asarray(angio, dtype=np.float32)
    single = x.ndim == 2
    if single:
        x = x[None, None]
    pd, ps, _ = forward(params, x, train=False)
    pd, ps = pd.astype(np.float64), ps.astype(np.float64)
    return (pd[0, 0], ps[0, 0]) if single else (pd, ps)


def baseline_depth(data: Dataset) -> float:
    """Mean ground-truth depth over vessel pixels of ``data``."""
    return float(data.depth[data.seg > 0.5].mean())


def evaluate(params, test: Dataset, baseline: float) -> dict:
    """Vessel-pixel ARD/RMSE of the network and of a constant baseline, pooled
    over all test images."""
    pd, _ = predict(params, test.angio)
    gt = test.depth[:, 0].astype(np.float64)
    valid = (test.seg[:, 0] > 0.5).astype(np.uint8)
    flat = lambda a: a.reshape(-1, a.shape[-1])  # noqa: E731
    g = DepthMap(Image2D(flat(gt)), BinaryMask(flat(valid)))
    p = Image2D(flat(pd[:, 0]))
    c = Image2D(np.full_like(flat(gt), baseline))
    rep = depth_report(p, g)
    # SSIM per image: a window must not straddle two stacked images
    rep.ssim = float(np.mean([mean_ssim(pd[i, 0], gt[i]) for i in range(len(gt))]))
    return {"model": rep.to_dict(),
            "baseline": {"value": baseline, "ard": ard(c, g), "rmse": rmse(c, g)}}
