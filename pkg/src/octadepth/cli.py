"""Command-line entry point: ``octadepth <command> [options]``.

Exit codes: 0 ok, 2 config error, 3 missing input, 4 checkpoint mismatch,
5 undefined metric.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_CHECKPOINT, EXIT_METRIC = 0, 2, 3, 4, 5

log = logging.getLogger("octadepth")


class _Timer:
    def __init__(self):
        self.timings = {}

    def __call__(self, stage):
        timer = self

        class _Stage:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.timings[stage] = round(time.perf_counter() - self.t0, 6)

        return _Stage()


def _write_report(path: Path, command: str, config_hash: str, timer: _Timer,
                  metrics: dict, outputs: list, extra: dict | None = None) -> None:
    report = {"command": command, "config_hash": config_hash,
              "timings": timer.timings, "metrics": metrics,
              "outputs": sorted(str(p) for p in outputs)}
    if extra:
        report.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input {p} not found")
    return p


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_phantom(args, cfg, chash):
    from .train import write_dataset

    out = Path(args.out)
    timer = _Timer()
    with timer("generate"):
        files = write_dataset(out, cfg.dataset.n, cfg.seed, cfg.dataset.phantom,
                              cfg.dataset.noise_level)
    _write_report(out / "phantom_report.json", "phantom", chash, timer,
                  {"n": cfg.dataset.n}, [f.name for f in files])
    return EXIT_OK


def cmd_train(args, cfg, chash):
    from .scnet.checkpoint import save_checkpoint
    from .train import baseline_depth, evaluate, load_dataset, split, train

    data = load_dataset(_require(args.data))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    tr, te = split(len(data), cfg.train.train_fraction)
    with timer("train"):
        res = train(data.subset(tr), cfg.train, cfg.seed)
    with timer("evaluate"):
        ev = evaluate(res.params, data.subset(te), baseline_depth(data.subset(tr)))
    ckpt = out / "checkpoint.scn"
    save_checkpoint(res.params, ckpt)
    log_path = out / "train_log.jsonl"
    log_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in res.log))
    metrics = {"initial": res.initial.to_dict(), "final": res.final.to_dict(),
               "n_train": len(tr), "n_test": len(te), "heldout": ev}
    _write_report(out / "train_report.json", "train", chash, timer, metrics,
                  [ckpt.name, log_path.name])
    return EXIT_OK


def cmd_predict(args, cfg, chash):
    import numpy as np

    from .raster import BinaryMask, Image2D, load_pgm, save_pfm, save_pgm
    from .scnet.checkpoint import CheckpointError, load_checkpoint
    from .train import predict

    params = load_checkpoint(_require(args.checkpoint))
    want = cfg.train.topology
    if (params.topology.levels, params.topology.base_width) != (want.levels, want.base_width):
        raise CheckpointError(
            f"checkpoint topology {params.topology} does not match config {want}")
    img = load_pgm(_require(args.angio))
    out = Path(args.out)
    timer = _Timer()
    with timer("predict"):
        depth, seg = predict(params, img.data)
    depth_p, seg_p = out / "pred_depth.pfm", out / "pred_seg.pgm"
    save_pfm(Image2D(depth), depth_p)
    save_pgm(Image2D(seg), seg_p)
    outputs = [depth_p.name, seg_p.name]
    if args.threshold is not None:
        mask_p = out / "pred_mask.pgm"
        from .raster import save_mask_pgm

        save_mask_pgm(BinaryMask((seg >= args.threshold).astype(np.uint8)), mask_p)
        outputs.append(mask_p.name)
    _write_report(out / "predict_report.json", "predict", chash, timer,
                  {"shape": list(depth.shape),
                   "depth_range": [float(depth.min()), float(depth.max())]},
                  outputs)
    return EXIT_OK


def cmd_reconstruct(args, cfg, chash):
    from .raster import BinaryMask, DepthMap, load_pfm, load_pgm
    from .recon3d import encode_polydata, encode_ply, reconstruct

    seg = BinaryMask.from_image(load_pgm(_require(args.seg)))
    depth = DepthMap.full(load_pfm(_require(args.depth)).data)
    stem = Path(args.out)
    if stem.is_dir() or str(args.out).endswith(os.sep):
        stem = stem / "recon"
    stem.parent.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    with timer("reconstruct"):
        res = reconstruct(seg, depth, cfg.recon)
    files = {
        "cloud": (Path(f"{stem}_cloud.ply"), encode_ply(res.cloud)),
        "tubes": (Path(f"{stem}_tubes.ply"), encode_ply(res.mesh)),
        "lines": (Path(f"{stem}_lines.vtk"), encode_polydata(res.polylines)),
        "graph": (Path(f"{stem}_graph.json"), (res.graph.to_json() + "\n").encode()),
    }
    with timer("export"):
        for p, data in files.values():
            p.write_bytes(data)
    metrics = {"nodes": len(res.graph.nodes), "segments": len(res.graph.segments),
               "junctions": len(res.graph.junctions()), "points": len(res.cloud),
               "mesh_vertices": len(res.mesh.vertices), "mesh_triangles": len(res.mesh.triangles),
               "filled_depth_pixels": res.filled, "orphans": res.graph.orphans}
    _write_report(Path(f"{stem}_report.json"), "reconstruct", chash, timer, metrics,
                  [p.name for p, _ in files.values()], {"recon_config": res.config.to_dict()})
    return EXIT_OK


def cmd_eval_depth(args, cfg, chash):
    from .metrics import depth_report
    from .raster import BinaryMask, load_pfm, load_pgm

    pred = load_pfm(_require(args.pred))
    gt = load_pfm(_require(args.gt))
    mask = None
    domain = args.domain
    if args.mask is not None:
        mask = BinaryMask.from_image(load_pgm(_require(args.mask)))
    if domain == "vessel" and mask is None:
        raise ValueError("--domain vessel needs --mask")
    if domain == "full":
        mask = None
    timer = _Timer()
    with timer("evaluate"):
        rep = depth_report(pred, gt, mask)
    out = Path(args.out)
    _write_report(out / "eval_depth_report.json", "eval-depth", chash, timer, rep.to_dict(), [],
                  {"domain": "vessel" if mask is not None else "full"})
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_eval_recon(args, cfg, chash):
    from .metrics import cloud_report
    from .recon3d import load_ply_points

    pred = load_ply_points(_require(args.pred))
    gt = load_ply_points(_require(args.gt))
    timer = _Timer()
    with timer("evaluate"):
        if args.voxel_mm is not None:
            rep = cloud_report(pred, gt, units="voxel", scale=args.voxel_mm)
        else:
            rep = cloud_report(pred, gt)
    out = Path(args.out)
    _write_report(out / "eval_recon_report.json", "eval-recon", chash, timer, rep.to_dict(), [])
    print(json.dumps(rep.to_dict(), sort_keys=True))
    return EXIT_OK


COMMANDS = {"phantom": cmd_phantom, "train": cmd_train, "predict": cmd_predict,
            "reconstruct": cmd_reconstruct, "eval-depth": cmd_eval_depth,
            "eval-recon": cmd_eval_recon}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS lets the flags appear before or after the subcommand
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory (stem for reconstruct)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="cap BLAS worker threads")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    ap = argparse.ArgumentParser(prog="octadepth", parents=[common],
                                 description="OCTA depth estimation and 3D vessel reconstruction")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[common], help="write a synthetic dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--canvas", type=int, help="square canvas size in px")

    p = sub.add_parser("train", parents=[common], help="train on a phantom dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("predict", parents=[common], help="depth and vessel maps for one angiogram")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--angio", required=True)
    p.add_argument("--threshold", type=float, help="also write a binary vessel mask")

    p = sub.add_parser("reconstruct", parents=[common], help="3D centerlines and tubes")
    p.add_argument("--seg", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--sz", type=float, help="mm per unit depth")
    p.add_argument("--step", type=float, help="resample step in px")
    p.add_argument("--sides", type=int)

    p = sub.add_parser("eval-depth", parents=[common], help="depth metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask")
    p.add_argument("--domain", choices=("auto", "vessel", "full"), default="auto",
                   help="vessel pixels only (needs --mask) or the full image")

    p = sub.add_parser("eval-recon", parents=[common], help="point-cloud metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--voxel-mm", type=float, help="report in voxels of this size")
    return ap


def _limit_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    for name, default in (("config", None), ("out", "."), ("seed", None),
                          ("threads", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be at least 1", file=sys.stderr)
            return EXIT_CONFIG
        _limit_threads(args.threads)

    from .config import ConfigError, load_config, override
    from .metrics import UndefinedMetricError
    from .scnet.checkpoint import CheckpointError

    try:
        cfg, chash = load_config(args.config)
        flags = {"seed": args.seed, "threads": args.threads}
        if args.command == "phantom":
            flags.update({"dataset.n": args.n, "dataset.noise_level": args.noise})
            if args.canvas is not None:
                from dataclasses import replace

                flags["dataset.phantom"] = replace(cfg.dataset.phantom,
                                                   canvas=(args.canvas, args.canvas))
        elif args.command == "train":
            flags.update({"train.steps": args.steps, "train.batch": args.batch,
                          "train.lr": args.lr})
        elif args.command == "reconstruct":
            flags.update({"recon.sz": args.sz, "recon.step": args.step,
                          "recon.sides": args.sides})
        cfg = override(cfg, **flags)
        return COMMANDS[args.command](args, cfg, chash)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except CheckpointError as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except UndefinedMetricError as exc:
        print(f"undefined metric: {exc}", file=sys.stderr)
        return EXIT_METRIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
