import json
import subprocess
import sys

import numpy as np
import pytest

from octadepth.cli import main

FAST = {"seed": 4, "dataset": {"n": 6}, "train": {"levels": 2, "base_width": 4, "steps": 3,
                                                    "batch": 2}}


def run_pipeline(root, config):
    """Every command once, in order; returns the exit codes."""
    c = ["--config", str(config)]
    codes = [
        main(["phantom", "--out", str(root / "data"), *c]),
        main(["train", "--data", str(root / "data"), "--out", str(root / "run"), *c]),
        main(["predict", "--checkpoint", str(root / "run" / "checkpoint.scn"),
              "--angio", str(root / "data" / "0005_angio.pgm"), "--threshold", "0.5",
              "--out", str(root / "pred"), *c]),
        main(["reconstruct", "--seg", str(root / "data" / "0005_seg.pgm"),
              "--depth", str(root / "data" / "0005_depth.pfm"),
              "--out", str(root / "recon" / "s5"), *c]),
        main(["eval-depth", "--pred", str(root / "pred" / "pred_depth.pfm"),
              "--gt", str(root / "data" / "0005_depth.pfm"),
              "--mask", str(root / "data" / "0005_seg.pgm"), "--out", str(root / "evd"), *c]),
        main(["eval-recon", "--pred", str(root / "recon" / "s5_cloud.ply"),
              "--gt", str(root / "data" / "0005_centerline.ply"), "--voxel-mm", str(3 / 64),
              "--out", str(root / "evr"), *c]),
    ]
    return codes


def snapshot(root):
    """Relative path -> bytes, with report timings dropped."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name.endswith("_report.json"):
                rep = json.loads(data)
                rep.pop("timings")
                data = json.dumps(rep, sort_keys=True).encode()
            out[str(p.relative_to(root))] = data
    return out


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "fast.json"
    cfg.write_text(json.dumps(FAST))
    runs = []
    for name in ("a", "b"):
        root = base / name
        root.mkdir()
        runs.append((run_pipeline(root, cfg), root))
    return runs


def test_every_command_succeeds(two_runs, capsys):
    for codes, _ in two_runs:
        assert codes == [0] * 6


def test_outputs_byte_identical(two_runs):
    (_, a), (_, b) = two_runs
    sa, sb = snapshot(a), snapshot(b)
    assert sorted(sa) == sorted(sb)
    for k in sa:
        assert sa[k] == sb[k], k


def test_reports_and_outputs(two_runs):
    _, root = two_runs[0]
    assert len(list((root / "data").glob("*_angio.pgm"))) == 6
    rep = json.loads((root / "run" / "train_report.json").read_text())
    assert rep["command"] == "train" and rep["outputs"] == ["checkpoint.scn", "train_log.jsonl"]
    assert set(rep["timings"]) == {"train", "evaluate"}
    for line in (root / "run" / "train_log.jsonl").read_text().splitlines():
        r = json.loads(line)
        assert r["l_total"] == r["l_seg"] + r["l_accuracy"] + r["l_structure"]
    from octadepth.raster import load_pfm, load_pgm

    d = load_pfm(root / "pred" / "pred_depth.pfm").data
    assert d.shape == load_pgm(root / "data" / "0005_angio.pgm").shape
    assert np.all((d > 0) & (d < 1))
    rr = json.loads((root / "recon" / "s5_report.json").read_text())
    assert rr["metrics"]["segments"] > 0 and rr["recon_config"]["sx"] == 3 / 64
    ev = json.loads((root / "evr" / "eval_recon_report.json").read_text())
    assert ev["metrics"]["units"] == "voxel"


def test_identity_evaluations(two_runs, tmp_path):
    _, root = two_runs[0]
    gt = root / "data" / "0002_depth.pfm"
    seg = root / "data" / "0002_seg.pgm"
    assert main(["eval-depth", "--pred", str(gt), "--gt", str(gt), "--mask", str(seg),
                 "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "eval_depth_report.json").read_text())["metrics"]
    assert m["acc_delta1"] == m["acc_delta2"] == m["acc_delta3"] == 1.0
    assert m["ard"] == 0 and m["rmse"] == 0
    cl = root / "data" / "0002_centerline.ply"
    assert main(["eval-recon", "--pred", str(cl), "--gt", str(cl), "--out", str(tmp_path)]) == 0
    m = json.loads((tmp_path / "eval_recon_report.json").read_text())["metrics"]
    assert m["chamfer"] == 0 and m["hausdorff"] == 0


def test_config_hash_follows_file(tmp_path):
    cfg = tmp_path / "c.json"
    hashes = []
    for text in ('{"dataset": {"n": 1}}', '{"dataset": {"n": 1}}', '{"dataset": {"n": 1} }'):
        cfg.write_text(text)
        out = tmp_path / f"o{len(hashes)}"
        assert main(["phantom", "--config", str(cfg), "--out", str(out)]) == 0
        hashes.append(json.loads((out / "phantom_report.json").read_text())["config_hash"])
    assert hashes[0] == hashes[1] != hashes[2]


def test_exit_codes(two_runs, tmp_path):
    _, root = two_runs[0]
    assert main(["phantom", "--n", "0", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"nope": 1}')
    assert main(["phantom", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 3
    # default topology (4 levels, width 8) does not match the fast checkpoint
    assert main(["predict", "--checkpoint", str(root / "run" / "checkpoint.scn"),
                 "--angio", str(root / "data" / "0000_angio.pgm"), "--out", str(tmp_path)]) == 4
    empty = tmp_path / "zero.pfm"
    from octadepth.raster import Image2D, save_pfm

    save_pfm(Image2D(np.zeros((4, 4))), empty)
    assert main(["eval-depth", "--pred", str(empty), "--gt", str(empty),
                 "--out", str(tmp_path)]) == 5
    assert main(["phantom", "--threads", "0", "--out", str(tmp_path)]) == 2


def test_flags_after_subcommand_and_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "octadepth.cli", "--seed", "2", "phantom", "--n", "1",
                        "--canvas", "32", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["seed"] == 2 and meta["phantom"]["canvas"] == [32, 32]
