from pathlib import Path

import numpy as np
import pytest

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def golden():
    return GOLDEN


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def plus_mask(arm: int = 3, size: int = 11) -> np.ndarray:
    """'+' of 1-px lines with ``arm`` pixels on each side of the centre."""
    m = np.zeros((size, size), dtype=np.uint8)
    c = size // 2
    m[c, c - arm:c + arm + 1] = 1
    m[c - arm:c + arm + 1, c] = 1
    return m


def t_mask() -> np.ndarray:
    m = np.zeros((9, 9), dtype=np.uint8)
    m[2, 1:8] = 1
    m[2:8, 4] = 1
    return m


def bar_mask() -> np.ndarray:
    m = np.zeros((9, 26), dtype=np.uint8)
    m[3:6, 3:23] = 1
    return m


GRADCHECK_TOPOLOGY = dict(levels=2, base_width=4)


@pytest.fixture(scope="session")
def network_gradcheck():
    """Full finite-difference check of L_total over every parameter of a
    2-level, width-4 network on a 1x1x16x16 input. Returns (result, seconds)."""
    import time

    from octadepth.scnet import Topology, gradient_check, init_params

    r = np.random.default_rng(1)
    x = r.uniform(-1, 1, (1, 1, 16, 16))
    gt_seg = (r.random((1, 1, 16, 16)) < 0.3).astype(np.float64)
    gt_depth = r.random((1, 1, 16, 16)) * gt_seg
    params = init_params(Topology(**GRADCHECK_TOPOLOGY), seed=3, dtype=np.float64)
    t = time.perf_counter()
    res = gradient_check(params, x, gt_depth, gt_seg)
    return res, time.perf_counter() - t


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])


@pytest.fixture(scope="session")
def toy_training(tmp_path_factory):
    """Default toy pipeline through the CLI: 80 phantoms at 64x64, 200 steps,
    seed 0. Returns (train report, seconds)."""
    import json
    import time

    from octadepth.cli import main

    root = tmp_path_factory.mktemp("toy")
    t = time.perf_counter()
    assert main(["phantom", "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run")]) == 0
    secs = time.perf_counter() - t
    return json.loads((root / "run" / "train_report.json").read_text()), secs
