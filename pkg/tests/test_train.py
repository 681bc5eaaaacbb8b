import json

import numpy as np
import pytest

from octadepth.losses import LossWeights
from octadepth.scnet.checkpoint import encode_checkpoint
from octadepth.train import (TOY_PHANTOM, TrainConfig, baseline_depth, evaluate, load_dataset,
                             predict, split, train, write_dataset)


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    write_dataset(root, 6, seed=2)
    return root


def test_dataset_files_and_meta(small_data):
    meta = json.loads((small_data / "meta.json").read_text())
    assert meta["n"] == 6 and meta["samples"][0] == "0000"
    for suffix in ("angio.pgm", "depth.pfm", "seg.pgm", "centerline.ply", "meta.json"):
        assert (small_data / f"0005_{suffix}").is_file()
    assert json.loads((small_data / "0003_meta.json").read_text())["seed"] == 5
    d = load_dataset(small_data)
    assert d.angio.shape == (6, 1, 64, 64) and set(np.unique(d.seg)) <= {0.0, 1.0}


def test_load_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_split():
    assert split(80, 0.7) == (list(range(56)), list(range(56, 80)))
    tr, te = split(2, 0.99)
    assert tr == [0] and te == [1]
    with pytest.raises(ValueError):
        split(1)


def test_short_training_deterministic_and_additive(small_data):
    data = load_dataset(small_data)
    cfg = TrainConfig(levels=2, base_width=4, steps=4, batch=2)
    a, b = train(data, cfg, seed=0), train(data, cfg, seed=0)
    assert encode_checkpoint(a.params) == encode_checkpoint(b.params)
    for rec in a.log:
        assert rec["l_total"] == rec["l_seg"] + rec["l_accuracy"] + rec["l_structure"]
    pd, ps = predict(a.params, data.angio[0, 0])
    assert pd.shape == ps.shape == (64, 64)
    assert np.all((pd > 0) & (pd < 1))
    ev = evaluate(a.params, data.subset([4, 5]), baseline_depth(data.subset([0, 1, 2, 3])))
    assert {"model", "baseline"} <= set(ev)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(train_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    assert TrainConfig().topology.levels == 4
    assert TrainConfig().weights == LossWeights(0.8, 0.2)
    assert TOY_PHANTOM.canvas == (64, 64)
