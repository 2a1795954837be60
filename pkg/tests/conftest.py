import json

import pytest

from hetskel import recipes


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """Small prepared corpus (3 classes, kinect-v2 + pose-2d) shared by harness and CLI tests."""
    wd = tmp_path_factory.mktemp("tiny")
    spec_kw = dict(noise_sigma=0.02, seed=0, T=8, dim=16)
    recipes.prepare_toy_data(wd, ["kinect-v2", "pose-2d"], [6, 6, 6, 0, 0, 0, 0, 0], **spec_kw)
    return wd


def write_config(wd, name, **over):
    conf = {
        "corpus": ["corpus_kinect-v2.jsonl", "corpus_pose-2d.jsonl"],
        "bank": "bank.json",
        "split": "split.json",
        "out_dir": name,
        "encoder": {"D_h": 8, "L": 1, "heads": 2, "T_max": 8},
        "optim": {"lr_peak": 3e-3, "warmup_epochs": 1, "total_epochs": 3, "batch_size": 8},
        "val_frac": 0.2,
    }
    conf.update(over)
    path = wd / f"{name}.json"
    path.write_text(json.dumps(conf))
    return path
