import json
from pathlib import Path

import numpy as np
import pytest

from roomwalk import cli


@pytest.fixture(scope="session")
def mini_data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("mini_data")
    rc = cli.main([
        "--seed", "200", "gen-data", "--out", str(d),
        "--train-scenes", "2", "--test-scenes", "1", "--episodes", "1",
        "--steps", "5", "--height", "16", "--width", "16",
    ])
    assert rc == 0
    return d


@pytest.fixture(scope="session")
def mini_codec_path(tmp_path_factory, mini_data_dir):
    out = tmp_path_factory.mktemp("mini_codec")
    cfg = out / "config.json"
    cfg.write_text(json.dumps({
        "codec": {"d_b": 4, "codebook_size": 32, "channels": [8, 12]},
    }))
    rc = cli.main([
        "--config", str(cfg), "train-codec", "--data", str(mini_data_dir),
        "--out", str(out), "--steps", "200", "--batch", "8",
    ])
    assert rc == 0
    return out / "codec.ckpt"


@pytest.fixture(scope="session")
def mini_model_path(tmp_path_factory, mini_data_dir, mini_codec_path):
    out = tmp_path_factory.mktemp("mini_model")
    cfg = out / "config.json"
    cfg.write_text(json.dumps({
        "model": {"d_e": 32, "n_heads": 2, "n_blocks": 1, "mlp_hidden": 64},
    }))
    rc = cli.main([
        "--config", str(cfg), "train-model", "--data", str(mini_data_dir),
        "--codec", str(mini_codec_path), "--out", str(out),
        "--steps", "40", "--finetune-steps", "10", "--batch", "4",
    ])
    assert rc == 0
    return out / "model.ckpt"
