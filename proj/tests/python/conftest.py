import os
import pathlib

import pytest

import matchcut


@pytest.fixture(scope="session")
def tiny_assets(tmp_path_factory):
    out = tmp_path_factory.mktemp("assets")
    matchcut.train_toy_assets(
        str(out),
        {
            "train_clips": 16,
            "val_clips": 4,
            "probe_clips": 32,
            "probe_held_out": 16,
            "latent_backbone": False,
            "backbone": {"templates_per_class": 2, "steps": 20, "validation_samples": 8},
        },
    )
    return out


@pytest.fixture(scope="session")
def oracles():
    import json

    root = pathlib.Path(os.environ.get("MATCHCUT_TEST_DATA", pathlib.Path(__file__).parents[1] / "data"))
    return json.loads((root / "oracles.json").read_text())
