import json
from pathlib import Path

import numpy as np
import pytest

from standseg.cli import main as cli_main


@pytest.fixture(scope="session")
def scene_dir(tmp_path_factory) -> Path:
    """Small synthetic scene with every derived product, built once.

    128 x 96 m at 1 m cells gives 12 tiles of 32 px: big enough for training
    smoke tests, small enough to rasterize in a couple of seconds.
    """
    out = tmp_path_factory.mktemp("scene")
    run = lambda *argv: cli_main(list(argv))
    assert run("synth", "--seed", "7", "--extent", "128", "96", "--stands", "8",
               "--als-density", "4", "--dap-density", "10", "--out", str(out)) == 0
    grid = str(out / "grid.json")
    assert run("chm", "--points", str(out / "als.csv"), "--grid-json", grid,
               "--out", str(out / "chm_als.sdgr")) == 0
    assert run("chm", "--points", str(out / "dap.csv"), "--ground-points", str(out / "als.csv"),
               "--grid-json", grid, "--out", str(out / "chm_dap.sdgr")) == 0
    assert run("dtm", "--points", str(out / "als.csv"), "--grid-json", grid,
               "--out", str(out / "dtm.sdgr")) == 0
    assert run("ortho", "--points", str(out / "dap.csv"), "--grid-json", grid,
               "--out", str(out / "ortho.sdgr")) == 0
    assert run("composite", "--ortho", str(out / "ortho.sdgr"), "--chm", str(out / "chm_als.sdgr"),
               "--combo", "RGBI-ALS", "--out", str(out / "comp_als.sdgr")) == 0
    assert run("composite", "--ortho", str(out / "ortho.sdgr"), "--chm", str(out / "chm_dap.sdgr"),
               "--combo", "RGBI-DAP", "--out", str(out / "comp_dap.sdgr")) == 0
    assert run("composite", "--ortho", str(out / "ortho.sdgr"), "--chm", str(out / "chm_dap.sdgr"),
               "--dtm", str(out / "dtm.sdgr"), "--combo", "RGBI-DAP-DTM",
               "--out", str(out / "comp_dtm.sdgr")) == 0
    assert run("rasterize-stands", "--stands", str(out / "stands.json"), "--grid-json", grid,
               "--out", str(out / "mask.sdgr")) == 0
    assert run("tiles", "--grid-json", grid, "--tile", "32",
               "--municipalities", str(out / "municipalities.json"),
               "--out", str(out / "tiles.json")) == 0
    assert run("folds", "--tiles", str(out / "tiles.json"), "--out", str(out / "folds.json")) == 0
    return out


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
