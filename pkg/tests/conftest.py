import os
from pathlib import Path

import numpy as np
import pytest

from hflloc import dataset
from hflloc.synthetic import make_uji_like, write_uji_csv

UJI_FILES = ("trainingData.csv", "validationData.csv")


def uji_dir():
    """Directory holding the public UJIIndoorLoc CSVs, or None."""
    candidates = [os.environ.get("UJIINDOORLOC_DIR"), Path(__file__).parents[1] / "data" / "UJIndoorLoc"]
    for c in candidates:
        if c and all((Path(c) / f).is_file() for f in UJI_FILES):
            return Path(c)
    return None


def write_csv(path, header, rows):
    path.write_text(",".join(header) + "\n" + "".join(",".join(str(v) for v in r) + "\n" for r in rows))
    return path


TOY_HEADER = ["WAP001", "WAP002", "WAP003", "LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID", "USERID"]


@pytest.fixture
def toy_csv(tmp_path):
    rows = [
        [-60, 100, -70, -7600.5, 4864900.25, 0, 0, 1],
        [-80, 100, 100, -7610.0, 4864910.0, 1, 0, 2],
        [100, 100, -104, -7620.0, 4864920.0, 1, 0, 3],
    ]
    return write_csv(tmp_path / "toy.csv", TOY_HEADER, rows)


@pytest.fixture(scope="session")
def synthetic_small(tmp_path_factory):
    """A small UJI-format train/validation pair on disk."""
    out = tmp_path_factory.mktemp("synthetic_small")
    tr, va = make_uji_like(n_train=1200, n_val=150, seed=3)
    write_uji_csv(tr, out / "trainingData.csv")
    write_uji_csv(va, out / "validationData.csv")
    return out


@pytest.fixture(scope="session")
def small_processed(synthetic_small):
    train_fp = dataset.load_fingerprints(synthetic_small / "trainingData.csv")
    val_fp = dataset.load_fingerprints(synthetic_small / "validationData.csv")
    mask = dataset.derive_column_mask(train_fp)
    train = dataset.preprocess(train_fp, mask)
    val = dataset.preprocess(val_fp, mask, train.target_offset)
    return train, val


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One PASS/FAIL line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
