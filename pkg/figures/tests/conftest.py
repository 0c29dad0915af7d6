import csv

import numpy as np
import pytest


@pytest.fixture
def write_scores(tmp_path):
    """Score-table writer matching the exporter's CSV layout."""

    def write(name, rows):
        path = tmp_path / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "condition", "rel_l2", "ssim"])
            w.writerows(rows)
        return path

    return write


@pytest.fixture
def write_npy(tmp_path):
    def write(name, arr, dtype=np.float32):
        path = tmp_path / name
        np.save(path, np.asarray(arr, dtype=dtype))
        return path

    return write


@pytest.fixture
def rng():
    return np.random.default_rng(77)
