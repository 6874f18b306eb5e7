import json

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / scale)


def random_unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


SMALL_CONFIG = {
    "seed": 5,
    "output_dir": "out",
    "data": {"class_count": 12, "samples_per_class": 40, "input_dim": 8, "overlap_pairs": 2},
    "old_train": {"epochs": 2, "hidden": [8], "embed_dim": 8},
    "new_train": {"epochs": 3, "hidden": [16], "embed_dim": 8, "drop_epochs": [2]},
    "method": {"name": "ndpp", "ndpp": {"alpha1": 0.5, "alpha2": 0.5, "K": 1},
               "odpp": {"inner_lr": 0.01, "inner_epochs": 5}},
}


@pytest.fixture
def small_config(tmp_path):
    """Write a fast config to ``tmp_path`` and return its path."""
    def make(**overrides):
        raw = json.loads(json.dumps(SMALL_CONFIG))
        for k, v in overrides.items():
            if isinstance(v, dict) and isinstance(raw.get(k), dict):
                raw[k].update(v)
            else:
                raw[k] = v
        path = tmp_path / "config.json"
        path.write_text(json.dumps(raw))
        return path
    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
