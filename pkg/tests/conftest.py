import numpy as np
import pytest

from pointcover.geometry import PointCloud, normalize_unit_cube


@pytest.fixture
def random_cloud():
    def make(n=128, d=3, seed=0, cloud_id="cloud"):
        rng = np.random.default_rng(seed)
        return normalize_unit_cube(PointCloud(rng.random((n, d)), cloud_id=cloud_id))

    return make


def max_rel_error(analytic, numeric, floor=1e-9):
    """Worst relative disagreement, ignoring entries that are tiny in both."""
    worst = 0.0
    a = np.asarray(analytic).reshape(-1)
    f = np.asarray(numeric).reshape(-1)
    for x, y in zip(a, f):
        if abs(x - y) <= floor:
            continue
        worst = max(worst, abs(x - y) / max(abs(x), abs(y), 1e-8))
    return worst


def finite_difference(fn, arr, h=1e-5):
    """Central finite differences of scalar fn w.r.t. every entry of arr."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad
