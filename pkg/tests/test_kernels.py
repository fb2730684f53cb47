import subprocess
import sys

import numpy as np
import pytest

from tdcqkd import _kernels_py, kernels
from tdcqkd.tdc_model import build_preset

compiled = pytest.importorskip("tdcqkd._kernels", reason="compiled core not built")


@pytest.mark.parametrize("mode,mean,sigma", [(0, 0.0, 0.0), (1, 2000.0, 150.0)])
def test_code_density_backends_identical(mode, mean, sigma):
    line = build_preset("TDC2_RAW")
    key = kernels.seed_key(42)
    args = (line.edges, line.clock_period, key, 1000, 201_000, mode, mean, sigma)
    assert np.array_equal(compiled.code_density(*args), _kernels_py.code_density(*args))


def test_code_density_split_is_additive():
    line = build_preset("TDC1_OPT")
    key = kernels.seed_key(3)
    whole = compiled.code_density(line.edges, line.clock_period, key, 0, 100_000)
    parts = sum(compiled.code_density(line.edges, line.clock_period, key, a, b)
                for a, b in [(0, 33_333), (33_333, 70_000), (70_000, 100_000)])
    assert np.array_equal(whole, parts)


def test_match_backends_identical():
    rng = np.random.default_rng(0)
    ta = np.sort(rng.integers(0, 10**8, 20_000))
    tb = np.sort(np.concatenate([ta[::2] + rng.integers(-400, 400, 10_000),
                                 rng.integers(0, 10**8, 10_000)]))
    for w in (0.0, 50.0, 500.0):
        a = compiled.match_greedy(ta, tb, w)
        b = _kernels_py.match_greedy(ta, tb, w)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_counter_uniform_range_and_independence_of_start():
    key = kernels.seed_key(5)
    u = kernels.counter_uniform(key, 0, 1000)
    assert u.min() >= 0 and u.max() < 1
    assert np.array_equal(kernels.counter_uniform(key, 400, 10), u[400:410])


def test_pure_python_switch():
    code = "import tdcqkd.kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"TDCQKD_PURE_PYTHON": "1", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"
