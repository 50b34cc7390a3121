import os
import subprocess
import sys

import numpy as np
import pytest

from socest import _kernels_py

compiled = pytest.importorskip("socest._kernels", reason="compiled kernels not built")

BACKENDS = [_kernels_py, compiled]


def _sim_inputs(seed):
    rng = np.random.default_rng(seed)
    n = 2000
    currents = np.repeat(rng.normal(0, 20, n // 50), 50)
    dts = rng.uniform(0.1, 5.0, n)
    c_soc = np.array([0.0, 0.1, 0.5, 0.9, 1.0])
    c_ocv = np.array([3.0, 3.4, 3.7, 4.0, 4.2])
    return currents, dts, c_soc, c_ocv


@pytest.mark.parametrize("seed", range(3))
def test_simulate_parity(seed):
    currents, dts, c_soc, c_ocv = _sim_inputs(seed)
    outs = []
    for k in BACKENDS:
        out = [np.empty(currents.size + 1) for _ in range(4)]
        k.simulate_kernel(currents, dts, 0.01, 0.004, 10.0, 0.006, 120.0, 5.0 * 3600, c_soc, c_ocv,
                          0.5, 0.0, 0.01, *out)
        outs.append(out)
    for a, b in zip(*outs):
        assert np.array_equal(a, b)
    soc = outs[0][0]
    assert np.all((soc >= 0) & (soc <= 1))


@pytest.mark.parametrize("seed", range(3))
def test_cc_parity(seed):
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(0.1, 2, 5000))
    cur = rng.normal(0, 30, 5000)
    a, b = np.empty(5000), np.empty(5000)
    _kernels_py.cc_kernel(t, cur, 3600.0, 0.5, a)
    compiled.cc_kernel(t, cur, 3600.0, 0.5, b)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("joseph", [False, True])
@pytest.mark.parametrize("record", [False, True])
def test_ekf_parity(joseph, record):
    rng = np.random.default_rng(1)
    n = 3000
    t = np.cumsum(rng.uniform(0.5, 1.5, n))
    cur = np.repeat(rng.normal(0, 5, n // 100), 100)
    v = 3.7 + rng.normal(0, 0.05, n)
    v[rng.random(n) < 0.05] = np.nan
    pidx = (np.arange(n) >= n // 2).astype(np.int64)
    ptab = np.array([[0.01, 0.004, 10.0, 0.006, 120.0, 18000.0], [0.02, 0.005, 8.0, 0.008, 100.0, 18000.0]])
    cidx = pidx.copy()
    c_soc = np.array([[0.0, 0.5, 1.0, 0.0], [0.0, 0.2, 0.6, 1.0]])
    c_ocv = np.array([[3.0, 3.7, 4.2, 0.0], [3.0, 3.5, 3.9, 4.2]])
    c_len = np.array([3, 4], dtype=np.int64)
    p0 = np.diag([0.01, 1e-4, 1e-4]).reshape(-1)
    q = np.array([[1e-7, 1e-9, 0], [1e-9, 1e-8, 0], [0, 0, 1e-8]]).reshape(-1)
    results = []
    for k in BACKENDS:
        x = np.empty((n, 3))
        rest = [np.empty(n) for _ in range(3)]
        pp = [np.empty((n, 9) if record else (0, 9)) for _ in range(2)]
        status = k.ekf_kernel(t, cur, v, pidx, ptab, cidx, c_soc, c_ocv, c_len, np.array([0.6, 0.0, 0.0]),
                              p0, q, 1e-3, joseph, x, *rest, *pp)
        assert status == -1
        results.append((x, *rest, *pp))
    for a, b in zip(*results):
        np.testing.assert_array_equal(a, b)


def test_ekf_degenerate_row_parity():
    n = 10
    args = dict(t=np.arange(float(n)), currents=np.zeros(n), voltages=np.full(n, 3.7))
    for k in BACKENDS:
        status = k.ekf_kernel(
            args["t"], args["currents"], args["voltages"], np.zeros(n, np.int64),
            np.array([[0.01, 0.004, 10.0, 0.006, 120.0, 18000.0]]), np.zeros(n, np.int64),
            np.array([[0.0, 1.0]]), np.array([[3.0, 4.2]]), np.array([2], np.int64),
            np.array([0.5, 0, 0]), np.zeros(9), np.zeros(9), -1.0, False,
            np.empty((n, 3)), np.empty(n), np.empty(n), np.empty(n), np.empty((0, 9)), np.empty((0, 9)),
        )
        assert status == 0


def test_pure_python_switch():
    env = {**os.environ, "SOCEST_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", "import socest; print(socest.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "python"
