import os
import subprocess
import sys

import numpy as np
import pytest

from obsgrid import _kernels


def _random_data(q, seed):
    rng = np.random.default_rng(seed)
    n, p = 5, 240
    V = rng.standard_normal((n, p, q)) + 1j * rng.standard_normal((n, p, q))
    wa = rng.uniform(0.0, 1.0, p)
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    W = A + A.conj().T
    return V, wa, W


@pytest.mark.parametrize("q", [1, 3])
def test_backends_agree_mass(q):
    V, wa, _ = _random_data(q, 0)
    got = _kernels.mass_from_points(V, wa)
    ref = _kernels._mass_numpy(V, wa)
    assert np.abs(got - ref).max() <= 1e-12 * np.abs(ref).max()


@pytest.mark.parametrize("q", [1, 3])
def test_backends_agree_form(q):
    V, _, W = _random_data(q, 1)
    got = _kernels.form_from_points(V, W)
    ref = _kernels._form_numpy(V, W)
    assert np.abs(got - ref).max() <= 1e-12 * np.abs(ref).max()


def test_mass_is_hermitian():
    V, wa, _ = _random_data(2, 2)
    M = _kernels.mass_from_points(V, wa)
    assert np.abs(M - M.conj().T).max() <= 1e-13 * np.abs(M).max()


def test_numpy_backend_forced_by_env():
    code = (
        "import os; os.environ['OBSGRID_BACKEND'] = 'numpy';"
        "from obsgrid import _kernels;"
        "assert _kernels.BACKEND == 'numpy', _kernels.BACKEND;"
        "import numpy as np;"
        "V = np.ones((2, 6, 1), complex); wa = np.ones(6);"
        "M = _kernels.mass_from_points(V, wa);"
        "assert np.allclose(M, 6.0)"
    )
    subprocess.run([sys.executable, "-c", code], check=True)


def test_invalid_backend_rejected():
    code = (
        "import os; os.environ['OBSGRID_BACKEND'] = 'cuda';"
        "import obsgrid._kernels"
    )
    proc = subprocess.run([sys.executable, "-c", code], capture_output=True)
    assert proc.returncode != 0


def test_results_stable_across_calls():
    V, wa, W = _random_data(1, 3)
    m1 = _kernels.mass_from_points(V, wa)
    m2 = _kernels.mass_from_points(V, wa)
    assert (m1 == m2).all()
    f1 = _kernels.form_from_points(V, W)
    f2 = _kernels.form_from_points(V, W)
    assert (f1 == f2).all()
