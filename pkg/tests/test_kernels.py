import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trainmem import _kernels


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(-(2**40), 2**40), max_size=400))
def test_peak_backends_agree(deltas):
    arr = np.array(deltas, dtype=np.int64)
    expected = max([0] + list(np.cumsum(arr))) if deltas else 0
    assert _kernels.peak_running_sum_numpy(arr) == expected
    assert _kernels.peak_running_sum_numba(arr) == expected


@pytest.mark.parametrize("n", [1, 2, 5, 13, 30])
def test_jacobi_backends_agree_with_lapack(n):
    rng = np.random.default_rng(n)
    A = rng.standard_normal((n, n))
    A = A + A.T
    ref = np.linalg.eigvalsh(A)
    for fn in (_kernels.jacobi_eigh_numpy, _kernels.jacobi_eigh_numba):
        w, V, _ = fn(A, 1e-10)
        assert np.allclose(np.sort(w), ref, atol=1e-9)
        assert np.allclose(V @ np.diag(w) @ V.T, A, atol=1e-8)
        assert np.allclose(V.T @ V, np.eye(n), atol=1e-10)
    wn, Vn, sn = _kernels.jacobi_eigh_numpy(A, 1e-10)
    wj, Vj, sj = _kernels.jacobi_eigh_numba(A, 1e-10)
    assert sn == sj
    assert np.allclose(wn, wj, atol=1e-12) and np.allclose(Vn, Vj, atol=1e-10)


def test_jacobi_does_not_mutate_input():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    before = A.copy()
    _kernels.jacobi_eigh(A)
    assert np.array_equal(A, before)


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = {**os.environ, "TRAINMEM_DISABLE_NUMBA": flag}
    out = subprocess.run(
        [sys.executable, "-c", "from trainmem import _kernels; print(_kernels.backend())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == expected
