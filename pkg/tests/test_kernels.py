import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from reprokit import kernels

BACKENDS = sorted(kernels.backends())


@pytest.fixture(params=BACKENDS)
def backend(request):
    return kernels.backends()[request.param]


def brute_cost(cost):
    n, m = cost.shape
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))


class TestLinearAssignment:
    def test_known_matrix(self, backend):
        cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
        cols = backend.linear_assignment(cost)
        assert cost[np.arange(3), cols].sum() == 5.0
        assert sorted(cols.tolist()) == [0, 1, 2]

    def test_brute_force_square(self, backend, rng):
        for _ in range(100):
            n = int(rng.integers(1, 7))
            cost = rng.uniform(0, 10, size=(n, n))
            cols = backend.linear_assignment(cost)
            assert len(set(cols.tolist())) == n
            assert abs(cost[np.arange(n), cols].sum() - brute_cost(cost)) <= 1e-12

    def test_scipy_rectangular(self, backend, rng):
        for _ in range(100):
            n = int(rng.integers(1, 40))
            m = n + int(rng.integers(0, 10))
            cost = rng.normal(size=(n, m)) * 5
            r, c = linear_sum_assignment(cost)
            cols = backend.linear_assignment(cost)
            assert cost[np.arange(n), cols].sum() == pytest.approx(cost[r, c].sum(), abs=1e-9)

    def test_integer_ties(self, backend, rng):
        cost = rng.integers(0, 3, size=(30, 30)).astype(float)
        r, c = linear_sum_assignment(cost)
        cols = backend.linear_assignment(cost)
        assert cost[np.arange(30), cols].sum() == cost[r, c].sum()

    def test_more_rows_than_cols(self, backend):
        with pytest.raises(ValueError, match="rows <= cols"):
            backend.linear_assignment(np.zeros((3, 2)))


class TestPairwise:
    def test_matches_loop(self, backend, rng):
        a, b = rng.normal(size=(7, 4)), rng.normal(size=(5, 4))
        expected = np.array([[np.linalg.norm(x - y) for y in b] for x in a])
        np.testing.assert_allclose(backend.pairwise_euclidean(a, b), expected, rtol=1e-13, atol=1e-13)

    def test_column_mismatch(self, backend):
        with pytest.raises(ValueError):
            backend.pairwise_euclidean(np.zeros((2, 3)), np.zeros((2, 4)))


def test_backends_agree(rng):
    mods = kernels.backends()
    if len(mods) < 2:
        pytest.skip("compiled backend not built")
    a, b = rng.normal(size=(60, 10)), rng.normal(size=(60, 10))
    d_c = mods["cython"].pairwise_euclidean(a, b)
    d_p = mods["python"].pairwise_euclidean(a, b)
    np.testing.assert_allclose(d_c, d_p, rtol=1e-12, atol=1e-12)
    assert d_c[np.arange(60), mods["cython"].linear_assignment(d_c)].sum() == pytest.approx(
        d_c[np.arange(60), mods["python"].linear_assignment(d_c)].sum(), abs=1e-9)


def test_pure_python_switch():
    env = dict(os.environ, REPROKIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from reprokit import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
