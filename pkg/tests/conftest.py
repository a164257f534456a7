import numpy as np
import pytest

from torus_ma.grid import TorusGrid, random_trig_field


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def grid2():
    return TorusGrid((32, 32))


@pytest.fixture
def grid3():
    return TorusGrid((16, 16, 16))


def rel_err(a, b):
    """Max-norm difference relative to max(1, |b|_inf)."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def permutation_sign(perm):
    """Brute-force parity oracle: sign of the permutation given as a sequence."""
    perm = list(perm)
    sign = 1
    for i in range(len(perm)):
        for j in range(i + 1, len(perm)):
            if perm[i] > perm[j]:
                sign = -sign
    return sign


def small_field(grid, rng, scale=0.1, max_mode=2, axes=None):
    return random_trig_field(grid, rng, max_mode=max_mode, scale=scale, axes=axes)


def branch_safe_field(grid, rng, max_mode=2, hessian_scale=0.3, axes=None):
    """Random trig field rescaled so its largest second derivative has the
    given magnitude (keeps determinant-type residuals on the elliptic branch)."""
    from torus_ma.grid import ScalarField, mixed_derivative

    f = random_trig_field(grid, rng, max_mode=max_mode, scale=1.0, axes=axes)
    worst = max(
        float(np.max(np.abs(mixed_derivative(f, i, j).values)))
        for i in range(grid.d) for j in range(i, grid.d)
    )
    return ScalarField(grid, f.values * (hessian_scale / max(worst, 1e-300)))
