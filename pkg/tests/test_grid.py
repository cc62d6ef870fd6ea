import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from channelstab.grid import build_grid, inner, interpolate, reflect


@pytest.mark.parametrize("n", [16, 32, 48, 64])
def test_grid_invariants(n):
    g = build_grid(n)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert np.all(np.diff(g.nodes) > 0)
    assert np.all(g.weights > 0)
    assert abs(g.weights.sum() - 1.0) < 1e-12
    assert np.abs(g.D1 @ np.ones(n)).max() < 1e-12
    # D2 agrees with the square of D1 far below the stated 1e-10
    rel = np.linalg.norm(g.D2 - g.D1 @ g.D1) / np.linalg.norm(g.D2)
    assert rel < 1e-10
    # node set symmetric under y -> 1-y (absolute, the map loses low bits)
    assert np.abs(g.nodes - (1.0 - g.nodes[::-1])).max() < 1e-15
    assert np.array_equal(g.weights, g.weights[::-1])


@pytest.mark.parametrize("n", [15, 14, 17, 8, 0])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(ValueError):
        build_grid(n)


def test_first_derivative_exact_on_quadratic():
    g = build_grid(32)
    y = g.nodes
    assert np.abs(g.D1 @ y**2 - 2 * y).max() <= 1e-10


def test_fourth_derivative_on_quartic():
    # Float64 floor: applying a fourth-derivative matrix amplifies rounding
    # by ~eps * n^8, so exactness on quartics holds to ~1e-5 at n=32, not
    # to the last digit.
    g = build_grid(32)
    y = g.nodes
    assert np.abs(g.D4 @ y**4 - 24.0).max() <= 1e-5


def test_quadrature_normalization():
    g = build_grid(32)
    assert abs((g.weights * np.ones(g.n)).sum() - 1.0) < 1e-14


def test_inner_examples():
    g = build_grid(64)
    one = np.ones(g.n)
    assert inner(one, one, g) == pytest.approx(1.0, abs=1e-14)
    s = np.sin(np.pi * g.nodes)
    assert inner(s, s, g) == pytest.approx(0.5, abs=1e-10)
    assert inner(g.nodes, one, g) == pytest.approx(0.5, abs=1e-12)


def test_inner_conjugate_symmetric_exactly():
    g = build_grid(16)
    rng = np.random.default_rng(0)
    f = rng.normal(size=g.n) + 1j * rng.normal(size=g.n)
    h = rng.normal(size=g.n) + 1j * rng.normal(size=g.n)
    assert inner(f, h, g) == np.conj(inner(h, f, g))


def test_inner_length_mismatch():
    g = build_grid(16)
    with pytest.raises(ValueError):
        inner(np.ones(8), np.ones(g.n), g)


def test_reflect_examples():
    g = build_grid(32)
    y = g.nodes
    assert np.array_equal(reflect(np.full(g.n, 3.7), g), np.full(g.n, 3.7))
    assert np.abs(reflect(y, g) - (1.0 - y)).max() < 1e-15
    s2 = np.sin(2 * np.pi * y)
    assert np.abs(reflect(s2, g) + s2).max() < 1e-13


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_reflect_is_involution_and_isometry(seed):
    g = build_grid(16)
    rng = np.random.default_rng(seed)
    f = rng.normal(size=g.n) + 1j * rng.normal(size=g.n)
    assert np.array_equal(reflect(reflect(f, g), g), f)
    assert inner(reflect(f, g), reflect(f, g), g) == pytest.approx(
        inner(f, f, g), rel=1e-14
    )


def test_spectral_accuracy_exponential():
    # exp is entire: the derivative error is already at the rounding floor
    # for every n here, i.e. it decayed faster than any power before n=16.
    for n in (16, 24, 32, 48):
        g = build_grid(n)
        f = np.exp(g.nodes)
        assert np.abs(g.D1 @ f - f).max() < 1e-11


def test_poincare_inequality_on_vanishing_polynomials():
    g = build_grid(64)
    y = g.nodes
    rng = np.random.default_rng(42)
    for _ in range(100):
        coeffs = rng.normal(size=7)
        f = y * (1.0 - y) * np.polyval(coeffs, y)
        lhs = 2.0 * inner(f, f, g).real
        rhs = inner(g.D1 @ f, g.D1 @ f, g).real
        assert lhs <= rhs + 1e-9


def test_barycentric_interpolation():
    g = build_grid(32)
    f = np.exp(g.nodes) * np.sin(3 * g.nodes)
    ynew = np.linspace(0.05, 0.95, 17)
    exact = np.exp(ynew) * np.sin(3 * ynew)
    assert np.abs(interpolate(f, g, ynew) - exact).max() < 1e-12
    # exact hit on a node
    assert interpolate(f, g, g.nodes[5]) == pytest.approx(f[5], rel=0, abs=0)
