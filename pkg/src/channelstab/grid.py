"""Chebyshev-Gauss-Lobatto collocation calculus on the unit interval.

Everything downstream (operators, adjoints, eigenproblems, time steppers)
is built on the objects constructed here: nodes on [0, 1], differentiation
matrices up to fourth order, and Clenshaw-Curtis quadrature weights.  The
weights define the discrete L2 inner product that serves as the single
source of truth for all duality pairings.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["Grid", "build_grid", "inner", "reflect", "interpolate"]


@dataclass(frozen=True)
class Grid:
    """Collocation grid on [0, 1].

    Attributes
    ----------
    n : int
        Number of nodes (even, >= 16).
    nodes : ndarray
        Gauss-Lobatto nodes in ascending order; nodes[0] == 0.0 and
        nodes[-1] == 1.0 exactly, and the set is symmetric under y -> 1-y.
    D1, D2, D3, D4 : ndarray
        Dense differentiation matrices, each assembled directly from the
        stored nodes with the negative-sum trick on its diagonal.
    weights : ndarray
        Clenshaw-Curtis quadrature weights, positive, summing to 1.
    """

    n: int
    nodes: np.ndarray
    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    D4: np.ndarray
    weights: np.ndarray


def _lobatto_nodes(n):
    # y_j = sin^2(j*pi/(2N)) maps cos(j*pi/N) from [-1,1] onto ascending [0,1].
    # The upper half is mirrored so the symmetry y -> 1-y is exact in floats.
    N = n - 1
    j = np.arange(n)
    y = np.sin(j * np.pi / (2 * N)) ** 2
    half = (n + 1) // 2
    y[n - half:] = 1.0 - y[:half][::-1]
    return y


def _diff_matrices(nodes, m):
    # Derivative matrices of orders 1..m for the stored nodes, assembled in
    # extended precision so the matrices are exactly consistent with the
    # float64 node values.  Each order gets the negative-sum trick on its
    # diagonal; residual error is the unavoidable eps*n^(2m) float64 floor.
    n = nodes.size
    x = nodes.astype(np.longdouble)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    lam = 1.0 / np.prod(dx, axis=1)  # barycentric weights
    C = lam[None, :] / lam[:, None]
    Z = 1.0 / dx
    np.fill_diagonal(Z, 0.0)

    D = np.eye(n, dtype=np.longdouble)
    out = []
    for ell in range(1, m + 1):
        D = ell * Z * (C * np.diag(D)[:, None] - D)
        np.fill_diagonal(D, -D.sum(axis=1))
        out.append(D.astype(np.float64))
    return out


def _clenshaw_curtis(n):
    # Weights on [-1, 1] for N+1 Lobatto points, ported from the classical
    # recipe; scaled by 1/2 for the unit interval so that sum(w) == 1.
    N = n - 1
    theta = np.pi * np.arange(1, N) / N
    v = np.ones(N - 1)
    if N % 2 == 0:
        wend = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta) / (4 * k**2 - 1)
        v -= np.cos(N * theta) / (N**2 - 1)
    else:
        wend = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta) / (4 * k**2 - 1)
    w = np.empty(n)
    w[0] = w[-1] = wend
    w[1:-1] = 2.0 * v / N
    w *= 0.5
    # Symmetrize so that reflection is an exact isometry of the inner product.
    w = 0.5 * (w + w[::-1])
    return w


def build_grid(n: int) -> Grid:
    """Build the collocation grid with ``n`` nodes.

    ``n`` must be even (so no node sits on the channel midline and the
    reflection map is a pure index reversal) and at least 16.
    """
    if n < 16 or n % 2 != 0:
        raise ValueError(f"node count must be even and >= 16, got {n}")
    nodes = _lobatto_nodes(n)
    D1, D2, D3, D4 = _diff_matrices(nodes, 4)
    weights = _clenshaw_curtis(n)
    return Grid(n=n, nodes=nodes, D1=D1, D2=D2, D3=D3, D4=D4, weights=weights)


def inner(f, g, grid: Grid):
    """Discrete L2(0,1) inner product, conjugate in the second slot.

    Quadrature approximation of the integral of f * conj(g).  The real and
    imaginary parts are accumulated from commutative elementwise products,
    so inner(f, g) == conj(inner(g, f)) holds exactly in floats.
    """
    f = np.asarray(f)
    g = np.asarray(g)
    if f.shape != (grid.n,) or g.shape != (grid.n,):
        raise ValueError(f"expected vectors of length {grid.n}, got {f.shape} and {g.shape}")
    w = grid.weights
    fr, fi = f.real, f.imag
    gr, gi = g.real, g.imag
    re = (w * (fr * gr)).sum() + (w * (fi * gi)).sum()
    im = (w * (fi * gr)).sum() - (w * (fr * gi)).sum()
    return complex(re, im)


def norm(f, grid: Grid) -> float:
    """Discrete L2 norm induced by :func:`inner`."""
    return float(np.sqrt(inner(f, f, grid).real))


def reflect(f, grid: Grid):
    """Samples of y -> f(1-y); an exact involution on this node set."""
    f = np.asarray(f)
    if f.shape[0] != grid.n:
        raise ValueError(f"expected vector of length {grid.n}, got {f.shape}")
    return f[::-1].copy()


def interpolate(f, grid: Grid, ynew):
    """Barycentric interpolation from the collocation grid to new points."""
    f = np.asarray(f)
    ynew = np.atleast_1d(np.asarray(ynew, dtype=float))
    N = grid.n - 1
    j = np.arange(grid.n)
    lam = np.where((j == 0) | (j == N), 0.5, 1.0) * (-1.0) ** j
    out = np.empty(ynew.shape, dtype=f.dtype)
    for i, y in enumerate(ynew):
        d = y - grid.nodes
        hit = np.nonzero(d == 0.0)[0]
        if hit.size:
            out[i] = f[hit[0]]
        else:
            c = lam / d
            out[i] = (c * f).sum() / c.sum()
    return out
