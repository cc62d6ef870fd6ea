import numpy as np
import pytest

from channelstab.grid import build_grid
from channelstab.operators import ModeIndex, assemble_pencil
from channelstab.spectra import (
    LemmaViolationError,
    biorthonormalize,
    boundary_traces_from_left,
    choose_actuators,
    determine_cutoff,
    pair,
    phi00_decay_rates,
    scan_modes,
    select_actuator_coefficient,
    solve_pencil_eigen,
)
from channelstab.steady import PhysParams, build_steady_state

from conftest import DESK


def test_phi00_analytic_spectrum(grid64, steady_mild):
    p = steady_mild.params
    lams = phi00_decay_rates(grid64, steady_mild)
    rates = np.sort(-lams.real)
    assert rates[0] < 1e-6  # conserved mean
    exact = np.array(
        [p.rho0 * p.eps * (m * np.pi) ** 4 + steady_mild.gamma * (m * np.pi) ** 2
         for m in range(1, 5)]
    )
    got = rates[1:5]
    assert np.abs(got - exact).max() / exact.min() <= 1e-7


def test_eigen_residuals_and_count(grid96, steady_desk96):
    pen = assemble_pencil(ModeIndex(2, 0), grid96, steady_desk96)
    es = solve_pencil_eigen(pen, grid96)
    assert es.N_unstable == 1
    assert es.residual_max <= 1e-7
    assert es.lambdas[0].real == pytest.approx(7.754128, abs=1e-4)


def test_unstable_count_grid_independent():
    p = DESK
    for n in (48, 64, 96):
        g = build_grid(n)
        ss = build_steady_state(p, g)
        es = solve_pencil_eigen(assemble_pencil(ModeIndex(2, 0), g, ss), g)
        assert es.N_unstable == 1
        es_stable = solve_pencil_eigen(assemble_pencil(ModeIndex(1, 1), g, ss), g)
        assert es_stable.N_unstable == 0


def test_conjugate_mode_spectrum(grid64, steady_desk):
    a = solve_pencil_eigen(assemble_pencil(ModeIndex(2, 1), grid64, steady_desk), grid64)
    b = solve_pencil_eigen(assemble_pencil(ModeIndex(-2, -1), grid64, steady_desk), grid64)
    na = a.lambdas[np.lexsort((a.lambdas.imag, -a.lambdas.real))][:20]
    # conjugated spectrum, re-sorted the same way
    nb = np.conj(b.lambdas)
    nb = nb[np.lexsort((nb.imag, -nb.real))][:20]
    assert np.abs(na - nb).max() <= 1e-8 * max(1.0, np.abs(na).max())


def test_biorthonormal_block(desk_mode20, grid96):
    _, es, _, _ = desk_mode20
    m = es.block
    P = np.array([[pair(es.right[:, i], es.left[:, j], grid96) for j in range(m)]
                  for i in range(m)])
    assert np.abs(P - np.eye(m)).max() <= 1e-10


def test_biorthonormalize_idempotent(desk_mode20):
    _, es, _, _ = desk_mode20
    again = biorthonormalize(es)
    assert np.abs(again.right - es.right).max() <= 1e-12 * np.abs(es.right).max()


def test_left_vectors_solve_adjoint_problem(grid96, steady_desk96, desk_mode20):
    # The dual family must reproduce the algebraic left eigenvectors'
    # spectral projections on arbitrary states.
    from scipy.linalg import eig

    pen, es, _, _ = desk_mode20
    n = grid96.n
    scale = np.maximum(np.abs(pen.K).max(axis=1), np.abs(pen.M).max(axis=1))
    s = 1.0 / scale
    w, vl, vr = eig(-(pen.K * s[:, None]), pen.M * s[:, None], left=True, right=True)
    j = int(np.argmin(np.abs(w - es.lambdas[0])))
    y = vl[:, j]
    xr = vr[:, j]
    rng = np.random.default_rng(3)
    yv = grid96.nodes
    M = pen.M * s[:, None]

    def proj_alg(x):
        return (np.conj(y) @ (M @ x)) / (np.conj(y) @ (M @ xr))

    L_diff = -grid96.D2 + pen.mode.s2 * np.eye(n)

    def to_z(x):
        return np.concatenate([L_diff @ x[:n], x[n:]])

    def proj_dual(x):
        return pair(to_z(x), es.left[:, 0], grid96) / pair(to_z(xr), es.left[:, 0], grid96)

    for _ in range(10):
        base = sum((rng.normal() + 1j * rng.normal()) * np.cos(m * np.pi * yv)
                   for m in range(6))
        v = yv**2 * (1 - yv) ** 2 * base
        phi = sum((rng.normal() + 1j * rng.normal()) * np.cos(m * np.pi * yv)
                  for m in range(6))
        x = np.concatenate([v, phi])
        a, d = proj_alg(x), proj_dual(x)
        assert abs(a - d) <= 1e-6 * max(abs(a), abs(d))


def test_boundary_trace_examples(grid64):
    y = grid64.nodes
    n = grid64.n
    left = np.zeros((2 * n, 3), dtype=complex)
    left[:n, 0] = y**2 * (1 - y) ** 2
    left[:n, 1] = y**3 * (1 - y) ** 3
    left[:n, 2] = np.sin(2 * np.pi * y)
    tr = boundary_traces_from_left(left, grid64)
    assert tr[0, 0] == pytest.approx(2.0, abs=1e-8)
    assert tr[0, 1] == pytest.approx(2.0, abs=1e-8)
    assert abs(tr[1, 0]) <= 1e-7 and abs(tr[1, 1]) <= 1e-7
    assert tr[2, 0] == pytest.approx(-tr[2, 1], abs=1e-7)


def test_actuator_selection_examples():
    a, margin = select_actuator_coefficient([(1.0, 0.0 + 0j)])
    assert margin == pytest.approx(1.0)
    a, margin = select_actuator_coefficient([(1.0, -1.0)])
    assert abs(a - 1.0) > 1e-9
    assert margin > 0
    a, margin = select_actuator_coefficient([(1.0, -1.0), (1.0, 1.0)])
    assert margin >= 0.5
    # brute-force oracle over the same candidate set
    angles = 2 * np.pi * np.arange(360) / 360
    best = max(
        min(abs(1 + z * (-1)) / 2, abs(1 + z * 1) / 2)
        for r in (0.5, 1.0, 2.0)
        for z in r * np.exp(1j * angles)
    )
    assert margin == pytest.approx(best, rel=1e-12)


def test_actuator_violation():
    with pytest.raises(LemmaViolationError):
        select_actuator_coefficient([(1e-12, 1e-12), (1.0, 0.5)])


def test_actuator_choice_covers_both_branches(desk_mode20):
    _, es, act, _ = desk_mode20
    assert act.margin > 0.01
    assert act.b != 0


def test_cutoff_large_viscosity():
    p = PhysParams(nu=100.0, C_U=1.0)
    g = build_grid(48)
    ss = build_steady_state(p, g)
    M = determine_cutoff(ss, g, eta=0.1, scan_limit=4, threads=8)
    assert M == 1


def test_cutoff_monotone_in_eta(grid64, steady_desk):
    scan = scan_modes(steady_desk, grid64, 4, threads=8)
    M_small = determine_cutoff(steady_desk, grid64, 0.1, 4, scan=scan)
    M_big = determine_cutoff(steady_desk, grid64, 4.0, 4, scan=scan)
    assert M_small <= M_big
    assert M_small == 2


def test_cutoff_validation(grid64, steady_desk):
    with pytest.raises(ValueError):
        determine_cutoff(steady_desk, grid64, -1.0, 4)
    with pytest.raises(ValueError):
        determine_cutoff(steady_desk, grid64, 0.1, 3)
