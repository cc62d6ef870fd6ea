import numpy as np
import pytest
from dataclasses import replace

from channelstab.grid import build_grid, inner
from channelstab.operators import (
    ModeIndex,
    UnsupportedModeError,
    assemble_E,
    assemble_F,
    assemble_L,
    assemble_adjoint,
    assemble_pencil,
    export_pencil,
)
from channelstab.spectra import filtered_eig
from channelstab.steady import PhysParams, SteadyState, build_steady_state


def zero_interface(steady):
    """Decoupled variant: antisymmetric profile switched off."""
    return replace(steady, phi_inf=np.zeros_like(steady.phi_inf))


def clamped_sample(rng, grid, degree=8):
    y = grid.nodes
    base = sum(
        (rng.normal() + 1j * rng.normal()) * np.cos(m * np.pi * y) for m in range(degree)
    )
    return y**2 * (1 - y) ** 2 * base


def neumann_sample(rng, grid, degree=8):
    y = grid.nodes
    return sum(
        (rng.normal() + 1j * rng.normal()) * np.cos(m * np.pi * y) for m in range(degree)
    )


def test_L_dirichlet_spectrum(grid64):
    L = assemble_L(ModeIndex(1, 1), grid64)
    lam = np.sort(np.linalg.eigvals(L[1:-1, 1:-1]).real)[:5]
    exact = np.array([(m * np.pi) ** 2 + 2 for m in range(1, 6)])
    assert np.abs(lam - exact).max() / exact.min() <= 1e-8


def test_L_on_sine(grid64):
    y = grid64.nodes
    s = np.sin(np.pi * y)
    L0 = assemble_L(ModeIndex(0, 0), grid64)
    assert np.abs((L0 @ s - np.pi**2 * s)[1:-1]).max() <= 1e-8
    L11 = assemble_L(ModeIndex(1, 1), grid64)
    assert np.abs((L11 @ s - (np.pi**2 + 2) * s)[1:-1]).max() <= 1e-8


def test_F_reduces_at_k0(grid64, steady_mild):
    p = steady_mild.params
    F = assemble_F(ModeIndex(0, 2), grid64, steady_mild.U, p)
    l2 = 4.0
    ref = p.nu * (grid64.D4 - 2 * l2 * grid64.D2 + l2**2 * np.eye(grid64.n))
    assert np.abs(F[2:-2] - ref[2:-2]).max() <= 1e-9 * np.abs(ref).max()


def test_F_quartic(grid64, steady_mild):
    # v -> v'''' on the clamped quartic; float64 floor of the composed
    # fourth-derivative rows keeps this at ~1e-7, not machine precision.
    y = grid64.nodes
    F = assemble_F(ModeIndex(0, 0), grid64, steady_mild.U, steady_mild.params)
    out = F @ (y**2 * (1 - y) ** 2)
    assert np.abs(out[2:-2] - 24.0).max() <= 5e-7


def test_F_adjoint_consistency(grid64, steady_mild):
    # Extended-precision pairing isolates the operators' mutual adjointness
    # from the near-wall float64 matvec floor of fourth-derivative rows.
    p = steady_mild.params
    mode = ModeIndex(2, 1)
    F = assemble_F(mode, grid64, steady_mild.U, p, raw=True).astype(np.clongdouble)
    Fs = assemble_F(mode, grid64, steady_mild.U, p, adjoint=True, raw=True).astype(np.clongdouble)
    w_ld = grid64.weights.astype(np.longdouble)
    rng = np.random.default_rng(5)
    for _ in range(20):
        v = clamped_sample(rng, grid64, degree=5).astype(np.clongdouble)
        w = clamped_sample(rng, grid64, degree=5).astype(np.clongdouble)
        lhs = complex((w_ld * ((F @ v) * np.conj(w))).sum())
        rhs = complex((w_ld * (v * np.conj(Fs @ w))).sum())
        assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), 1.0)


def test_E_cosine_eigenpairs(grid64, steady_mild):
    # Pointwise residual sits at the float64 floor of the fourth-derivative
    # rows (~3e-7 relative for the slowest pair at n=64).
    p = steady_mild.params
    gamma = steady_mild.gamma
    E = assemble_E(ModeIndex(0, 0), grid64, steady_mild.U, gamma, p)
    y = grid64.nodes
    for m in range(1, 5):
        f = np.cos(m * np.pi * y)
        lam = p.rho0 * p.eps * (m * np.pi) ** 4 + gamma * (m * np.pi) ** 2
        r = E @ f - lam * f
        assert np.abs(r[2:-2]).max() <= 5e-7 * lam


def test_E_annihilates_constants(grid64, steady_mild):
    E = assemble_E(ModeIndex(0, 0), grid64, steady_mild.U, steady_mild.gamma,
                   steady_mild.params)
    assert np.abs(E @ np.ones(grid64.n)).max() <= 1e-2  # scaled by |D4| rows
    assert np.abs((E @ np.ones(grid64.n))[2:-2]).max() <= 1e-5


def test_E_with_advection_matches_symbolic(grid64, steady_mild):
    p = steady_mild.params
    gamma = steady_mild.gamma
    mode = ModeIndex(1, 0)
    E = assemble_E(mode, grid64, steady_mild.U, gamma, p)
    y = grid64.nodes
    f = np.cos(np.pi * y)
    analytic = (
        p.rho0 * p.eps * np.pi**4 * f
        + (2 * p.rho0 * p.eps + gamma) * np.pi**2 * f
        + (p.rho0 * p.eps + gamma + 1j * steady_mild.U) * f
    )
    assert np.abs((E @ f - analytic)[2:-2]).max() <= 5e-7 * np.abs(analytic).max()


def test_pencil_requires_actuated_mode(grid64, steady_mild):
    with pytest.raises(UnsupportedModeError):
        assemble_pencil(ModeIndex(0, 1), grid64, steady_mild)


def test_pencil_decouples_without_interface(grid64, steady_mild):
    n = grid64.n
    pen = assemble_pencil(ModeIndex(1, 1), grid64, zero_interface(steady_mild))
    assert np.abs(pen.K[:n, n:]).max() == 0.0
    assert np.abs(pen.K[n:, :n]).max() == 0.0


def test_pencil_conjugation_symmetry(grid64, steady_mild):
    a = assemble_pencil(ModeIndex(2, 1), grid64, steady_mild)
    b = assemble_pencil(ModeIndex(-2, -1), grid64, steady_mild)
    assert np.abs(b.K - np.conj(a.K)).max() == 0.0
    assert np.abs(b.M - np.conj(a.M)).max() == 0.0
    assert np.abs(b.input_map[0] - np.conj(a.input_map[0])).max() == 0.0


def test_decoupled_spectrum_is_union_of_blocks(grid64, steady_mild):
    n = grid64.n
    pen = assemble_pencil(ModeIndex(1, 1), grid64, zero_interface(steady_mild))
    lams, _, _ = filtered_eig(pen.K, pen.M, grid64, "full")
    lv, _, _ = filtered_eig(pen.K[:n, :n], pen.M[:n, :n], grid64, "vblock")
    lp, _, _ = filtered_eig(pen.K[n:, n:], pen.M[n:, n:], grid64, "pblock")
    union = np.concatenate([lv, lp])
    # compare the slowest 24 (well-resolved) eigenvalues
    lams = lams[np.argsort(-lams.real)][:24]
    for lam in lams:
        d = np.abs(union - lam).min()
        assert d <= 1e-7 * max(1.0, abs(lam))


def test_adjoint_is_involution(grid64, steady_mild):
    pen = assemble_pencil(ModeIndex(1, 2), grid64, steady_mild)
    back = assemble_adjoint(assemble_adjoint(pen, grid64), grid64)
    assert np.abs(back.K - pen.K).max() <= 1e-12
    assert np.abs(back.M - pen.M).max() <= 1e-12


def duality_error(mode, grid, steady, rng, n_pairs=30, degree=5):
    """Worst form-normalized defect of <K x, y> = <x, K* y>.

    Pairs the pure differential rows (the bordered constraint rows are not
    operator values) in extended precision, normalized by the form scale.
    """
    from channelstab.operators import differential_stiffness

    Kd = differential_stiffness(mode, grid, steady).astype(np.clongdouble)
    Ka = differential_stiffness(mode, grid, steady, adjoint=True).astype(np.clongdouble)
    w2 = np.concatenate([grid.weights, grid.weights]).astype(np.longdouble)

    def wnorm(a):
        return float(np.sqrt((w2 * np.abs(a) ** 2).sum()))

    worst = 0.0
    for _ in range(n_pairs):
        x = np.concatenate(
            [clamped_sample(rng, grid, degree), neumann_sample(rng, grid, degree)]
        ).astype(np.clongdouble)
        y = np.concatenate(
            [clamped_sample(rng, grid, degree), neumann_sample(rng, grid, degree)]
        ).astype(np.clongdouble)
        Kx, Ky = Kd @ x, Ka @ y
        lhs = complex((w2 * (Kx * np.conj(y))).sum())
        rhs = complex((w2 * (x * np.conj(Ky))).sum())
        den = max(abs(lhs), abs(rhs), wnorm(Kx) * wnorm(y), wnorm(x) * wnorm(Ky))
        worst = max(worst, abs(lhs - rhs) / den)
    return worst


def test_adjoint_duality_identity(grid64, steady_mild):
    rng = np.random.default_rng(7)
    assert duality_error(ModeIndex(1, 1), grid64, steady_mild, rng) <= 1e-8


def test_adjoint_mass_duality(grid64, steady_mild):
    pen = assemble_pencil(ModeIndex(1, 1), grid64, steady_mild)
    adj = assemble_adjoint(pen, grid64)
    rng = np.random.default_rng(9)
    w2 = np.concatenate([grid64.weights, grid64.weights])
    x = np.concatenate([clamped_sample(rng, grid64), neumann_sample(rng, grid64)])
    y = np.concatenate([clamped_sample(rng, grid64), neumann_sample(rng, grid64)])
    lhs = (w2 * ((pen.M @ x) * np.conj(y))).sum()
    rhs = (w2 * (x * np.conj(adj.M @ y))).sum()
    assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1.0)


def test_adjoint_blocks_decouple(grid64, steady_mild):
    n = grid64.n
    adj = assemble_adjoint(
        assemble_pencil(ModeIndex(1, 1), grid64, zero_interface(steady_mild)), grid64
    )
    assert np.abs(adj.K[:n, n:]).max() == 0.0
    assert np.abs(adj.K[n:, :n]).max() == 0.0


def test_export_layout(tmp_path, grid64, steady_mild):
    pen = assemble_pencil(ModeIndex(1, 0), grid64, steady_mild)
    header_path = export_pencil(pen, tmp_path / "mode_1_0")
    import json

    header = json.loads(header_path.read_text())
    assert header["dim"] == 2 * grid64.n
    assert header["bc_rows"] == list(pen.bc_rows)
    raw = (tmp_path / header["matrices"]["K"]).read_bytes()
    K = np.frombuffer(raw, dtype="<c16").reshape(header["dim"], header["dim"])
    assert np.array_equal(K, pen.K)
