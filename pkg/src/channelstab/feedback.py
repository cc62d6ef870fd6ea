"""Explicit stabilizing wall gains for one actuated Fourier mode.

Given a mode's unstable eigenvalues, the matching dual eigenvectors and
their wall traces, the controller is assembled from resolvent-shift
diagonals Lambda_i = diag(1/(gamma_i + lambda_j)), the trace Gram matrix
R = l l^H, the shifted family R_i = conj(Lambda_i) R Lambda_i and the
inverse of their sum.  The scalar feedback is a single linear functional
of the stacked state,

    Omega(x) = (1/nu) * (Lambda_sum l)^T conj(R_big) p(x),

where p_j(x) pairs the state (in Helmholtz form) against the j-th dual
eigenvector.  In the unstable coordinates the closed loop then reduces
exactly to z' = -(sum_i gamma_i Rt_i) (sum_i Rt_i)^{-1} z with
Rt_i = conj(R_i), whose abscissa is at most -gamma_1 for any spectrum
(Lyapunov function z^H (sum Rt_i)^{-1} z), so the gamma ladder sets the
guaranteed contraction rate.

The wall values follow as s = -(i/k) Omega and t = conj(a) (i/k) Omega,
which fold into the boundary rows as v'(0) = -Omega, v'(1) = conj(a) Omega.
The lifting solve translates a wall datum into an interior field and
feeds the module's strongest self-test: the pairing of the lifted field
against dual eigenvector j must equal -nu*psi*conj(l_j)/(lambda_j+gamma_i).
"""

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .operators import ModeIndex, ModePencil
from .spectra import ActuatorChoice, EigenSet

__all__ = [
    "GainSet",
    "GammaSelectionError",
    "InvertibilityError",
    "projection_rows",
    "choose_gamma_sequence",
    "build_R_matrices",
    "build_gains",
    "omega",
    "boundary_values",
    "lifting_solve",
    "lifting_identity_residual",
    "closed_loop_reduced",
    "unstable_block_closed_loop",
    "gain_report",
]

COND_LIMIT = 1e12


class GammaSelectionError(RuntimeError):
    pass


class InvertibilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class GainSet:
    """Per-mode gain data; immutable once built.

    row_functional realizes Omega as one dot product with the stacked
    (v, phi) state; wall_coef is the actuator coefficient (a or b) this
    mode's wall combination uses.
    """

    mode: ModeIndex
    gammas: np.ndarray
    Lambda_sum: np.ndarray
    R_big: np.ndarray
    l_vec: np.ndarray
    row_functional: np.ndarray
    wall_coef: complex
    cond_sum: float
    base: float
    nu: float


def projection_rows(eig_set: EigenSet, grid: Grid):
    """Rows realizing x -> <(L v, phi), dual_j> as plain dot products."""
    n = grid.n
    N = eig_set.N_unstable
    L_diff = -grid.D2 + eig_set.mode.s2 * np.eye(n)
    P = np.empty((N, 2 * n), dtype=complex)
    for j in range(N):
        wz = grid.weights * np.conj(eig_set.left[:n, j])
        wp = grid.weights * np.conj(eig_set.left[n:, j])
        P[j, :n] = L_diff.T @ wz
        P[j, n:] = wp
    return P


def _wall_coef(mode: ModeIndex, actuator: ActuatorChoice) -> complex:
    return complex(actuator.b if mode.l == 0 else actuator.a)


def _lifting_matrix(gamma, pencil: ModePencil, eig_set: EigenSet, grid: Grid):
    n = grid.n
    A = pencil.K + gamma * pencil.M
    N = eig_set.N_unstable
    if N:
        P = projection_rows(eig_set, grid)
        rank_term = np.zeros_like(A)
        for j in range(N):
            rank_term += 2.0 * eig_set.lambdas[j] * np.outer(eig_set.right[:, j], P[j])
        for r in pencil.bc_rows:
            rank_term[r, :] = 0.0
        A = A + rank_term
    return A


def _solve_equilibrated(A, rhs):
    scale = np.abs(A).max(axis=1)
    s = 1.0 / np.where(scale > 0, scale, 1.0)
    return np.linalg.solve(A * s[:, None], rhs * s)


def choose_gamma_sequence(pencil: ModePencil, eig_set: EigenSet, actuator: ActuatorChoice,
                          grid: Grid, base=None, max_doublings=8):
    """Geometric gamma ladder, certified by the lifting system's conditioning.

    gamma_i = base * 2^(i-1) with base defaulting to 10*(1 + max |lambda_j|)
    over the unstable block.  Each ladder is accepted only if every lifting
    matrix is comfortably invertible; otherwise the base doubles.
    """
    N = eig_set.N_unstable
    if N < 1:
        raise ValueError("gamma sequence requested for a mode with no unstable part")
    if base is None:
        base = 10.0 * (1.0 + np.abs(eig_set.lambdas[:N]).max())
    base = float(base)
    for _ in range(max_doublings + 1):
        gammas = base * 2.0 ** np.arange(N)
        ok = True
        for g in gammas:
            A = _lifting_matrix(g, pencil, eig_set, grid)
            scale = np.abs(A).max(axis=1)
            s = 1.0 / np.where(scale > 0, scale, 1.0)
            sv = np.linalg.svd(A * s[:, None], compute_uv=False)
            if sv[-1] <= 1e-10 * sv[0]:
                ok = False
                break
        if ok:
            return gammas
        base *= 2.0
    raise GammaSelectionError(
        f"mode {tuple(pencil.mode)}: no certified gamma ladder after {max_doublings} doublings"
    )


def build_R_matrices(l_vec, lambdas, gammas):
    """Trace Gram matrix, its resolvent-shifted family, and the inverted sum.

    Returns (R, R_list, R_big, Lambda_sum, cond_sum).  Raises when the sum
    is numerically singular (condition number beyond 1e12).
    """
    l_vec = np.asarray(l_vec, dtype=complex)
    lambdas = np.asarray(lambdas, dtype=complex)
    gammas = np.asarray(gammas, dtype=float)
    N = l_vec.size
    if np.any(np.abs(l_vec) == 0.0):
        raise InvertibilityError("zero wall-trace combination in l_vec")
    R = np.outer(l_vec, np.conj(l_vec))
    Lams = [np.diag(1.0 / (g + lambdas)) for g in gammas]
    R_list = [np.conj(L) @ R @ L for L in Lams]
    S = np.zeros((N, N), dtype=complex)
    for Ri in R_list:
        S += Ri
    cond = float(np.linalg.cond(S))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise InvertibilityError(f"sum of shifted Gram matrices has condition {cond:.3g}")
    R_big = np.linalg.inv(S)
    Lambda_sum = np.conj(sum(Lams, np.zeros((N, N), dtype=complex)))
    return R, R_list, R_big, Lambda_sum, cond


def build_gains(pencil: ModePencil, eig_set: EigenSet, actuator: ActuatorChoice,
                grid: Grid, base=None) -> GainSet:
    """Assemble the full gain record for one actuated unstable mode."""
    N = eig_set.N_unstable
    if N < 1:
        raise ValueError(f"mode {tuple(pencil.mode)} has no unstable part; no gains needed")
    coef = _wall_coef(pencil.mode, actuator)
    l_vec = np.array(
        [eig_set.traces[j, 0] + coef * eig_set.traces[j, 1] for j in range(N)], dtype=complex
    )
    gammas = choose_gamma_sequence(pencil, eig_set, actuator, grid, base=base)
    _, _, R_big, Lambda_sum, cond = build_R_matrices(l_vec, eig_set.lambdas[:N], gammas)
    nu = pencil.steady.params.nu
    alpha = (Lambda_sum @ l_vec) @ np.conj(R_big) / nu  # Omega = alpha . p
    row = projection_rows(eig_set, grid).T @ alpha
    return GainSet(
        mode=pencil.mode,
        gammas=gammas,
        Lambda_sum=Lambda_sum,
        R_big=R_big,
        l_vec=l_vec,
        row_functional=row,
        wall_coef=coef,
        cond_sum=cond,
        base=float(gammas[0]),
        nu=float(nu),
    )


def omega(state, gains: GainSet, eig_set: EigenSet, grid: Grid) -> complex:
    """Feedback functional evaluated from first principles (mode-local form).

    Pairs the state's Helmholtz form against each dual eigenvector by
    quadrature; row_functional reproduces this as a single dot product.
    """
    state = np.asarray(state)
    if state.shape != (2 * grid.n,):
        raise ValueError(f"expected stacked state of length {2 * grid.n}")
    if gains.mode != eig_set.mode:
        raise ValueError("gain set and eigen set belong to different modes")
    n = grid.n
    N = gains.l_vec.size
    L_diff = -grid.D2 + gains.mode.s2 * np.eye(n)
    z = L_diff @ state[:n]
    p = np.array(
        [
            (grid.weights * (z * np.conj(eig_set.left[:n, j]))).sum()
            + (grid.weights * (state[n:] * np.conj(eig_set.left[n:, j]))).sum()
            for j in range(N)
        ]
    )
    alpha = (gains.Lambda_sum @ gains.l_vec) @ np.conj(gains.R_big)
    return complex(alpha @ p) / gains.nu


def boundary_values(omega_value, mode: ModeIndex, actuator: ActuatorChoice):
    """Wall values (s, t) realizing v'(0) = -Omega and v'(1) = conj(coef)*Omega."""
    mode = ModeIndex(*mode)
    if mode.k == 0:
        raise ValueError("wall values are defined for actuated modes (k != 0) only")
    coef = _wall_coef(mode, actuator)
    s = -1j / mode.k * omega_value
    t = np.conj(coef) * 1j / mode.k * omega_value
    return s, t


def lifting_solve(gamma_i, psi, pencil: ModePencil, eig_set: EigenSet,
                  actuator: ActuatorChoice, grid: Grid):
    """Interior field carrying the wall datum psi at shift gamma_i.

    Solves the bordered system whose interior rows are the mode operator
    plus gamma_i times the mass plus the rank-N eigenvector correction,
    with V'(0) = -psi, V'(1) = conj(coef)*psi and homogeneous remaining
    rows.  Returns the stacked (V, Phi) samples.
    """
    n = grid.n
    A = _lifting_matrix(gamma_i, pencil, eig_set, grid)
    rhs = np.zeros(2 * n, dtype=complex)
    rhs[1] = -psi
    rhs[n - 2] = np.conj(_wall_coef(pencil.mode, actuator)) * psi
    return _solve_equilibrated(A, rhs)


def lifting_identity_residual(pencil: ModePencil, eig_set: EigenSet, gains: GainSet,
                              actuator: ActuatorChoice, grid: Grid, psi=1.0):
    """Worst relative error of the lifting self-test over all (gamma_i, j).

    The pairing of the lifted field against dual eigenvector j must equal
    -nu * psi * conj(l_j) / (lambda_j + gamma_i); both sides are computed
    independently.
    """
    N = eig_set.N_unstable
    nu = pencil.steady.params.nu
    P = projection_rows(eig_set, grid)
    worst = 0.0
    for g in gains.gammas:
        x = lifting_solve(g, psi, pencil, eig_set, actuator, grid)
        q = P @ x
        expected = -nu * psi * np.conj(gains.l_vec) / (eig_set.lambdas[:N] + g)
        err = np.abs(q - expected) / np.abs(expected)
        worst = max(worst, float(err.max()))
    return worst


def closed_loop_reduced(gains: GainSet, eig_set: EigenSet):
    """The contraction matrix of the transformed unstable coordinates.

    -gamma_1 I + sum_{i>=2} (gamma_1 - gamma_i) R_i R_big; its abscissa is
    negative for every admissible gain set.
    """
    N = gains.l_vec.size
    _, R_list, R_big, _, _ = build_R_matrices(gains.l_vec, eig_set.lambdas[:N], gains.gammas)
    A = -gains.gammas[0] * np.eye(N, dtype=complex)
    for i in range(1, N):
        A += (gains.gammas[0] - gains.gammas[i]) * R_list[i] @ R_big
    return A


def unstable_block_closed_loop(gains: GainSet, eig_set: EigenSet):
    """Exact reduced dynamics of the raw unstable projections under feedback."""
    N = gains.l_vec.size
    alpha = (gains.Lambda_sum @ gains.l_vec) @ np.conj(gains.R_big) / gains.nu
    lam = eig_set.lambdas[:N]
    return np.diag(lam) - gains.nu * np.outer(np.conj(gains.l_vec), alpha)


def gain_report(gains: GainSet, eig_set: EigenSet, actuator: ActuatorChoice):
    """JSON-ready summary of one mode's gain set."""
    reduced = closed_loop_reduced(gains, eig_set)
    block = unstable_block_closed_loop(gains, eig_set)
    return {
        "mode": {"k": gains.mode.k, "l": gains.mode.l},
        "gammas": gains.gammas.tolist(),
        "cond_sum": gains.cond_sum,
        "margin": actuator.margin,
        "l_vec": [[z.real, z.imag] for z in gains.l_vec],
        "wall_coef": [gains.wall_coef.real, gains.wall_coef.imag],
        "reduced_abscissa": float(np.linalg.eigvals(reduced).real.max()),
        "unstable_block_abscissa": float(np.linalg.eigvals(block).real.max()),
    }
