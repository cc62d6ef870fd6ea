"""Per-mode operator pencils for the linearized channel mixture.

For a wall-periodic Fourier mode (k, l) the linearized dynamics of the
wall-normal velocity v and the concentration fluctuation phi reduce to a
generalized evolution M x' + K x = 0 on the stacked vector x = (v, phi),
with the boundary conditions carried as bordered algebraic rows (zero rows
in M).  Three scalar differential operators make up the blocks:

* L: second-order Helmholtz form, the mass acting on v,
* F: fourth-order advected bilaplacian acting on v (clamped walls),
* E: fourth-order concentration operator (Neumann-type walls),

plus the interface couplings through the antisymmetric steady profile.
The adjoint pencil realizes the duality partner with respect to the
quadrature inner product; left eigenvectors are its eigenvectors.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .grid import Grid
from .steady import SteadyState

__all__ = [
    "ModeIndex",
    "ModePencil",
    "UnsupportedModeError",
    "assemble_L",
    "assemble_F",
    "assemble_E",
    "assemble_pencil",
    "assemble_adjoint",
    "differential_stiffness",
    "export_pencil",
]


class UnsupportedModeError(ValueError):
    """Raised for (k, l) combinations a routine does not handle."""


class ModeIndex(NamedTuple):
    k: int
    l: int

    @property
    def s2(self) -> int:
        return self.k**2 + self.l**2

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.s2))


@dataclass(frozen=True)
class ModePencil:
    """Mass/stiffness pair M x' + K x = b_s * s(t) + b_t * t(t).

    bc_rows index the algebraic rows (identically zero in M); input_map is
    the pair (b_s, b_t) of forcing columns through which the two wall values
    enter those rows.  The adjoint pencil has homogeneous inputs.
    """

    mode: ModeIndex
    M: np.ndarray
    K: np.ndarray
    bc_rows: tuple
    dim: int
    input_map: tuple
    is_adjoint: bool
    steady: SteadyState

    @property
    def interior_rows(self):
        return np.setdiff1d(np.arange(self.dim), np.asarray(self.bc_rows))


def assemble_L(mode: ModeIndex, grid: Grid):
    """Helmholtz form -v'' + (k^2+l^2) v with Dirichlet endpoint rows."""
    s2 = mode.s2
    A = (-grid.D2 + s2 * np.eye(grid.n)).astype(complex)
    A[0, :] = 0.0
    A[-1, :] = 0.0
    A[0, 0] = 1.0
    A[-1, -1] = 1.0
    return A


def _f_coefficients(mode, grid, U, params, conjugate):
    s2 = mode.s2
    ik = 1j * mode.k
    Upp = -2.0 * params.C_U  # exact second derivative of the parabola
    c2 = 2.0 * params.nu * s2 + ik * U
    c0 = params.nu * s2**2 + ik * s2 * U + ik * Upp
    if conjugate:
        c2, c0 = np.conj(c2), np.conj(c0)
    return c2, np.atleast_1d(c0) * np.ones(grid.n)


def assemble_F(mode: ModeIndex, grid: Grid, U, params, adjoint=False, raw=False):
    """Fourth-order velocity operator with clamped boundary rows.

    Interior rows realize nu v'''' - c2(y) v'' + c0(y) v; the formal adjoint
    (``adjoint=True``) conjugates the coefficients and commutes them past
    the second derivative.  ``raw=True`` keeps the differential rows at the
    boundary (the form used by weak/duality identities).
    """
    c2, c0 = _f_coefficients(mode, grid, U, params, adjoint)
    if adjoint:
        A = params.nu * grid.D4 - grid.D2 @ np.diag(c2) + np.diag(c0)
    else:
        A = params.nu * grid.D4 - np.diag(c2) @ grid.D2 + np.diag(c0)
    A = A.astype(complex)
    if raw:
        return A
    A[0, :] = 0.0
    A[0, 0] = 1.0
    A[-1, :] = 0.0
    A[-1, -1] = 1.0
    A[1, :] = grid.D1[0, :]
    A[-2, :] = grid.D1[-1, :]
    return A


def assemble_E(mode: ModeIndex, grid: Grid, U, gamma, params, adjoint=False, raw=False):
    """Fourth-order concentration operator with Neumann-type traces.

    Interior rows realize rho0*eps phi'''' - e2 phi'' + e0(y) phi with
    constant e2; boundary rows pin the first and third derivatives.
    ``raw=True`` keeps the differential rows at the boundary.
    """
    s2 = mode.s2
    ik = 1j * mode.k
    e2 = 2.0 * params.rho0 * params.eps * s2 + gamma
    e0 = params.rho0 * params.eps * s2**2 + gamma * s2 + ik * U
    if adjoint:
        e0 = np.conj(e0)
    A = (params.rho0 * params.eps * grid.D4 - e2 * grid.D2 + np.diag(e0)).astype(complex)
    if raw:
        return A
    A[0, :] = grid.D1[0, :]
    A[-1, :] = grid.D1[-1, :]
    A[1, :] = grid.D3[0, :]
    A[-2, :] = grid.D3[-1, :]
    return A


def _bc_row_indices(n):
    return (0, 1, n - 2, n - 1, n, n + 1, 2 * n - 2, 2 * n - 1)


def differential_stiffness(mode, grid: Grid, steady: SteadyState, adjoint=False):
    """Stacked spatial operator with pure differential rows everywhere.

    This is the pencil stiffness before any boundary row is replaced; the
    duality identity <K x, y> = <x, K* y> holds against it for
    boundary-compatible pairs (the bordered pencil rows are constraints,
    not operator values).
    """
    mode = ModeIndex(*mode)
    n = grid.n
    s2 = mode.s2
    params = steady.params
    L_diff = -grid.D2 + s2 * np.eye(n)
    dphi = grid.D1 @ steady.phi_inf
    d3phi = grid.D3 @ steady.phi_inf
    ck = params.eps * params.kappa * s2

    F = assemble_F(mode, grid, steady.U, params, adjoint=adjoint, raw=True)
    E = assemble_E(mode, grid, steady.U, steady.gamma, params, adjoint=adjoint, raw=True)
    if adjoint:
        C12 = np.diag(dphi).astype(complex)
        C21 = (-ck * (L_diff @ np.diag(dphi) + np.diag(d3phi))).astype(complex)
    else:
        C12 = (-ck * (np.diag(dphi) @ L_diff + np.diag(d3phi))).astype(complex)
        C21 = np.diag(dphi).astype(complex)

    K = np.zeros((2 * n, 2 * n), dtype=complex)
    K[:n, :n] = F
    K[n:, n:] = E
    K[:n, n:] = C12
    K[n:, :n] = C21
    return K


def _assemble(mode, grid, steady, adjoint):
    n = grid.n
    s2 = mode.s2
    eye = np.eye(n)
    L_diff = -grid.D2 + s2 * eye

    K = differential_stiffness(mode, grid, steady, adjoint=adjoint)
    # bordered boundary rows: values and slopes for v, first and third
    # derivative traces for phi
    K[0, :] = 0.0
    K[0, 0] = 1.0
    K[n - 1, :] = 0.0
    K[n - 1, n - 1] = 1.0
    K[1, :] = 0.0
    K[1, :n] = grid.D1[0, :]
    K[n - 2, :] = 0.0
    K[n - 2, :n] = grid.D1[-1, :]
    K[n, :] = 0.0
    K[n, n:] = grid.D1[0, :]
    K[2 * n - 1, :] = 0.0
    K[2 * n - 1, n:] = grid.D1[-1, :]
    K[n + 1, :] = 0.0
    K[n + 1, n:] = grid.D3[0, :]
    K[2 * n - 2, :] = 0.0
    K[2 * n - 2, n:] = grid.D3[-1, :]

    dim = 2 * n
    M = np.zeros((dim, dim), dtype=complex)
    M[2 : n - 2, :n] = L_diff[2 : n - 2, :]
    M[n + 2 : dim - 2, n:] = eye[2 : n - 2, :]

    b_s = np.zeros(dim, dtype=complex)
    b_t = np.zeros(dim, dtype=complex)
    if not adjoint:
        b_s[1] = -1j * mode.k
        b_t[n - 2] = -1j * mode.k

    return ModePencil(
        mode=mode,
        M=M,
        K=K,
        bc_rows=_bc_row_indices(n),
        dim=dim,
        input_map=(b_s, b_t),
        is_adjoint=adjoint,
        steady=steady,
    )


def assemble_pencil(mode, grid: Grid, steady: SteadyState) -> ModePencil:
    """Build the forward pencil of an actuated mode (k != 0).

    Streamwise-constant modes (k == 0) carry no wall actuation and are
    integrated by their dedicated reduced systems in the simulation layer.
    """
    mode = ModeIndex(*mode)
    if mode.k == 0:
        raise UnsupportedModeError(
            "k = 0 modes have no actuated pencil; use the dedicated k = 0 path"
        )
    return _assemble(mode, grid, steady, adjoint=False)


def assemble_adjoint(pencil: ModePencil, grid: Grid) -> ModePencil:
    """Duality partner of ``pencil`` under the quadrature inner product.

    Eigenvectors of the returned pencil are the left (dual) eigenvectors of
    the forward problem, with conjugated eigenvalues.  Applying this twice
    returns the original pencil entrywise.
    """
    return _assemble(pencil.mode, grid, pencil.steady, adjoint=not pencil.is_adjoint)


def export_pencil(pencil: ModePencil, base):
    """Dump M and K as raw row-major little-endian complex doubles.

    Writes ``<base>.json`` (dimension, boundary rows, layout metadata) next
    to ``<base>_M.bin`` and ``<base>_K.bin``; returns the header path.
    """
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "dim": pencil.dim,
        "bc_rows": list(pencil.bc_rows),
        "dtype": "complex128",
        "byteorder": "little",
        "order": "row-major",
        "mode": {"k": pencil.mode.k, "l": pencil.mode.l},
        "is_adjoint": pencil.is_adjoint,
        "matrices": {"M": base.name + "_M.bin", "K": base.name + "_K.bin"},
    }
    for name in ("M", "K"):
        arr = np.ascontiguousarray(getattr(pencil, name)).astype("<c16")
        (base.parent / header["matrices"][name]).write_bytes(arr.tobytes(order="C"))
    path = base.with_suffix(".json")
    path.write_text(json.dumps(header, indent=2, sort_keys=True))
    return path
