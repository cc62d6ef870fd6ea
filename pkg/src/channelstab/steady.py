"""Equilibrium of the channel mixture: base flow and target concentration.

The linearization is taken around a parabolic base flow U(y), a steady
concentration profile phi_tg(y) solving the stationary double-well problem
with Neumann walls, its antisymmetric part phi_inf about the midline, and
the scalar gamma (the mean of the linearized potential curvature, scaled
by mobility and potential strength).
"""

import json
from dataclasses import dataclass, asdict, replace

import numpy as np

from .grid import Grid, build_grid, inner, reflect

__all__ = [
    "PhysParams",
    "SteadyState",
    "ConvergenceError",
    "poiseuille",
    "upsilon",
    "solve_target_concentration",
    "antisymmetric_part",
    "gamma_coefficient",
    "check_H0",
    "build_steady_state",
    "default_kink_guess",
]


class ConvergenceError(RuntimeError):
    """Raised when the concentration solver fails; carries the last residual."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class PhysParams:
    """Physical coefficients; all strictly positive.

    nu: kinematic viscosity, kappa: capillarity, eps: interface thickness
    parameter, alpha: potential strength, rho0: mobility, C_U: amplitude of
    the parabolic base flow.
    """

    nu: float = 1.0
    kappa: float = 1.0
    eps: float = 0.01
    alpha: float = 1.0
    rho0: float = 1.0
    C_U: float = 1.0

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not val > 0:
                raise ValueError(f"parameter {name} must be > 0, got {val}")


@dataclass(frozen=True)
class SteadyState:
    """Sampled equilibrium plus the coefficients derived from it."""

    U: np.ndarray
    phi_tg: np.ndarray
    phi_inf: np.ndarray
    gamma: float
    params: PhysParams

    def to_json(self, grid: Grid) -> str:
        payload = {
            "n": grid.n,
            "nodes": grid.nodes.tolist(),
            "U": self.U.tolist(),
            "phi_tg": self.phi_tg.tolist(),
            "phi_inf": self.phi_inf.tolist(),
            "gamma": self.gamma,
            "params": asdict(self.params),
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str):
        payload = json.loads(text)
        params = PhysParams(**payload["params"])
        state = SteadyState(
            U=np.asarray(payload["U"]),
            phi_tg=np.asarray(payload["phi_tg"]),
            phi_inf=np.asarray(payload["phi_inf"]),
            gamma=float(payload["gamma"]),
            params=params,
        )
        return state, build_grid(int(payload["n"]))


def poiseuille(params: PhysParams, grid: Grid):
    """Samples of the parabolic base flow U(y) = -C_U (y^2 - y)."""
    y = grid.nodes
    return -params.C_U * (y**2 - y)


def default_kink_guess(params: PhysParams, grid: Grid):
    """tanh interface profile centered on the midline; the standard seed."""
    delta = np.sqrt(2.0 * params.eps / params.alpha)
    return np.tanh((grid.nodes - 0.5) / delta)


def upsilon(phi, params: PhysParams, grid: Grid) -> float:
    """Discrete free energy: eps/2 |phi'|^2 + alpha (phi^2-1)^2 / 4."""
    dphi = grid.D1 @ phi
    density = 0.5 * params.eps * dphi**2 + 0.25 * params.alpha * (phi**2 - 1.0) ** 2
    return float((grid.weights * density).sum())


def _residual(phi, params, grid):
    res = -params.eps * (grid.D2 @ phi) + params.alpha * (phi**3 - phi)
    res[0] = grid.D1[0] @ phi
    res[-1] = grid.D1[-1] @ phi
    return res


def _newton(phi, params, grid, tol, max_iter=60):
    phi = phi.copy()
    for _ in range(max_iter):
        res = _residual(phi, params, grid)
        rnorm = np.max(np.abs(res))
        if rnorm <= tol:
            return phi, rnorm
        jac = -params.eps * grid.D2 + params.alpha * np.diag(3.0 * phi**2 - 1.0)
        jac[0] = grid.D1[0]
        jac[-1] = grid.D1[-1]
        step = np.linalg.solve(jac, res)
        lam = 1.0
        for _ in range(30):
            trial = phi - lam * step
            if np.max(np.abs(_residual(trial, params, grid))) < rnorm:
                phi = trial
                break
            lam *= 0.5
        else:
            break
    return phi, np.max(np.abs(_residual(phi, params, grid)))


def _gradient_flow(phi, params, grid, steps=4000, dtau=None):
    # Semi-implicit descent on the free energy; used only to pull a stalled
    # Newton iterate into a basin of attraction.
    if dtau is None:
        dtau = 0.5 / (params.alpha * 3.0)
    A = np.eye(grid.n) + dtau * params.eps * (-grid.D2)
    A[0] = grid.D1[0]
    A[-1] = grid.D1[-1]
    lu = np.linalg.inv(A)
    for _ in range(steps):
        rhs = phi - dtau * params.alpha * (phi**3 - phi)
        rhs[0] = 0.0
        rhs[-1] = 0.0
        phi = lu @ rhs
    return phi


def solve_target_concentration(params: PhysParams, grid: Grid, init=None, tol=1e-9):
    """Solve the stationary concentration problem with Neumann walls.

    Damped Newton on the collocation residual, with the two boundary rows
    replaced by first-derivative conditions.  If Newton stalls, a
    semi-implicit gradient flow of the free energy restarts it.  Among the
    converged candidates the one with the lowest discrete free energy is
    returned.
    """
    if init is None:
        init = default_kink_guess(params, grid)
    init = np.asarray(init, dtype=float)

    candidates = []
    phi, rnorm = _newton(init, params, grid, tol)
    if rnorm <= tol:
        candidates.append(phi)
    else:
        relaxed = _gradient_flow(init, params, grid)
        phi2, rnorm2 = _newton(relaxed, params, grid, tol)
        if rnorm2 <= tol:
            candidates.append(phi2)
        rnorm = min(rnorm, rnorm2)
    if not candidates:
        raise ConvergenceError("target concentration solve failed", rnorm)
    best = min(candidates, key=lambda c: upsilon(c, params, grid))
    return best


def antisymmetric_part(phi_tg, grid: Grid):
    """Antisymmetric part about the midline: (phi(y) - phi(1-y)) / 2."""
    phi_tg = np.asarray(phi_tg)
    return 0.5 * (phi_tg - reflect(phi_tg, grid))


def gamma_coefficient(phi_tg, params: PhysParams, grid: Grid) -> float:
    """rho0 * alpha times the mean of the potential curvature 3 phi^2 - 1."""
    phi_tg = np.asarray(phi_tg)
    return float(params.rho0 * params.alpha * (grid.weights * (3.0 * phi_tg**2 - 1.0)).sum())


def check_H0(phi_tg, grid: Grid) -> bool:
    """Admissibility of the target profile: 3 * int(phi^2) - 1 >= 0."""
    phi_tg = np.asarray(phi_tg)
    value = 3.0 * (grid.weights * phi_tg**2).sum() - 1.0
    return bool(value >= -1e-12)


def build_steady_state(params: PhysParams, grid: Grid, init=None) -> SteadyState:
    """Assemble the full equilibrium record used by the operator stack."""
    U = poiseuille(params, grid)
    phi_tg = solve_target_concentration(params, grid, init=init)
    phi_inf = antisymmetric_part(phi_tg, grid)
    gamma = gamma_coefficient(phi_tg, params, grid)
    return SteadyState(U=U, phi_tg=phi_tg, phi_inf=phi_inf, gamma=gamma, params=params)
