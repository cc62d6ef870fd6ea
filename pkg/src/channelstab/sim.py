"""Closed- and open-loop time integration of the mode systems.

Each (v, phi) mode system is an index-1 differential-algebraic pencil;
one trapezoidal step solves a single bordered linear system whose LU
factorization is cached per mode and step size.  The feedback enters the
boundary rows implicitly (inside the solve), so the step matrix is
time-invariant and no step-size restriction is tied to gain magnitudes.

The tangential velocity components are carried by the normal-vorticity
companion eta = i*l*u - i*k*w, which obeys the scalar advection-diffusion
equation eta_t - nu (eta'' - (k^2+l^2) eta) + i k U eta + i l U' v = 0
(pressure and concentration couplings cancel when the tangential momentum
rows are cross-combined), with wall values i*l*s, i*l*t.  Together with
incompressibility i*k*u + v' + i*l*w = 0 this recovers u and w pointwise.

Streamwise-constant modes are never actuated: at (0, 0) the normal
velocity vanishes, u and w relax diffusively and phi evolves by the
fourth-order operator with its mean carried as an exact invariant; at
(0, l) the reduced clamped (v, phi) system is stepped and u follows its
own forced equation while w = (i/l) v'.
"""

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .config import RunConfig
from .feedback import GainSet, boundary_values
from .grid import Grid
from .operators import ModeIndex, ModePencil, _assemble, assemble_E, assemble_pencil
from .pipeline import ControlDesign, build_design, _parallel
from .spectra import ActuatorChoice, filtered_eig
from .steady import SteadyState

__all__ = [
    "ModeState",
    "FitResult",
    "DecayReport",
    "ModeIntegrator",
    "step_closed_loop",
    "step_open_loop_k0",
    "recover_tangential",
    "initial_state",
    "mode_energy",
    "run_simulation",
    "fit_decay",
    "closed_loop_pencil",
    "closed_loop_abscissa",
    "write_energies_csv",
    "report_payload",
]


@dataclass(frozen=True)
class ModeState:
    """One mode's fields at time t; u and w are recovered diagnostics."""

    mode: ModeIndex
    v: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    w: np.ndarray
    eta: np.ndarray
    t: float


@dataclass(frozen=True)
class FitResult:
    C: float
    eta: float
    envelope: float
    truncated: bool
    degenerate: bool


@dataclass(frozen=True)
class DecayReport:
    times: np.ndarray
    mode_energy: dict
    total: np.ndarray
    fits: dict
    global_fit: FitResult
    M: int
    controlled: tuple
    feedback: bool


def mode_energy(state: ModeState, grid: Grid) -> float:
    """Quadrature energy |u|^2 + |v|^2 + |w|^2 + |phi|^2 of one mode.

    The doubly-constant mode measures the concentration fluctuation around
    its conserved mean: the mean is an exact invariant of the dynamics and
    would otherwise put a floor under every decay fit.
    """
    phi = state.phi
    if state.mode.s2 == 0:
        phi = phi - (grid.weights * phi).sum()
    fields = (state.u, state.v, state.w, phi)
    return float(sum((grid.weights * np.abs(f) ** 2).sum() for f in fields))


def recover_tangential(state: ModeState, grid: Grid):
    """Tangential components from v and the vorticity companion.

    Inverts the pair of pointwise relations i*k*u + i*l*w = -v' and
    i*l*u - i*k*w = eta; undefined for the doubly-constant mode.
    """
    k, l = state.mode
    s2 = state.mode.s2
    if s2 == 0:
        raise ValueError("tangential recovery needs k or l nonzero")
    dv = grid.D1 @ state.v
    u = (1j * k * dv - 1j * l * state.eta) / s2
    w = (1j * l * dv + 1j * k * state.eta) / s2
    return u, w


def closed_loop_pencil(pencil: ModePencil, gains: GainSet):
    """Stiffness with the feedback folded into the two actuated rows."""
    n = pencil.dim // 2
    K = pencil.K.copy()
    K[1, :] += gains.row_functional
    K[n - 2, :] -= np.conj(gains.wall_coef) * gains.row_functional
    return K


def closed_loop_abscissa(pencil: ModePencil, gains: GainSet, grid: Grid) -> float:
    """Spectral abscissa of the mode's generator with feedback active."""
    K = closed_loop_pencil(pencil, gains)
    lams, _, _ = filtered_eig(K, pencil.M, grid, label=f"closed {tuple(pencil.mode)}")
    return float(lams.real.max())


class _PencilStepper:
    """Trapezoidal step of M x' + K x = 0 with algebraic rows held at the new time.

    The step operator inv(M + dt/2 K) (M - dt/2 K) is precomposed (after
    row equilibration) so advancing costs one matrix-vector product.
    """

    def __init__(self, M, K, bc_rows, dt):
        A = M + 0.5 * dt * K
        B = M - 0.5 * dt * K
        for r in bc_rows:
            A[r, :] = K[r, :]
            B[r, :] = 0.0
        scale = np.abs(A).max(axis=1)
        s = 1.0 / np.where(scale > 0, scale, 1.0)
        self._S = np.linalg.solve(A * s[:, None], B * s[:, None])

    def step(self, x):
        return self._S @ x


class _ForcedStepper:
    """Trapezoidal step of y' + K y = f(t) with endpoint value rows.

    bc values are enforced at the new time; the forcing is averaged.
    """

    def __init__(self, K, dt, bc_rows=(0, -1)):
        n = K.shape[0]
        self.n = n
        self.dt = dt
        self.bc_rows = [r % n for r in bc_rows]
        Ieff = np.eye(n, dtype=complex)
        A = Ieff + 0.5 * dt * K
        B = Ieff - 0.5 * dt * K
        for r in self.bc_rows:
            A[r, :] = 0.0
            A[r, r] = 1.0
            B[r, :] = 0.0
        scale = np.abs(A).max(axis=1)
        self._s = 1.0 / np.where(scale > 0, scale, 1.0)
        Ainv = np.linalg.inv(A * self._s[:, None])
        self._S = Ainv @ (B * self._s[:, None])
        self._F = Ainv * (0.5 * dt)  # acts on s-scaled forcing
        self._Ainv = Ainv

    def step(self, y, f_old, f_new, bc=(0.0, 0.0)):
        out = self._S @ y
        f = f_old + f_new
        if not np.isscalar(f) or f != 0.0:
            fs = self._s * np.broadcast_to(f, (self.n,)).astype(complex)
            for r in self.bc_rows:
                fs[r] = 0.0
            out = out + self._F @ fs
        for r, val in zip(self.bc_rows, bc):
            if val != 0.0:
                out = out + (val * self._s[r]) * self._Ainv[:, r]
        return out


class _Phi00Stepper:
    """Constant-mode concentration step with the mean carried exactly."""

    def __init__(self, grid, steady, dt):
        p = steady.params
        E = assemble_E(ModeIndex(0, 0), grid, steady.U, steady.gamma, p)
        n = grid.n
        M = np.eye(n, dtype=complex)
        bc = (0, 1, n - 2, n - 1)
        for r in bc:
            M[r, r] = 0.0
        self._inner = _PencilStepper(M, E, bc, dt)
        self._w = grid.weights

    def step(self, phi):
        mean = (self._w * phi).sum()
        dev = phi - mean
        dev = self._inner.step(dev)
        dev = dev - (self._w * dev).sum()
        return dev + mean


class ModeIntegrator:
    """Cached steppers and feedback data for one mode of the box."""

    def __init__(self, mode, grid: Grid, steady: SteadyState, dt,
                 gains: GainSet = None, pencil: ModePencil = None,
                 actuator: ActuatorChoice = None):
        mode = ModeIndex(*mode)
        self.mode = mode
        self.grid = grid
        self.steady = steady
        self.dt = dt
        self.gains = gains
        n = grid.n
        p = steady.params
        k, l = mode
        s2 = mode.s2

        if mode.k == 0 and mode.l == 0:
            self._u_step = _ForcedStepper(p.nu * (-grid.D2).astype(complex), dt)
            self._w_step = _ForcedStepper(p.nu * (-grid.D2).astype(complex), dt)
            self._phi00 = _Phi00Stepper(grid, steady, dt)
            return

        if pencil is None:
            pencil = _assemble(mode, grid, steady, adjoint=False)
        self.pencil = pencil
        K = pencil.K
        if gains is not None:
            K = closed_loop_pencil(pencil, gains)
        self._vphi = _PencilStepper(pencil.M, K.astype(complex), pencil.bc_rows, dt)

        visc = p.nu * (-grid.D2 + s2 * np.eye(n))
        advect = 1j * k * np.diag(steady.U)
        self._dU = grid.D1 @ steady.U
        if mode.k == 0:
            # u carries its own forced equation; w follows from v'.
            self._u_step = _ForcedStepper((visc).astype(complex), dt)
        else:
            self._eta_step = _ForcedStepper((visc + advect).astype(complex), dt)

    def _omega(self, x):
        if self.gains is None:
            return 0.0j
        return complex(self.gains.row_functional @ x)

    def step(self, state: ModeState) -> ModeState:
        mode = self.mode
        grid = self.grid
        k, l = mode
        if k == 0 and l == 0:
            u = self._u_step.step(state.u, 0.0, 0.0)
            w = self._w_step.step(state.w, 0.0, 0.0)
            phi = self._phi00.step(state.phi)
            return replace(state, u=u, w=w, phi=phi, t=state.t + self.dt)

        x = np.concatenate([state.v, state.phi])
        x_new = self._vphi.step(x)
        n = grid.n
        v_new, phi_new = x_new[:n], x_new[n:]

        if k == 0:
            f_old = -self._dU * state.v
            f_new = -self._dU * v_new
            u_new = self._u_step.step(state.u, f_old, f_new)
            w_new = (1j / l) * (grid.D1 @ v_new)
            eta_new = 1j * l * u_new
            return ModeState(mode=mode, v=v_new, phi=phi_new, u=u_new, w=w_new,
                             eta=eta_new, t=state.t + self.dt)

        bc = (0.0, 0.0)
        if self.gains is not None and l != 0:
            om = self._omega(x_new)
            s_val = -1j / k * om
            t_val = np.conj(self.gains.wall_coef) * 1j / k * om
            bc = (1j * l * s_val, 1j * l * t_val)
        f_old = -1j * l * self._dU * state.v
        f_new = -1j * l * self._dU * v_new
        eta_new = self._eta_step.step(state.eta, f_old, f_new, bc=bc)
        interim = ModeState(mode=mode, v=v_new, phi=phi_new, u=state.u, w=state.w,
                            eta=eta_new, t=state.t + self.dt)
        u_new, w_new = recover_tangential(interim, grid)
        return replace(interim, u=u_new, w=w_new)


def step_closed_loop(state: ModeState, pencil: ModePencil, gains: GainSet,
                     grid: Grid, steady: SteadyState, dt) -> ModeState:
    """One implicit step of an actuated mode (convenience, uncached)."""
    if gains is None:
        raise ValueError("closed-loop step requires a gain set")
    return ModeIntegrator(state.mode, grid, steady, dt, gains=gains, pencil=pencil).step(state)


def step_open_loop_k0(state: ModeState, grid: Grid, steady: SteadyState, dt) -> ModeState:
    """One implicit step of a streamwise-constant mode (convenience, uncached)."""
    if state.mode.k != 0:
        raise ValueError("dedicated path only covers k = 0 modes")
    return ModeIntegrator(state.mode, grid, steady, dt).step(state)


def _mode_rng(seed, mode):
    return np.random.default_rng(int(seed) * 1000003 + (mode.k + 512) * 1021 + (mode.l + 512))


def _smooth_profile(rng, grid, kind, n_modes=8):
    y = grid.nodes
    coeffs = rng.normal(size=n_modes) + 1j * rng.normal(size=n_modes)
    if kind == "clamped":
        base = sum(c * np.cos(m * np.pi * y) for m, c in enumerate(coeffs))
        return y**2 * (1.0 - y) ** 2 * base
    if kind == "neumann":
        return sum(c * np.cos(m * np.pi * y) for m, c in enumerate(coeffs))
    if kind == "dirichlet":
        base = sum(c * np.cos(m * np.pi * y) for m, c in enumerate(coeffs))
        return y * (1.0 - y) * base
    raise ValueError(kind)


def initial_state(mode, grid: Grid, steady: SteadyState, recipe="random-smooth",
                  seed=0, eigensets=None, active=True) -> ModeState:
    """Initial fields for one mode under the configured recipe.

    random-smooth draws low-order boundary-compatible profiles with a
    per-mode deterministic stream; single-mode and unstable-eigenvector
    zero out every mode except the designated one (``active`` False).
    """
    mode = ModeIndex(*mode)
    n = grid.n
    zero = np.zeros(n, dtype=complex)
    if not active:
        return ModeState(mode=mode, v=zero, phi=zero.copy(), u=zero.copy(),
                         w=zero.copy(), eta=zero.copy(), t=0.0)
    if recipe == "unstable-eigenvector":
        es = (eigensets or {}).get(mode)
        if es is None or es.N_unstable == 0:
            return initial_state(mode, grid, steady, "random-smooth", seed,
                                 active=False)
        vphi = es.right_vphi[:, 0]
        state = ModeState(mode=mode, v=vphi[:n].copy(), phi=vphi[n:].copy(),
                          u=zero.copy(), w=zero.copy(), eta=zero.copy(), t=0.0)
        if mode.s2 > 0:
            u, w = recover_tangential(state, grid)
            state = replace(state, u=u, w=w)
        return state

    rng = _mode_rng(seed, mode)
    k, l = mode
    if k == 0 and l == 0:
        u = _smooth_profile(rng, grid, "dirichlet")
        w = _smooth_profile(rng, grid, "dirichlet")
        phi = _smooth_profile(rng, grid, "neumann")
        return ModeState(mode=mode, v=zero, phi=phi, u=u, w=w, eta=zero.copy(), t=0.0)
    v = _smooth_profile(rng, grid, "clamped")
    phi = _smooth_profile(rng, grid, "neumann")
    if k == 0:
        u = _smooth_profile(rng, grid, "dirichlet")
        w = (1j / l) * (grid.D1 @ v)
        return ModeState(mode=mode, v=v, phi=phi, u=u, w=w, eta=1j * l * u, t=0.0)
    eta = _smooth_profile(rng, grid, "dirichlet")
    state = ModeState(mode=mode, v=v, phi=phi, u=zero.copy(), w=zero.copy(),
                      eta=eta, t=0.0)
    u, w = recover_tangential(state, grid)
    return replace(state, u=u, w=w)


def fit_decay(times, energy, transient_frac=0.1) -> FitResult:
    """Least-squares exponential fit of an energy series.

    Fits log E on the window after the transient; reports eta = -slope,
    C = exp(intercept)/E(0), and the half-rate envelope factor
    max_t E(t) exp(eta t / 2) / E(0).  Non-positive or non-finite samples
    truncate the window and set the flag.
    """
    times = np.asarray(times, dtype=float)
    energy = np.asarray(energy, dtype=float)
    if energy.size == 0 or energy.max() <= 0.0:
        return FitResult(C=0.0, eta=0.0, envelope=0.0, truncated=False, degenerate=True)
    start = times[-1] * transient_frac
    mask = times >= start
    tw = times[mask]
    ew = energy[mask]
    good = np.isfinite(ew) & (ew > 0.0)
    truncated = False
    if not good.all():
        cut = int(np.argmin(good))  # first bad sample
        tw, ew = tw[:cut], ew[:cut]
        truncated = True
    if tw.size < 5:
        return FitResult(C=0.0, eta=0.0, envelope=0.0, truncated=truncated, degenerate=True)
    slope, intercept = np.polyfit(tw, np.log(ew), 1)
    eta = -float(slope)
    E0 = float(energy[0]) if energy[0] > 0 else float(ew[0])
    C = float(np.exp(intercept)) / E0
    envelope = float((ew * np.exp(0.5 * eta * tw)).max() / E0)
    return FitResult(C=C, eta=eta, envelope=envelope, truncated=truncated, degenerate=False)


def _box_modes(K_max):
    return [ModeIndex(k, l) for k in range(-K_max, K_max + 1)
            for l in range(-K_max, K_max + 1)]


def _single_mode_target(design: ControlDesign):
    if design.controlled:
        return max(design.controlled, key=lambda m: design.scan[m][0])
    return max(design.scan, key=lambda m: design.scan[m][0])


def run_simulation(config: RunConfig, design: ControlDesign = None) -> DecayReport:
    """Integrate every mode of the box and fit the decay constants.

    Controlled modes (actuated, inside the cutoff, with unstable part) use
    the wall feedback unless config.feedback is off; everything else runs
    open loop.  The global energy applies the periodic-box factor (2 pi)^2
    to the sum of the per-mode energies.
    """
    if design is None:
        design = build_design(config)
    grid, steady = design.grid, design.steady
    K_max = config.K_max if config.K_max > 0 else design.M + 2
    modes = _box_modes(K_max)
    n_steps = int(round(config.T / config.dt))
    sample_every = config.save_every
    n_samples = n_steps // sample_every + 1
    times = np.arange(n_samples) * (config.dt * sample_every)
    target = _single_mode_target(design)

    def job(mode):
        gains = design.gains.get(mode) if config.feedback else None
        pencil = design.pencils.get(mode)
        active = mode == target if config.ic_recipe == "single-mode" else True
        recipe = "random-smooth" if config.ic_recipe == "single-mode" else config.ic_recipe
        state = initial_state(mode, grid, steady, recipe, config.seed,
                              eigensets=design.eigensets, active=active)
        series = np.empty(n_samples)
        series[0] = mode_energy(state, grid)
        if not np.any(np.abs(state.v) + np.abs(state.phi) + np.abs(state.u)
                      + np.abs(state.w) + np.abs(state.eta)):
            series[:] = 0.0
            return mode, series
        integ = ModeIntegrator(mode, grid, steady, config.dt, gains=gains, pencil=pencil)
        idx = 1
        for step in range(1, n_steps + 1):
            state = integ.step(state)
            if step % sample_every == 0:
                series[idx] = mode_energy(state, grid)
                idx += 1
        return mode, series

    results = dict(_parallel(job, modes, config.resolve_threads()))
    energies = {mode: results[mode] for mode in modes}
    total = (2.0 * np.pi) ** 2 * np.sum(np.stack(list(energies.values())), axis=0)
    fits = {mode: fit_decay(times, series) for mode, series in energies.items()}
    global_fit = fit_decay(times, total)
    controlled = design.controlled if config.feedback else ()
    return DecayReport(times=times, mode_energy=energies, total=total, fits=fits,
                       global_fit=global_fit, M=design.M, controlled=controlled,
                       feedback=config.feedback)


def write_energies_csv(report: DecayReport, path):
    """Time series table: t, one column per mode, total."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    modes = sorted(report.mode_energy)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"E_{m.k}_{m.l}" for m in modes] + ["total"])
        for i, t in enumerate(report.times):
            row = [f"{t:.10g}"]
            row += [f"{report.mode_energy[m][i]:.17e}" for m in modes]
            row.append(f"{report.total[i]:.17e}")
            writer.writerow(row)
    return path


def report_payload(report: DecayReport) -> dict:
    """JSON-ready decay summary."""
    def fit_dict(fit):
        return {
            "C": fit.C,
            "eta": fit.eta,
            "envelope_half_rate": fit.envelope,
            "truncated": fit.truncated,
            "degenerate": fit.degenerate,
        }

    return {
        "M": report.M,
        "feedback": report.feedback,
        "controlled": [[m.k, m.l] for m in report.controlled],
        "global_fit": fit_dict(report.global_fit),
        "mode_fits": {
            f"{m.k},{m.l}": fit_dict(fit) for m, fit in sorted(report.fits.items())
        },
        "final_total_energy": float(report.total[-1]),
        "initial_total_energy": float(report.total[0]),
    }
