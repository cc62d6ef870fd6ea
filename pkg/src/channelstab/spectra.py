"""Eigen machinery: per-mode spectra, dual families, traces, cutoff.

The generalized eigenproblem lam*M*x + K*x = 0 is solved densely (QZ) on a
row-equilibrated copy of the pencil.  Three kinds of artifacts are removed:
QZ infinities from the zero-mass algebraic rows, eigenpairs with vanishing
mass component, and wall-concentrated boundary modes produced by the
bordered derivative rows (these drift like n^8 under refinement and carry
>= 95% of their quadrature mass in the few nodes nearest the walls, while
genuine eigenvectors stay bulk-distributed).

Left (dual) eigenvectors come from the adjoint pencil and are matched to
the forward eigenvalues by conjugation; right vectors are then rescaled so
the two unstable families pair to the identity.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import eig

from .grid import Grid, build_grid
from .operators import ModeIndex, ModePencil, assemble_adjoint, assemble_pencil, _assemble
from .steady import SteadyState

__all__ = [
    "EigenSet",
    "ActuatorChoice",
    "EigenSolveError",
    "DefectiveModeError",
    "LemmaViolationError",
    "ScanExhaustedError",
    "solve_pencil_eigen",
    "biorthonormalize",
    "boundary_traces",
    "select_actuator_coefficient",
    "choose_actuators",
    "scan_modes",
    "determine_cutoff",
    "spectrum_rows",
]

MARGIN_UNSTABLE = 1e-8
WALL_FRACTION_LIMIT = 0.9
PAIRING_COND_LIMIT = 1e8


class EigenSolveError(RuntimeError):
    pass


class DefectiveModeError(RuntimeError):
    """Unstable pairing block numerically singular (simple-eigenvalue premise broken)."""


class LemmaViolationError(RuntimeError):
    """A dual eigenvector has no usable boundary trace at either wall."""


class ScanExhaustedError(RuntimeError):
    def __init__(self, message, worst_mode, worst_abscissa):
        super().__init__(message)
        self.worst_mode = worst_mode
        self.worst_abscissa = worst_abscissa


@dataclass(frozen=True)
class EigenSet:
    """Filtered spectrum of one mode plus the dual data for its unstable block.

    lambdas are eigenvalues of the evolution generator (decay rates carry
    negative real part), sorted by descending real part, ties by ascending
    imaginary part.  right/left hold the first ``block`` eigenvector pairs
    as stacked (z, phi) functions with z the Helmholtz form of v;
    right_vphi holds the same right vectors in raw (v, phi) samples.
    """

    mode: ModeIndex
    lambdas: np.ndarray
    right: np.ndarray
    right_vphi: np.ndarray
    left: np.ndarray
    N_unstable: int
    traces: np.ndarray
    residual_max: float
    pairing_cond: float
    defective: bool
    grid: Grid

    @property
    def block(self) -> int:
        return self.right.shape[1] if self.right.size else 0

    @property
    def abscissa(self) -> float:
        return float(self.lambdas[0].real) if self.lambdas.size else -np.inf


@dataclass(frozen=True)
class ActuatorChoice:
    """Wall-combination coefficients for the two actuated families.

    a serves modes with both wavenumbers nonzero, b the spanwise-constant
    family; margin is the worst normalized trace combination |t0 + a*t1| /
    (|t0| + |t1|) over every covered unstable dual eigenvector.
    """

    a: complex
    b: complex
    margin: float


def _pair_weights(grid):
    return np.concatenate([grid.weights, grid.weights])


def pair(x, y, grid: Grid):
    """Duality pairing of stacked (z, phi) vectors under the quadrature product."""
    return (_pair_weights(grid) * (x * np.conj(y))).sum()


def filtered_eig(K0, M0, grid, label=""):
    """Equilibrated QZ solve with artifact removal; returns (lams, vecs, resmax).

    Eigenvalues are of the generator: lam*M + K singular.  Residuals are
    measured against the row-equilibrated pencil.
    """
    scale = np.maximum(np.abs(K0).max(axis=1), np.abs(M0).max(axis=1))
    s = 1.0 / np.where(scale > 0, scale, 1.0)
    K = K0 * s[:, None]
    M = M0 * s[:, None]
    try:
        w, vr = eig(-K, M, right=True)
    except Exception as exc:  # pragma: no cover - LAPACK failure surface
        raise EigenSolveError(f"eigensolver failed ({label}): {exc}")
    if np.isnan(w).any():
        raise EigenSolveError(f"eigensolver returned NaN ({label})")

    n = grid.n
    nblocks = K0.shape[0] // n
    edge = max(4, n // 8)
    keep = []
    for i in range(w.size):
        lam = w[i]
        if not np.isfinite(lam) or abs(lam) > 1e12:
            continue
        x = vr[:, i]
        if np.linalg.norm(M0 @ x) < 1e-10 * np.linalg.norm(x):
            continue
        dens = np.zeros(n)
        for b in range(nblocks):
            dens += grid.weights * np.abs(x[b * n : (b + 1) * n]) ** 2
        wall = (dens[:edge].sum() + dens[-edge:].sum()) / dens.sum()
        if wall > WALL_FRACTION_LIMIT:
            continue
        keep.append(i)
    keep = np.asarray(keep, dtype=int)
    lams = w[keep]
    order = np.lexsort((lams.imag, -lams.real))
    lams = lams[order]
    vecs = vr[:, keep[order]]
    res = 0.0
    for i in range(lams.size):
        x = vecs[:, i] / np.linalg.norm(vecs[:, i])
        res = max(res, np.linalg.norm(lams[i] * (M @ x) + K @ x))
    return lams, vecs, res


def _filtered_eig(pencil, grid):
    return filtered_eig(pencil.K, pencil.M, grid, label=f"mode {tuple(pencil.mode)}")


def _z_form(vphi, mode, grid):
    n = grid.n
    L_diff = -grid.D2 + mode.s2 * np.eye(n)
    out = np.empty_like(vphi)
    out[:n] = L_diff @ vphi[:n]
    out[n:] = vphi[n:]
    return out


def solve_pencil_eigen(pencil: ModePencil, grid: Grid, margin_unstable=MARGIN_UNSTABLE,
                       n_left=None) -> EigenSet:
    """Solve one mode's eigenproblem and attach its dual (left) block.

    The returned set is biorthonormalized: the pairing of the first
    ``block`` right and left vectors is the identity.  ``n_left`` can widen
    the dual block past the unstable count (used by consistency tests).
    """
    lams, vecs, resmax = _filtered_eig(pencil, grid)
    N_unstable = int((lams.real >= -margin_unstable).sum())
    block = min(max(N_unstable, 0 if n_left is None else int(n_left)), lams.size)

    wq = _pair_weights(grid)

    def unit(x):
        return x / np.sqrt((wq * np.abs(x) ** 2).sum())

    right = np.empty((pencil.dim, block), dtype=complex)
    right_vphi = np.empty((pencil.dim, block), dtype=complex)
    for j in range(block):
        z = unit(_z_form(vecs[:, j], pencil.mode, grid))
        right[:, j] = z
        right_vphi[:, j] = vecs[:, j] / np.sqrt((wq * np.abs(_z_form(vecs[:, j], pencil.mode, grid)) ** 2).sum())

    left = np.empty((pencil.dim, block), dtype=complex)
    traces = np.zeros((block, 2), dtype=complex)
    if block:
        adj = assemble_adjoint(pencil, grid)
        alams, avecs, ares = _filtered_eig(adj, grid)
        resmax = max(resmax, ares)
        used = np.zeros(alams.size, dtype=bool)
        for j in range(block):
            target = np.conj(lams[j])
            dist = np.abs(alams - target) + np.where(used, np.inf, 0.0)
            i = int(np.argmin(dist))
            scale = max(1.0, abs(lams[j]))
            if dist[i] > 1e-3 * scale:
                raise EigenSolveError(
                    f"mode {tuple(pencil.mode)}: no dual match for eigenvalue {lams[j]:.6g} "
                    f"(best distance {dist[i]:.3g})"
                )
            used[i] = True
            left[:, j] = unit(avecs[:, i])
        traces = boundary_traces_from_left(left, grid)

    eig_set = EigenSet(
        mode=pencil.mode,
        lambdas=lams,
        right=right,
        right_vphi=right_vphi,
        left=left,
        N_unstable=N_unstable,
        traces=traces,
        residual_max=float(resmax),
        pairing_cond=1.0,
        defective=False,
        grid=grid,
    )
    return biorthonormalize(eig_set) if block else eig_set


def biorthonormalize(eig_set: EigenSet) -> EigenSet:
    """Rescale the right family so it pairs to the identity with the left one.

    The left family stays fixed; rights are mixed by the inverse pairing
    block (for simple spectra this is essentially a per-vector rescale).
    """
    m = eig_set.block
    if m == 0:
        return eig_set
    grid = eig_set.grid
    P = np.empty((m, m), dtype=complex)
    for i in range(m):
        for j in range(m):
            P[i, j] = pair(eig_set.right[:, i], eig_set.left[:, j], grid)
    cond = float(np.linalg.cond(P))
    if not np.isfinite(cond) or cond > 1e14:
        raise DefectiveModeError(
            f"mode {tuple(eig_set.mode)}: singular unstable pairing block (cond {cond:.3g})"
        )
    C = np.linalg.inv(P)  # right_new_i = sum_m C[i, m] right_m
    right = eig_set.right @ C.T
    right_vphi = eig_set.right_vphi @ C.T
    return replace(
        eig_set,
        right=right,
        right_vphi=right_vphi,
        pairing_cond=cond,
        defective=bool(cond > PAIRING_COND_LIMIT),
    )


def boundary_traces_from_left(left, grid: Grid):
    """Second-derivative wall traces of the dual velocity components."""
    n = grid.n
    m = left.shape[1]
    out = np.empty((m, 2), dtype=complex)
    for j in range(m):
        z = left[:n, j]
        out[j, 0] = grid.D2[0, :] @ z
        out[j, 1] = grid.D2[-1, :] @ z
    return out


def boundary_traces(eig_set: EigenSet, grid: Grid):
    """Recompute the (t0, t1) trace pairs of the stored dual block."""
    return boundary_traces_from_left(eig_set.left, grid)


def select_actuator_coefficient(trace_pairs, moduli=(0.5, 1.0, 2.0), n_angles=360,
                                threshold=1e-8):
    """Pick a wall-combination coefficient with the best worst-case margin.

    trace_pairs is a sequence of (t0, t1) over all covered unstable dual
    eigenvectors.  The candidate set is a deterministic polar grid; the
    returned margin is min_j |t0_j + a*t1_j| / (|t0_j| + |t1_j|).
    """
    pairs = [(complex(t0), complex(t1)) for t0, t1 in trace_pairs]
    if not pairs:
        return complex(1.0), float("inf")
    for j, (t0, t1) in enumerate(pairs):
        if abs(t0) + abs(t1) <= threshold:
            raise LemmaViolationError(
                f"dual eigenvector {j}: both wall traces below threshold "
                f"({abs(t0):.3g}, {abs(t1):.3g})"
            )
    angles = 2.0 * np.pi * np.arange(n_angles) / n_angles
    best_a, best_margin = None, -1.0
    for r in moduli:
        for th in angles:
            a = r * np.exp(1j * th)
            margin = min(abs(t0 + a * t1) / (abs(t0) + abs(t1)) for t0, t1 in pairs)
            if margin > best_margin:
                best_a, best_margin = a, margin
    return best_a, float(best_margin)


def choose_actuators(eigensets) -> ActuatorChoice:
    """Combine per-mode traces into the two family-wide coefficients."""
    pairs_a, pairs_b = [], []
    for es in eigensets:
        t = es.traces[: es.N_unstable]
        if es.mode.l == 0:
            pairs_b.extend(t)
        else:
            pairs_a.extend(t)
    a, margin_a = select_actuator_coefficient(pairs_a)
    b, margin_b = select_actuator_coefficient(pairs_b)
    return ActuatorChoice(a=a, b=b, margin=float(min(margin_a, margin_b)))


def phi00_decay_rates(grid, steady):
    """Eigenvalues of the constant-mode concentration generator.

    Contains the conserved-mean zero eigenvalue; the rest are strictly
    negative decay rates.
    """
    from .operators import assemble_E

    E = assemble_E(ModeIndex(0, 0), grid, steady.U, steady.gamma, steady.params)
    n = grid.n
    M = np.eye(n, dtype=complex)
    for r in (0, 1, n - 2, n - 1):
        M[r, r] = 0.0
    lams, _, _ = filtered_eig(E.copy(), M, grid, label="phi00")
    return lams


def _mean_zero_abscissa_00(grid, steady):
    # Streamwise/spanwise-constant branch: v vanishes, u and w relax by bare
    # diffusion, phi by the fourth-order operator on its mean-zero part.
    lam = phi00_decay_rates(grid, steady)
    lam = lam[np.abs(lam) > 1e-6]  # drop the conserved mean
    phi_abs = float(lam.real.max()) if lam.size else -np.inf
    heat = -steady.params.nu * np.pi**2
    return max(phi_abs, heat)


def _scan_one(mode, grid, steady, margin_unstable):
    if mode.k == 0 and mode.l == 0:
        return _mean_zero_abscissa_00(grid, steady), 0
    if mode.k == 0:
        pencil = _assemble(mode, grid, steady, adjoint=False)
    else:
        pencil = assemble_pencil(mode, grid, steady)
    lams, _, _ = _filtered_eig(pencil, grid)
    if lams.size == 0:
        raise EigenSolveError(f"no finite eigenvalues kept for mode {tuple(mode)}")
    absc = float(lams.real.max())
    n_unst = int((lams.real >= -margin_unstable).sum())
    return absc, n_unst


def scan_modes(steady: SteadyState, grid: Grid, scan_limit: int,
               margin_unstable=MARGIN_UNSTABLE, threads=None):
    """Abscissa and unstable count for every mode inside the scan radius.

    Scans the closed upper half-lattice and mirrors to conjugate modes
    (their spectra are complex conjugates).  Returns {ModeIndex: (abscissa,
    N_unstable)}.
    """
    half = []
    for k in range(0, scan_limit + 1):
        for l in range(-scan_limit, scan_limit + 1):
            mode = ModeIndex(k, l)
            if mode.s2 > scan_limit**2:
                continue
            if k == 0 and l < 0:
                continue
            half.append(mode)

    def job(mode):
        return mode, _scan_one(mode, grid, steady, margin_unstable)

    if threads is not None and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, half))
    else:
        results = [job(mode) for mode in half]

    table = {}
    for mode, (absc, n_unst) in results:
        table[mode] = (absc, n_unst)
        mirror = ModeIndex(-mode.k, -mode.l)
        if mirror != mode:
            table[mirror] = (absc, n_unst)
    return table


def determine_cutoff(steady: SteadyState, grid: Grid, eta: float, scan_limit: int,
                     margin_unstable=MARGIN_UNSTABLE, scan=None, threads=None) -> int:
    """Smallest M so every scanned mode beyond radius M is eta-stable.

    Beyond-M modes must have spectral abscissa <= -eta and carry no
    unstable eigenvalues.  Raises ScanExhaustedError when no M within the
    scan radius works, reporting the worst offender.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if scan_limit < 4:
        raise ValueError("scan_limit must be at least 4")
    if scan is None:
        scan = scan_modes(steady, grid, scan_limit, margin_unstable, threads=threads)
    for M in range(1, scan_limit + 1):
        ok = True
        for mode, (absc, n_unst) in scan.items():
            if mode.radius > M and (absc > -eta or n_unst > 0):
                ok = False
                break
        if ok:
            return M
    worst = max(scan.items(), key=lambda item: item[1][0])
    raise ScanExhaustedError(
        f"no cutoff within scan radius {scan_limit}: mode {tuple(worst[0])} has "
        f"abscissa {worst[1][0]:.6g}",
        worst_mode=worst[0],
        worst_abscissa=worst[1][0],
    )


def spectrum_rows(eig_set: EigenSet):
    """CSV rows: mode, eigenvalue, unstable flag, wall traces (dual block only)."""
    rows = []
    for j, lam in enumerate(eig_set.lambdas):
        unstable = j < eig_set.N_unstable
        if j < eig_set.block:
            t0, t1 = eig_set.traces[j]
        else:
            t0 = t1 = 0.0j
        rows.append(
            (
                eig_set.mode.k,
                eig_set.mode.l,
                lam.real,
                lam.imag,
                int(unstable),
                t0.real,
                t0.imag,
                t1.real,
                t1.imag,
            )
        )
    return rows
