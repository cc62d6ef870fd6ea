"""Orchestration: steady state -> spectra -> cutoff -> actuators -> gains.

The full design record produced here feeds both the gain reports and the
closed-loop simulation.  Per-mode work is independent and runs on a thread
pool (the dense linear algebra releases the GIL); results are keyed by
mode, so the assembled record does not depend on completion order.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .config import RunConfig
from .grid import Grid, build_grid
from .operators import ModeIndex, ModePencil, assemble_pencil
from .spectra import (
    ActuatorChoice,
    EigenSet,
    choose_actuators,
    determine_cutoff,
    scan_modes,
    solve_pencil_eigen,
)
from .feedback import GainSet, build_gains
from .steady import SteadyState, build_steady_state

__all__ = ["ControlDesign", "UncontrollableModeError", "build_design"]


class UncontrollableModeError(RuntimeError):
    """A streamwise-constant mode is unstable; no wall actuation can reach it."""


@dataclass(frozen=True)
class ControlDesign:
    grid: Grid
    steady: SteadyState
    scan: dict
    M: int
    actuator: ActuatorChoice
    pencils: dict
    eigensets: dict
    gains: dict

    @property
    def controlled(self):
        return tuple(sorted(self.gains))


def _parallel(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def build_design(config: RunConfig, grid=None, steady=None) -> ControlDesign:
    """Run every synthesis stage for the configured parameter set."""
    if grid is None:
        grid = build_grid(config.n)
    if steady is None:
        steady = build_steady_state(config.params, grid)
    threads = config.resolve_threads()

    scan = scan_modes(steady, grid, config.scan_limit, threads=threads)
    M = determine_cutoff(steady, grid, config.eta_target, config.scan_limit, scan=scan)

    bad_k0 = [m for m, (absc, n_unst) in scan.items() if m.k == 0 and n_unst > 0]
    if bad_k0:
        raise UncontrollableModeError(
            f"unactuated modes {sorted(tuple(m) for m in bad_k0)} are unstable"
        )

    controlled = sorted(
        m for m, (absc, n_unst) in scan.items() if m.k != 0 and m.radius <= M and n_unst > 0
    )

    def eigen_job(mode):
        pencil = assemble_pencil(mode, grid, steady)
        return mode, pencil, solve_pencil_eigen(pencil, grid)

    triples = _parallel(eigen_job, controlled, threads)
    pencils = {mode: pencil for mode, pencil, _ in triples}
    eigensets = {mode: es for mode, _, es in triples}

    actuator = choose_actuators([eigensets[m] for m in controlled])
    gains = {
        mode: build_gains(pencils[mode], eigensets[mode], actuator, grid)
        for mode in controlled
    }
    return ControlDesign(
        grid=grid,
        steady=steady,
        scan=scan,
        M=M,
        actuator=actuator,
        pencils=pencils,
        eigensets=eigensets,
        gains=gains,
    )
