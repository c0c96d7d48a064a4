"""Static equilibria: measures supported on the argmin of their own cost.

A measure is in equilibrium exactly when the integral of F(., m) - min F
against m vanishes.  The solver runs damped best-response (fictitious
play): average the current measure with the uniform measure on the
grid-tolerant argmin of its own slice.  Non-convergence is a reported
result, not an exception — with non-monotone couplings the iteration may
cycle, and the game may still have equilibria elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cost_models import CostFunctional, slice_stats
from .grid_geometry import SpatialGrid
from .measures import DiscreteMeasure, merge_duplicates, mix, wasserstein1_capped


def harmonic_damping(k: int) -> float:
    """Fictitious-play averaging weights 1, 1/2, 1/3, ..."""
    return 1.0 / (k + 1)


def constant_damping(lam: float) -> Callable[[int], float]:
    if not 0.0 < lam <= 1.0:
        raise ValueError("damping constant must lie in (0, 1]")
    return lambda k: lam


def residual(F: CostFunctional, m: DiscreteMeasure, grid: SpatialGrid) -> float:
    """Equilibrium certificate: integral of F(., m) minus its minimum.

    The reference minimum is taken over the grid nodes *and* the particle
    positions, so the value is nonnegative by construction even when a
    particle sits off-lattice below the best node.  Zero exactly when every
    particle carries minimal cost.
    """
    particle_vals = F.evaluate_many(m.points, m)
    grid_min = float(F.evaluate_many(grid.nodes, m).min())
    c = min(grid_min, float(particle_vals.min()))
    return float(m.weights @ (particle_vals - c))


def best_response(
    F: CostFunctional,
    m: DiscreteMeasure,
    grid: SpatialGrid,
    eps_min: float | None = None,
    mode: str = "uniform",
) -> DiscreteMeasure:
    """A measure supported on the grid-tolerant argmin of F(., m).

    ``mode="uniform"`` returns the uniform measure on the argmin nodes (the
    canonical symmetric selection); ``mode="project"`` moves each particle
    of m to its nearest argmin node, keeping weights.
    """
    stats = slice_stats(F, m, grid, eps_min)
    nodes = stats.argmin_set.points
    if mode == "uniform":
        return DiscreteMeasure.uniform(nodes, source="best_response")
    if mode == "project":
        diff = m.points[:, None, :] - nodes[None, :, :]
        nearest = np.argmin((diff * diff).sum(axis=-1), axis=1)
        return merge_duplicates(
            DiscreteMeasure(nodes[nearest], m.weights, {"source": "best_response"})
        )
    raise ValueError(f"unknown best-response mode {mode!r}")


@dataclass(eq=False)
class StaticSolveResult:
    """Outcome of the damped best-response iteration.

    ``measure`` is the best iterate seen (smallest residual), whether or
    not the iteration converged; ``history`` rows are
    ``(iterate, residual, d1_step)`` with the step preceding the iterate.
    """

    measure: DiscreteMeasure
    residual: float
    converged: bool
    iterations: int
    history: list = field(default_factory=list)


def solve_static(
    F: CostFunctional,
    grid: SpatialGrid,
    init: DiscreteMeasure,
    damping_schedule: Callable[[int], float] | None = None,
    tol: float = 1e-9,
    max_iter: int = 200,
    eps_min: float | None = None,
    br_mode: str = "uniform",
    w1_size_cap: int = 512,
) -> StaticSolveResult:
    """Damped best-response iteration m_{k+1} = (1 - lam_k) m_k + lam_k BR(m_k).

    Stops when the equilibrium residual or the d1 step between consecutive
    iterates drops to ``tol``.  Returns the best iterate with its residual;
    a result with ``converged=False`` carries the full residual trace for
    cycle diagnosis.
    """
    if damping_schedule is None:
        damping_schedule = harmonic_damping
    m = init
    best_m, best_res = init, np.inf
    history: list[tuple[int, float, float]] = []
    converged = False
    iterations = 0
    step = np.nan
    for k in range(max_iter):
        res = residual(F, m, grid)
        history.append((k, res, step))
        if res < best_res:
            best_m, best_res = m, res
        if res <= tol:
            converged = True
            break
        lam = float(damping_schedule(k))
        br = best_response(F, m, grid, eps_min=eps_min, mode=br_mode)
        m_next = mix(m, br, lam)
        step, _ = wasserstein1_capped(m, m_next, size_cap=w1_size_cap)
        m = m_next
        iterations = k + 1
        if step <= tol:
            res = residual(F, m, grid)
            history.append((k + 1, res, step))
            if res < best_res:
                best_m, best_res = m, res
            converged = True
            break
    return StaticSolveResult(
        measure=best_m,
        residual=float(best_res),
        converged=converged,
        iterations=iterations,
        history=history,
    )
