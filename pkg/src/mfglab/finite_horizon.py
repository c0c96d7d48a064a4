"""Finite-horizon MFG on [0, T]: backward HJB, forward transport, coupling.

The value function solves a backward semi-Lagrangian recursion over an
explicit control lattice, which yields the optimal feedback directly; the
population is a particle cloud pushed forward along that feedback; the
coupled system is solved by damped fixed-point iteration on the measure
path (the value field is always the exact solution for the path it was
computed against).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cost_models import CostFunctional
from .errors import DomainEscapeError
from .grid_geometry import SpatialGrid, distance_to_box
from .measures import (
    DEFAULT_SIZE_CAP,
    DiscreteMeasure,
    MeasurePath,
    mix_paths,
    wasserstein1_capped,
)
from .static_game import harmonic_damping

# Particles must never come this close (in cells) to the box boundary; the
# computational box is supposed to contain the invariant neighborhood of the
# core with room to spare, so proximity indicates a mis-sized domain.
BOUNDARY_MARGIN_CELLS = 2.0

N_CHECKPOINTS = 9


def default_control_radius(F: CostFunctional) -> float:
    """Radius covering the a priori feedback bound sqrt(4 sup|F|) with margin."""
    return math.sqrt(4.0 * F.m_bound) + 1.0


def default_control_mesh(grid: SpatialGrid, dt: float) -> float:
    """Pitch balancing spatial and temporal resolution."""
    return 0.5 * max(grid.max_spacing, math.sqrt(dt))


def control_lattice(dim: int, radius: float, mesh: float) -> np.ndarray:
    """Cubic control lattice of the given pitch inside the radius ball.

    Sorted by (|a|^2, lexicographic), so taking the first occurrence of the
    minimum over this lattice breaks ties toward the smallest control, then
    lexicographically — a deterministic feedback selection.
    """
    if mesh <= 0 or radius <= 0:
        raise ValueError("control mesh and radius must be positive")
    n = int(math.floor(radius / mesh + 1e-12))
    axis = np.arange(-n, n + 1, dtype=float) * mesh
    if dim == 1:
        pts = axis[:, None]
    else:
        mesh_grids = np.meshgrid(axis, axis, indexing="ij")
        pts = np.stack([mm.ravel() for mm in mesh_grids], axis=-1)
    sq = (pts * pts).sum(axis=1)
    keep = sq <= radius * radius + 1e-12
    pts, sq = pts[keep], sq[keep]
    order = sorted(range(pts.shape[0]), key=lambda i: (sq[i], *pts[i]))
    return pts[order]


@dataclass(eq=False)
class ValueField:
    """Backward value function with its feedback policy.

    ``values[k]`` is the node array at time ``times[k]`` (terminal slice is
    zero); ``policy[k]`` holds, flat per node, the index into ``controls``
    of the optimal control over the step [t_k, t_{k+1}]; ``f_slices[k]``
    stores the coupling cost slice used at step k.
    """

    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray
    controls: np.ndarray
    policy: np.ndarray
    f_slices: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def interpolate(self, x, k: int) -> float:
        return self.grid.interpolate(self.values[k], x)


def _foot_tables(grid: SpatialGrid, points: np.ndarray):
    """Corner indices and weights for multilinear gathers at fixed points."""
    j, w, escaped = grid.locate(points)
    if grid.dim == 1:
        i0 = j[:, 0]
        idx = np.stack([i0, i0 + 1], axis=-1)
        w0 = w[:, 0]
        wts = np.stack([1.0 - w0, w0], axis=-1)
    else:
        ny = grid.shape[1]
        base = j[:, 0] * ny + j[:, 1]
        idx = np.stack([base, base + ny, base + 1, base + ny + 1], axis=-1)
        w0, w1 = w[:, 0], w[:, 1]
        wts = np.stack(
            [(1.0 - w0) * (1.0 - w1), w0 * (1.0 - w1), (1.0 - w0) * w1, w0 * w1],
            axis=-1,
        )
    return idx.astype(np.int64), wts, escaped


def _check_alignment(path: MeasurePath, dt: float):
    T = float(path.times[-1])
    n_t = int(round(T / dt))
    scale = max(1.0, abs(T))
    if n_t < 1 or abs(n_t * dt - T) > 1e-9 * scale:
        raise ValueError(f"step {dt} does not divide the horizon {T}")
    lattice = np.arange(n_t + 1) * dt
    if path.n_times != n_t + 1 or not np.allclose(path.times, lattice, rtol=0.0, atol=1e-9 * scale):
        raise ValueError("measure-path times do not align with the dt lattice")
    return n_t, lattice


def solve_hjb_backward(
    F: CostFunctional,
    path: MeasurePath,
    grid: SpatialGrid,
    dt: float,
    control_radius: float | None = None,
    control_mesh: float | None = None,
) -> ValueField:
    """Backward semi-Lagrangian recursion for the value of the crowd cost.

    u(x, t) = min over lattice controls a of
    [dt (|a|^2/2 + F(x, m(t))) + u(x + dt a, t + dt)], terminal value zero.
    Control feet beyond the one-cell clamp margin are discarded; the zero
    control keeps every node feasible.  The argmin control index per
    (step, node) is stored as the feedback policy.
    """
    n_t, lattice = _check_alignment(path, dt)
    if control_radius is None:
        control_radius = default_control_radius(F)
    if control_mesh is None:
        control_mesh = default_control_mesh(grid, dt)
    controls = control_lattice(grid.dim, control_radius, control_mesh)
    n_nodes = grid.n_nodes
    n_c = controls.shape[0]
    feet = (grid.nodes[:, None, :] + dt * controls[None, :, :]).reshape(-1, grid.dim)
    idx, wts, escaped = _foot_tables(grid, feet)
    escaped = escaped.reshape(n_nodes, n_c)
    if bool(np.all(escaped, axis=1).any()):
        bad = int(np.argmax(np.all(escaped, axis=1)))
        raise DomainEscapeError(
            f"every control escapes the box from node {grid.nodes[bad].tolist()}",
            point=tuple(grid.nodes[bad].tolist()),
        )
    run_cost = dt * 0.5 * (controls * controls).sum(axis=1)

    values = np.empty((n_t + 1,) + grid.shape)
    values[n_t] = 0.0
    policy = np.empty((n_t, n_nodes), dtype=np.int32)
    f_slices = np.empty((n_t,) + grid.shape)
    rows = np.arange(n_nodes)
    for k in range(n_t - 1, -1, -1):
        m_k = path.measure_at(k)
        fk = F.evaluate_many(grid.nodes, m_k)
        f_slices[k] = fk.reshape(grid.shape)
        flat = values[k + 1].ravel()
        q = (flat[idx] * wts).sum(axis=-1).reshape(n_nodes, n_c)
        q += run_cost[None, :]
        if escaped.any():
            q[escaped] = np.inf
        pol = np.argmin(q, axis=1)
        policy[k] = pol.astype(np.int32)
        values[k] = (q[rows, pol] + dt * fk).reshape(grid.shape)
    return ValueField(
        grid=grid,
        times=lattice,
        values=values,
        controls=controls,
        policy=policy,
        f_slices=f_slices,
        metadata={
            "control_radius": float(control_radius),
            "control_mesh": float(control_mesh),
        },
    )


@dataclass(eq=False)
class TrajectoryStats:
    """Per-trajectory position and speed extremes with their aggregates.

    ``chi_hat``/``chi_prime_hat`` bound positions and speeds over all
    particles; ``r1_hat`` is the largest distance any particle ever had to
    the model's core box (nan when no box was supplied).
    """

    sup_position: np.ndarray
    sup_speed: np.ndarray
    chi_hat: float
    chi_prime_hat: float
    r1_hat: float


def _assert_away_from_boundary(points: np.ndarray, grid: SpatialGrid, time_index: int):
    margin = BOUNDARY_MARGIN_CELLS * grid.spacing
    gap_lo = points - grid.lower_array
    gap_hi = grid.upper_array - points
    bad = np.any((gap_lo < margin) | (gap_hi < margin), axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise DomainEscapeError(
            f"particle {i} at {points[i].tolist()} is within "
            f"{BOUNDARY_MARGIN_CELLS:g} cells of the box boundary at time index {time_index}; "
            "enlarge the computational box",
            point=tuple(points[i].tolist()),
            time_index=time_index,
        )


def transport_forward(
    value: ValueField,
    m0: DiscreteMeasure,
    core_box=None,
) -> tuple[MeasurePath, TrajectoryStats]:
    """Push the initial cloud forward along the optimal feedback.

    Each step recomputes the semi-Lagrangian argmin control at the exact
    particle position (the running coupling cost does not depend on the
    control, so it drops out of the argmin); particles move by an explicit
    Euler step and weights never change.  Errors out if any particle comes
    within two cells of the box boundary.
    """
    grid = value.grid
    dt = value.dt
    controls = value.controls
    run_cost = dt * 0.5 * (controls * controls).sum(axis=1)
    n_p = m0.size
    pts = m0.points.copy()
    _assert_away_from_boundary(pts, grid, 0)
    positions = np.empty((value.n_steps + 1, n_p, grid.dim))
    positions[0] = pts
    sup_speed = np.zeros(n_p)
    for k in range(value.n_steps):
        feet = (pts[:, None, :] + dt * controls[None, :, :]).reshape(-1, grid.dim)
        interp = grid.interpolate_many(value.values[k + 1], feet, out_of_range="inf")
        q = interp.reshape(n_p, controls.shape[0]) + run_cost[None, :]
        feasible = np.isfinite(q).any(axis=1)
        if not feasible.all():
            i = int(np.argmin(feasible))
            raise DomainEscapeError(
                f"no feasible control for particle {i} at {pts[i].tolist()} "
                f"at time index {k}",
                point=tuple(pts[i].tolist()),
                time_index=k,
            )
        alpha = controls[np.argmin(q, axis=1)]
        pts = pts + dt * alpha
        _assert_away_from_boundary(pts, grid, k + 1)
        positions[k + 1] = pts
        sup_speed = np.maximum(sup_speed, np.sqrt((alpha * alpha).sum(axis=1)))
    sup_position = np.sqrt((positions * positions).sum(axis=-1)).max(axis=0)
    if core_box is not None:
        lo, hi = core_box
        flat = positions.reshape(-1, grid.dim)
        r1 = float(distance_to_box(flat, lo, hi).max())
    else:
        r1 = float("nan")
    stats = TrajectoryStats(
        sup_position=sup_position,
        sup_speed=sup_speed,
        chi_hat=float(sup_position.max()),
        chi_prime_hat=float(sup_speed.max()),
        r1_hat=r1,
    )
    path = MeasurePath(
        value.times,
        positions,
        m0.weights,
        metadata={"source": "transport_forward"},
    )
    return path, stats


def checkpoint_indices(n_steps: int, n_checkpoints: int = N_CHECKPOINTS) -> np.ndarray:
    """Equispaced time indices including both endpoints."""
    return np.unique(np.round(np.linspace(0, n_steps, n_checkpoints)).astype(int))


def _checkpoint_distance(
    a: MeasurePath,
    b: MeasurePath,
    ckpt: np.ndarray,
    size_cap: int,
    seed: int,
) -> tuple[float, bool]:
    worst = 0.0
    capped_any = False
    for j in ckpt:
        d, capped = wasserstein1_capped(
            a.measure_at(int(j)), b.measure_at(int(j)), size_cap=size_cap, seed=seed
        )
        capped_any = capped_any or capped
        worst = max(worst, d)
    return worst, capped_any


@dataclass(eq=False)
class MfgEquilibrium:
    """Candidate solution pair with its fixed-point certificates.

    ``path`` is the damped measure-path iterate the value field was solved
    against; ``flow_path`` is the pure transport of the initial cloud under
    that value field's feedback.  ``br_residual`` is the worst checkpoint
    d1 between the two (how far the path is from its own best response);
    ``fixed_point_residual`` is the worst checkpoint d1 between the last
    two damped iterates.
    """

    value: ValueField
    path: MeasurePath
    flow_path: MeasurePath
    trajectory_stats: TrajectoryStats
    fixed_point_residual: float
    br_residual: float
    converged: bool
    iterations: int
    trace: list
    checkpoints: np.ndarray
    metadata: dict = field(default_factory=dict)


def solve_mfg(
    F: CostFunctional,
    m0: DiscreteMeasure,
    T: float,
    grid: SpatialGrid,
    dt: float,
    damping_schedule: Callable[[int], float] | None = None,
    tol: float = 5e-3,
    max_iter: int = 30,
    control_radius: float | None = None,
    control_mesh: float | None = None,
    path_cap: int = 4096,
    w1_size_cap: int = DEFAULT_SIZE_CAP,
    seed: int = 0,
) -> MfgEquilibrium:
    """Damped fixed-point iteration coupling backward HJB to forward transport.

    Iterates path_{k+1} = (1 - lam_k) path_k + lam_k transport(hjb(path_k))
    as a per-time particle mixture, stopping when either the best-response
    distance or the damped step (max d1 over 9 equispaced checkpoint times)
    reaches ``tol``.  Non-convergence returns the best iterate seen with
    ``converged=False`` and the full residual trace.
    """
    if damping_schedule is None:
        damping_schedule = harmonic_damping
    n_t = int(round(T / dt))
    scale = max(1.0, abs(T))
    if n_t < 1 or abs(n_t * dt - T) > 1e-9 * scale:
        raise ValueError(f"step {dt} does not divide the horizon {T}")
    times = np.arange(n_t + 1) * dt
    ckpt = checkpoint_indices(n_t)
    seeds = np.random.SeedSequence(seed).generate_state(2 * max_iter + 2)
    core_box = (F.core_lower, F.core_upper)

    path = MeasurePath.constant(m0, times)
    best = None
    best_br = np.inf
    trace: list[tuple[int, float, float]] = []
    converged = False
    capped_any = False
    iterations = 0
    for k in range(max_iter):
        value = solve_hjb_backward(F, path, grid, dt, control_radius, control_mesh)
        flow_path, stats = transport_forward(value, m0, core_box=core_box)
        br_res, c1 = _checkpoint_distance(flow_path, path, ckpt, w1_size_cap, int(seeds[2 * k]))
        lam = float(damping_schedule(k))
        mixed = mix_paths(path, flow_path, lam, cap=path_cap, seed=int(seeds[2 * k + 1]))
        step_res, c2 = _checkpoint_distance(mixed, path, ckpt, w1_size_cap, int(seeds[2 * k]))
        capped_any = capped_any or c1 or c2
        trace.append((k, br_res, step_res))
        iterations = k + 1
        current = (value, path, flow_path, stats, br_res, step_res)
        if br_res < best_br:
            best, best_br = current, br_res
        if br_res <= tol or step_res <= tol:
            converged = True
            best = current
            break
        path = mixed
    value, path, flow_path, stats, br_res, step_res = best
    return MfgEquilibrium(
        value=value,
        path=path,
        flow_path=flow_path,
        trajectory_stats=stats,
        fixed_point_residual=float(step_res),
        br_residual=float(br_res),
        converged=converged,
        iterations=iterations,
        trace=trace,
        checkpoints=ckpt,
        metadata={
            "dt": float(dt),
            "tol": float(tol),
            "seed": int(seed),
            "path_cap": int(path_cap),
            "w1_capped": bool(capped_any),
        },
    )


def occupational_fractions(
    positions: np.ndarray,
    F: CostFunctional,
    path: MeasurePath,
    delta: float,
    grid: SpatialGrid,
    measure_indices=None,
) -> np.ndarray:
    """Fraction of time steps each trajectory spends where every sampled
    slice has normalized cost at least delta.

    ``positions`` has shape (n_times, n_slots, dim); the family of measures
    quantified over is the path at the given indices (default: 9 equispaced
    checkpoints).
    """
    pos = np.asarray(positions, dtype=float)
    n_times, n_slots, dim = pos.shape
    if measure_indices is None:
        measure_indices = checkpoint_indices(path.n_times - 1)
    flat = pos.reshape(-1, dim)
    min_fbar = np.full(flat.shape[0], np.inf)
    for j in measure_indices:
        m_j = path.measure_at(int(j))
        c_j = float(F.evaluate_many(grid.nodes, m_j).min())
        # chunk so the (points x support) pairwise work stays in cache-sized
        # blocks even for long trajectories against large supports
        step = max(1024, int(8_000_000 // max(1, m_j.size)))
        for lo in range(0, flat.shape[0], step):
            sl = slice(lo, lo + step)
            vals = F.evaluate_many(flat[sl], m_j)
            np.minimum(min_fbar[sl], vals - c_j, out=min_fbar[sl])
    occupied = (min_fbar >= delta).reshape(n_times, n_slots)
    # time steps, not node times: left endpoints of the n_times - 1 steps
    return occupied[:-1].mean(axis=0)


def occupational_measure(
    trajectory,
    F: CostFunctional,
    path: MeasurePath,
    delta: float,
    grid: SpatialGrid,
    measure_indices=None,
) -> float:
    """Occupational fraction for a single trajectory (n_times, dim)."""
    traj = np.atleast_2d(np.asarray(trajectory, dtype=float))
    rho = occupational_fractions(traj[:, None, :], F, path, delta, grid, measure_indices)
    return float(rho[0])


def a_priori_report(value: ValueField, F: CostFunctional | None = None) -> dict:
    """Scheme-level checks of the structural value-function bounds.

    Reports the largest upwind gradient norm over all time slices, the
    largest discrete time rate, and the worst deviations of
    u/(time remaining) from the range of the coupling cost seen along the
    path; ``eps`` is the scheme-error allowance 10 (h + dt).
    """
    grid = value.grid
    dt = value.dt
    n_t = value.n_steps
    grad_max = 0.0
    for k in range(n_t + 1):
        grad_max = max(grad_max, float(grid.upwind_gradient_norm_field(value.values[k]).max()))
    dt_rate_max = float(np.abs(np.diff(value.values, axis=0)).max() / dt)
    remaining = value.times[-1] - value.times[:-1]
    ratios = value.values[:-1] / remaining.reshape((-1,) + (1,) * grid.dim)
    f_min = float(value.f_slices.min())
    f_max = float(value.f_slices.max())
    report = {
        "grad_max": grad_max,
        "dt_rate_max": dt_rate_max,
        "low_gap": float((ratios - f_min).min()),
        "high_gap": float((ratios - f_max).max()),
        "f_min": f_min,
        "f_max": f_max,
        "eps": 10.0 * (grid.max_spacing + dt),
    }
    if F is not None:
        report["grad_bound"] = math.sqrt(4.0 * F.m_bound) + 0.1
        report["m_bound"] = F.m_bound
    return report
