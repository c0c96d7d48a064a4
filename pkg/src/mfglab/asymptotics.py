"""Horizon-sweep harness for the long-time behavior of the evolutive game.

Solves the finite-horizon MFG for a list of horizons T and measures, on a
rescaled time grid s = t/T, how fast the population collapses onto the
minimizing set, how close u(x, sT)/T gets to c*(1 - s), and (when the
minimizing set is a single point) how the shifted value approaches the
ergodic potential and the measures approach the Dirac limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cost_models import CostFunctional, slice_stats
from .eikonal_ergodic import build_ergodic_triple
from .errors import SolverError, StaticResidualError
from .finite_horizon import (
    a_priori_report,
    checkpoint_indices,
    occupational_fractions,
    solve_mfg,
)
from .grid_geometry import NodeSet, SpatialGrid, distance_to_set
from .measures import (
    DEFAULT_SIZE_CAP,
    DiscreteMeasure,
    support_distance,
    wasserstein1_capped,
)

DEFAULT_S_GRID = (0.1, 0.25, 0.5, 0.75, 1.0)
DEFAULT_T_LIST = (5.0, 10.0, 20.0, 40.0)


def nonincreasing_with_slack(values, slack: float = 0.25, atol: float = 0.01) -> bool:
    """Monotone-decay check with multiplicative slack per step.

    Accepts a sequence as "non-increasing" when no step grows by more than
    the slack fraction (plus an absolute floor for values stuck at the
    discretization level) and the last entry does not exceed the first by
    more than the floor.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size <= 1:
        return True
    if not np.isfinite(v).all():
        return False
    steps_ok = bool(np.all(v[1:] <= v[:-1] * (1.0 + slack) + atol))
    net_ok = bool(v[-1] <= v[0] + atol)
    return steps_ok and net_ok


def stable_within(values, frac: float = 0.10, atol: float = 1e-9) -> bool:
    """True when a sequence varies by at most the given fraction of its size."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0 or not np.isfinite(v).all():
        return False
    spread = float(v.max() - v.min())
    return spread <= frac * float(np.abs(v).max()) + atol


def bounded_ratio(values) -> float:
    """max/min of a nonnegative sequence (1.0 when identically zero)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0 or not np.isfinite(v).all() or v.min() < 0:
        return float("inf")
    if v.max() == 0.0:
        return 1.0
    if v.min() == 0.0:
        return float("inf")
    return float(v.max() / v.min())


@dataclass
class SweepParams:
    """Knobs shared by every horizon in a sweep.

    ``mode`` selects the time resolution policy: "fixed_steps" keeps the
    number of steps constant across T (dt grows with T), "fixed_dt" keeps
    dt constant (step count grows with T; dt must divide every T).
    """

    mode: str = "fixed_steps"
    n_steps: int = 200
    dt: float | None = None
    s_grid: tuple = DEFAULT_S_GRID
    R: float = 1.0
    delta_occ: float = 0.1
    tol: float = 5e-3
    max_iter: int = 30
    control_radius: float | None = None
    control_mesh: float | None = None
    path_cap: int = 4096
    w1_size_cap: int = DEFAULT_SIZE_CAP
    eps_min: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed_steps", "fixed_dt"):
            raise ValueError(f"unknown sweep mode {self.mode!r}")
        if self.mode == "fixed_dt" and (self.dt is None or self.dt <= 0):
            raise ValueError("fixed_dt mode requires a positive dt")
        if self.mode == "fixed_steps" and self.n_steps < 1:
            raise ValueError("fixed_steps mode requires n_steps >= 1")
        s = np.asarray(self.s_grid, dtype=float)
        if s.size == 0 or np.any(s <= 0.0) or np.any(s > 1.0) or np.any(np.diff(s) <= 0):
            raise ValueError("s_grid must be strictly increasing inside (0, 1]")
        if self.R <= 0 or self.delta_occ <= 0:
            raise ValueError("R and delta_occ must be positive")

    def step_for(self, T: float) -> float:
        if self.mode == "fixed_steps":
            return float(T) / self.n_steps
        n = int(round(T / self.dt))
        if n < 1 or abs(n * self.dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"sweep dt {self.dt} does not divide horizon {T}")
        return float(self.dt)


@dataclass(eq=False)
class SweepRecord:
    """Everything measured for one horizon T, on the rescaled s-grid.

    The per-s arrays are aligned with ``s_grid``; ``slice_measures`` holds
    the transported population at the snapped times s*T, ``u_slices`` the
    value function there (flat node arrays).  ``tainted`` marks a horizon
    whose fixed point did not reach tolerance; its numbers are reported but
    should not certify any limit claim.
    """

    T: float
    dt: float
    n_steps: int
    s_grid: np.ndarray
    s_times: np.ndarray
    R: float
    delta_occ: float
    support_dist: np.ndarray
    d1_to_limit: np.ndarray
    value_rate_err: np.ndarray
    wkam_err: np.ndarray
    u_slices: np.ndarray
    slice_measures: list
    rho: np.ndarray
    start_points: np.ndarray
    start_dists: np.ndarray
    occ_bound: float
    chi_hat: float
    chi_prime_hat: float
    r1_hat: float
    a_priori: dict
    converged: bool
    tainted: bool
    iterations: int
    br_residual: float
    fixed_point_residual: float
    c_star_used: float
    argmin_points: np.ndarray
    estimated: bool
    metadata: dict = field(default_factory=dict)


def _slice_index_for(s: float, n_steps: int) -> int:
    return int(round(s * n_steps))


def _estimate_argmin_and_c(
    F: CostFunctional,
    equilibrium,
    s_grid: np.ndarray,
    grid: SpatialGrid,
    eps_min: float | None,
):
    """Union of slice argmins, and mean slice minimum over the latter half."""
    n_t = equilibrium.value.n_steps
    indices = set()
    c_values = []
    for s in s_grid:
        m_s = equilibrium.flow_path.measure_at(_slice_index_for(float(s), n_t))
        stats = slice_stats(F, m_s, grid, eps_min=eps_min)
        indices.update(int(i) for i in stats.argmin_set.indices)
        if s >= 0.5:
            c_values.append(stats.c_m)
    node_set = NodeSet(grid, np.array(sorted(indices), dtype=np.int64))
    return node_set, float(np.mean(c_values))


def run_sweep(
    F: CostFunctional,
    m0: DiscreteMeasure,
    T_list,
    grid: SpatialGrid,
    params: SweepParams | None = None,
) -> list[SweepRecord]:
    """Solve the MFG for every horizon and fill one record per horizon.

    The minimizing set and the critical value come from the model when it
    declares them; otherwise both are estimated from the largest-horizon
    solution (union of slice argmins; mean slice minimum over s >= 1/2) and
    the records are flagged ``estimated``.  A non-converged fixed point
    taints its record instead of aborting the sweep.
    """
    if params is None:
        params = SweepParams()
    horizons = sorted(float(T) for T in T_list)
    if len(horizons) == 0:
        raise ValueError("T_list must not be empty")
    s_grid = np.asarray(params.s_grid, dtype=float)
    seeds = np.random.SeedSequence(params.seed).generate_state(len(horizons))

    solves = []
    for T, seed in zip(horizons, seeds):
        dt = params.step_for(T)
        eq = solve_mfg(
            F,
            m0,
            T,
            grid,
            dt,
            tol=params.tol,
            max_iter=params.max_iter,
            control_radius=params.control_radius,
            control_mesh=params.control_mesh,
            path_cap=params.path_cap,
            w1_size_cap=params.w1_size_cap,
            seed=int(seed),
        )
        solves.append((T, dt, eq))

    if F.analytic_argmin is not None and F.analytic_c_star is not None:
        argmin_set = NodeSet.from_points(grid, F.analytic_argmin)
        c_star = float(F.analytic_c_star)
        estimated = False
    else:
        argmin_set, c_star = _estimate_argmin_and_c(
            F, solves[-1][2], s_grid, grid, params.eps_min
        )
        estimated = True
    argmin_points = argmin_set.points
    singleton = argmin_points.shape[0] == 1

    v_erg = None
    if singleton:
        try:
            triple = build_ergodic_triple(
                F,
                DiscreteMeasure.dirac(argmin_points[0]),
                grid,
                eps_min=params.eps_min,
            )
            v_erg = triple.v.ravel()
        except (StaticResidualError, SolverError):
            v_erg = None

    ball = np.sqrt((grid.nodes * grid.nodes).sum(axis=1)) <= params.R + 1e-12
    if not ball.any():
        raise ValueError(f"no grid node inside the ball of radius {params.R}")
    limit = DiscreteMeasure.dirac(argmin_points[0]) if singleton else None

    records = []
    for T, dt, eq in solves:
        n_t = eq.value.n_steps
        n_s = s_grid.size
        sup_dist = np.empty(n_s)
        d1 = np.full(n_s, np.nan)
        rate_err = np.empty(n_s)
        wkam = np.full(n_s, np.nan)
        u_slices = np.empty((n_s, grid.n_nodes))
        slice_measures = []
        s_times = np.empty(n_s)
        for i, s in enumerate(s_grid):
            k = _slice_index_for(float(s), n_t)
            s_times[i] = eq.value.times[k]
            u = eq.value.values[k].ravel()
            u_slices[i] = u
            m_s = eq.flow_path.measure_at(k)
            slice_measures.append(m_s)
            sup_dist[i] = support_distance(m_s, argmin_set)
            if limit is not None:
                d1[i], _ = wasserstein1_capped(
                    m_s, limit, size_cap=params.w1_size_cap, seed=params.seed
                )
            rate_err[i] = float(np.abs(u[ball] / T - c_star * (1.0 - s)).max())
            if v_erg is not None:
                shifted = u - c_star * T * (1.0 - s)
                wkam[i] = float(np.abs(shifted[ball] - v_erg[ball]).max())

        rho = occupational_fractions(
            eq.flow_path.positions, F, eq.flow_path, params.delta_occ, grid
        )
        starts = eq.flow_path.positions[0]
        start_dists = distance_to_set(starts, argmin_set)
        away = start_dists > grid.max_spacing
        if away.any():
            occ_bound = float(
                (rho[away] * T * params.delta_occ / start_dists[away]).max()
            )
        else:
            occ_bound = float("nan")

        records.append(
            SweepRecord(
                T=float(T),
                dt=float(dt),
                n_steps=n_t,
                s_grid=s_grid.copy(),
                s_times=s_times,
                R=float(params.R),
                delta_occ=float(params.delta_occ),
                support_dist=sup_dist,
                d1_to_limit=d1,
                value_rate_err=rate_err,
                wkam_err=wkam,
                u_slices=u_slices,
                slice_measures=slice_measures,
                rho=rho,
                start_points=starts.copy(),
                start_dists=start_dists,
                occ_bound=occ_bound,
                chi_hat=eq.trajectory_stats.chi_hat,
                chi_prime_hat=eq.trajectory_stats.chi_prime_hat,
                r1_hat=eq.trajectory_stats.r1_hat,
                a_priori=a_priori_report(eq.value, F),
                converged=eq.converged,
                tainted=not eq.converged,
                iterations=eq.iterations,
                br_residual=eq.br_residual,
                fixed_point_residual=eq.fixed_point_residual,
                c_star_used=c_star,
                argmin_points=argmin_points.copy(),
                estimated=estimated,
                metadata={"mode": params.mode, "seed": int(params.seed)},
            )
        )
    return records


def singleton_limit_check(
    F: CostFunctional,
    records: list,
    x_star,
    grid: SpatialGrid,
    wkam_cap: float = 5e-2,
    slack: float = 0.25,
    atol: float = 0.01,
) -> dict:
    """Dirac-limit and ergodic-potential report for a one-point minimizing set.

    Rebuilds the ergodic potential anchored at ``x_star``, tabulates per
    (T, s) the distance of the transported measure to the Dirac limit and
    the sup distance (over the R-ball) of u(x, sT) - c* T (1 - s) to that
    potential, and passes when both decay in T (within slack) at every
    s >= 0.25 and the potential error at the largest horizon stays below
    ``wkam_cap`` at interior s (the terminal slice s = 1 carries the flat
    terminal condition, not the potential).
    """
    if len(records) == 0:
        raise ValueError("no sweep records supplied")
    x_star = np.asarray(x_star, dtype=float).ravel()
    for rec in records:
        pts = np.asarray(rec.argmin_points, dtype=float)
        if pts.shape[0] != 1:
            raise ValueError("minimizing set recorded in the sweep is not a singleton")
        if np.abs(pts[0] - x_star).max() > grid.max_spacing * (1.0 + 1e-9):
            raise ValueError(
                f"recorded minimizer {pts[0].tolist()} is not {x_star.tolist()}"
            )
    records = sorted(records, key=lambda r: r.T)
    s_grid = records[0].s_grid
    c_star = records[0].c_star_used
    T_values = np.array([r.T for r in records])

    triple = build_ergodic_triple(F, DiscreteMeasure.dirac(x_star), grid)
    v_erg = triple.v.ravel()
    ball = np.sqrt((grid.nodes * grid.nodes).sum(axis=1)) <= records[0].R + 1e-12
    limit = DiscreteMeasure.dirac(x_star)

    n_T, n_s = len(records), s_grid.size
    wkam = np.empty((n_T, n_s))
    d1 = np.empty((n_T, n_s))
    for i, rec in enumerate(records):
        for j, s in enumerate(s_grid):
            shifted = rec.u_slices[j] - c_star * rec.T * (1.0 - s)
            wkam[i, j] = float(np.abs(shifted[ball] - v_erg[ball]).max())
            d1[i, j], _ = wasserstein1_capped(rec.slice_measures[j], limit)

    tail = s_grid >= 0.25
    interior = tail & (s_grid < 1.0 - 1e-12)
    d1_monotone = np.array(
        [nonincreasing_with_slack(d1[:, j], slack, atol) for j in range(n_s)]
    )
    wkam_monotone = np.array(
        [nonincreasing_with_slack(wkam[:, j], slack, atol) for j in range(n_s)]
    )
    wkam_final = float(wkam[-1, interior].max()) if interior.any() else float("nan")
    passed = (
        bool(d1_monotone[tail].all())
        and bool(wkam_monotone[tail].all())
        and bool(np.isfinite(wkam_final))
        and wkam_final <= wkam_cap
    )
    return {
        "x_star": x_star,
        "c_star": float(c_star),
        "T_values": T_values,
        "s_grid": s_grid.copy(),
        "d1_table": d1,
        "wkam_table": wkam,
        "d1_monotone": d1_monotone,
        "wkam_monotone": wkam_monotone,
        "wkam_final": wkam_final,
        "wkam_cap": float(wkam_cap),
        "ergodic_triple": triple,
        "passed": passed,
    }


def semilimit_surrogates(
    records: list,
    F: CostFunctional,
    grid: SpatialGrid,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Finite surrogates of the relaxed lower/upper limits of F(x, m^T(sT)).

    For each s on the grid, takes the pointwise min and max of the slice
    costs over the two largest horizons and the neighboring s values, and
    the sup gap between them; a gap near zero at every s certifies that the
    slice costs converge (the single-limit scenario), a gap bounded away
    from zero flags genuine oscillation.

    Returns (lower, upper, gaps) with shapes (n_s, n_nodes), (n_s, n_nodes),
    (n_s,).
    """
    if len(records) < 3:
        raise ValueError("semilimit surrogates need at least 3 horizons")
    records = sorted(records, key=lambda r: r.T)
    top = records[-2:]
    s_grid = records[0].s_grid
    n_s = s_grid.size
    slice_costs = np.empty((len(top), n_s, grid.n_nodes))
    for i, rec in enumerate(top):
        for j in range(n_s):
            slice_costs[i, j] = F.evaluate_many(grid.nodes, rec.slice_measures[j])
    lower = np.empty((n_s, grid.n_nodes))
    upper = np.empty((n_s, grid.n_nodes))
    for j in range(n_s):
        nbr = slice(max(0, j - 1), min(n_s, j + 2))
        block = slice_costs[:, nbr, :].reshape(-1, grid.n_nodes)
        lower[j] = block.min(axis=0)
        upper[j] = block.max(axis=0)
    gaps = (upper - lower).max(axis=1)
    return lower, upper, gaps
