"""Ergodic triples (c, v, m) via the Dirichlet eikonal problem.

Given a measure m in static equilibrium, the long-run value c is the
minimum of its cost slice and the corrector v solves |grad v| = ell with
ell = sqrt(2 (F - c)) and v = 0 on the grid-tolerant argmin set.  The
solver is Godunov-upwind fast sweeping (Gauss-Seidel over all axis
orderings); validation covers the Hamilton-Jacobi residual off the
Dirichlet set, the distributional continuity equation tested against
smooth bumps, a converse support/critical-value check, and the integral
identity tying the average cost under m to the critical value.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .cost_models import CostFunctional, slice_stats
from .errors import SolverError, StaticResidualError
from .grid_geometry import NodeSet, SpatialGrid, distance_to_set
from .measures import DiscreteMeasure, support_distance
from .static_game import residual as static_residual

_INF = float("inf")


# -- fast sweeping -----------------------------------------------------------


def _local_value(a0: float, h0: float, a1: float, h1: float, rhs: float) -> float:
    """Smallest t with sum_i ((t - a_i)+ / h_i)^2 = rhs^2 for up to 2 axes."""
    if a0 > a1:
        a0, a1, h0, h1 = a1, a0, h1, h0
    if a0 == _INF:
        return _INF
    t = a0 + rhs * h0
    if t <= a1:
        return t
    ih0 = 1.0 / (h0 * h0)
    ih1 = 1.0 / (h1 * h1)
    A = ih0 + ih1
    B = a0 * ih0 + a1 * ih1
    C = a0 * a0 * ih0 + a1 * a1 * ih1 - rhs * rhs
    disc = B * B - A * C
    if disc <= 0.0:
        return min(t, a1 + rhs * h1)
    return (B + math.sqrt(disc)) / A


def _sweep_1d(v, rhs, fixed, order) -> float:
    n = len(v)
    max_change = 0.0
    for i in order:
        if fixed[i]:
            continue
        a = v[i - 1] if i > 0 else _INF
        if i < n - 1 and v[i + 1] < a:
            a = v[i + 1]
        if a == _INF:
            continue
        t = a + rhs[i]
        if t < v[i]:
            change = v[i] - t
            if change > max_change:
                max_change = change
            v[i] = t
    return max_change


def _sweep_2d(v, ell, fixed, order0, order1, h0, h1) -> float:
    n0 = len(v)
    n1 = len(v[0])
    max_change = 0.0
    for i in order0:
        vi = v[i]
        fi = fixed[i]
        ei = ell[i]
        up = v[i - 1] if i > 0 else None
        down = v[i + 1] if i < n0 - 1 else None
        for j in order1:
            if fi[j]:
                continue
            a0 = up[j] if up is not None else _INF
            if down is not None and down[j] < a0:
                a0 = down[j]
            a1 = vi[j - 1] if j > 0 else _INF
            if j < n1 - 1 and vi[j + 1] < a1:
                a1 = vi[j + 1]
            t = _local_value(a0, h0, a1, h1, ei[j])
            if t < vi[j]:
                change = vi[j] - t
                if change > max_change:
                    max_change = change
                vi[j] = t
    return max_change


def solve_eikonal(
    ell,
    dirichlet: NodeSet,
    grid: SpatialGrid,
    sweep_tol: float = 1e-12,
    max_sweeps: int = 200,
) -> np.ndarray:
    """Godunov fast-sweeping solution of |grad v| = ell, v = 0 on the set.

    Gauss-Seidel passes alternate over all 2^dim index orderings until the
    largest node update in a full round falls below ``sweep_tol``; values
    only decrease, so the limit is the exact discrete solution.  Boundary
    nodes use one-sided (outflow) differences.  Raises
    :class:`SolverError` carrying the last update map when the sweep
    budget is exhausted.
    """
    arr = np.asarray(ell, dtype=float).reshape(grid.shape)
    if arr.min() < 0:
        raise ValueError(f"ell must be nonnegative, found {arr.min()}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("ell must be finite")
    if len(dirichlet) == 0:
        raise ValueError("the Dirichlet node set must be nonempty")
    fixed_flat = np.zeros(grid.n_nodes, dtype=bool)
    fixed_flat[dirichlet.indices] = True

    if grid.dim == 1:
        n = grid.shape[0]
        v = [_INF] * n
        for idx in dirichlet.indices:
            v[int(idx)] = 0.0
        rhs = (arr.ravel() * grid.spacing[0]).tolist()
        fixed = fixed_flat.tolist()
        forward = range(n)
        backward = range(n - 1, -1, -1)
        for _ in range(max_sweeps):
            change = _sweep_1d(v, rhs, fixed, forward)
            change = max(change, _sweep_1d(v, rhs, fixed, backward))
            if change <= sweep_tol:
                return np.asarray(v, dtype=float).reshape(grid.shape)
        raise SolverError(
            "eikonal fast sweeping did not converge within the sweep budget",
            residual=np.asarray(v, dtype=float).reshape(grid.shape),
        )

    n0, n1 = grid.shape
    v = [[_INF] * n1 for _ in range(n0)]
    fixed = fixed_flat.reshape(grid.shape).tolist()
    for idx in dirichlet.indices:
        i, j = np.unravel_index(int(idx), grid.shape)
        v[i][j] = 0.0
    ell_rows = arr.tolist()
    h0, h1 = float(grid.spacing[0]), float(grid.spacing[1])
    orders0 = (range(n0), range(n0 - 1, -1, -1))
    orders1 = (range(n1), range(n1 - 1, -1, -1))
    for _ in range(max_sweeps):
        change = 0.0
        for o0, o1 in itertools.product(orders0, orders1):
            change = max(change, _sweep_2d(v, ell_rows, fixed, o0, o1, h0, h1))
        if change <= sweep_tol:
            return np.asarray(v, dtype=float)
    raise SolverError(
        "eikonal fast sweeping did not converge within the sweep budget",
        residual=np.asarray(v, dtype=float),
    )


# -- independent shortest-path estimate ---------------------------------------


def value_function_crosscheck(ell, dirichlet: NodeSet, grid: SpatialGrid, x_samples):
    """Shortest-path estimate of the weighted distance, as an oracle.

    Builds the grid graph (2 neighbors in 1D, 8 in 2D) with edge cost equal
    to the mean of ell at the endpoints times the edge length, runs
    multi-source Dijkstra from the Dirichlet nodes, and reads the value at
    the node nearest each sample.  Returns a list of (point, value) pairs.
    """
    arr = np.asarray(ell, dtype=float).reshape(grid.shape)
    flat = arr.ravel()
    shape = grid.shape
    if grid.dim == 1:
        offsets = [(1,)]
    else:
        offsets = [(1, 0), (0, 1), (1, 1), (1, -1)]
    rows, cols, costs = [], [], []
    idx_grid = np.arange(grid.n_nodes).reshape(shape)
    for off in offsets:
        src_slices = []
        dst_slices = []
        for ax, o in enumerate(off):
            if o == 1:
                src_slices.append(slice(0, shape[ax] - 1))
                dst_slices.append(slice(1, shape[ax]))
            elif o == -1:
                src_slices.append(slice(1, shape[ax]))
                dst_slices.append(slice(0, shape[ax] - 1))
            else:
                src_slices.append(slice(None))
                dst_slices.append(slice(None))
        src = idx_grid[tuple(src_slices)].ravel()
        dst = idx_grid[tuple(dst_slices)].ravel()
        length = float(np.sqrt(((np.asarray(off) != 0) * grid.spacing**2).sum()))
        rows.append(src)
        cols.append(dst)
        costs.append(0.5 * (flat[src] + flat[dst]) * length)
    graph = sp.csr_matrix(
        (np.concatenate(costs), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_nodes, grid.n_nodes),
    )
    dist = dijkstra(graph, directed=False, indices=dirichlet.indices, min_only=True)
    pts = np.atleast_2d(np.asarray(x_samples, dtype=float))
    nearest = grid.nearest_node_index(pts)
    return [(pts[k].copy(), float(dist[nearest[k]])) for k in range(pts.shape[0])]


# -- distributional continuity check ------------------------------------------


def _bump(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    mask = np.abs(t) < 1.0
    tm = t[mask]
    out[mask] = np.exp(-1.0 / (1.0 - tm * tm))
    return out


def _bump_prime(t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    mask = np.abs(t) < 1.0
    tm = t[mask]
    q = 1.0 - tm * tm
    out[mask] = np.exp(-1.0 / q) * (-2.0 * tm) / (q * q)
    return out


def bump_gradient(center, width: float):
    """Gradient of a tensor-product smooth bump of the given width."""
    c = np.atleast_1d(np.asarray(center, dtype=float))

    def grad(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        t = (pts - c) / width
        vals = _bump(t)
        primes = _bump_prime(t) / width
        out = np.empty_like(pts)
        for ax in range(pts.shape[1]):
            others = np.ones(pts.shape[0])
            for other_ax in range(pts.shape[1]):
                if other_ax != ax:
                    others = others * vals[:, other_ax]
            out[:, ax] = primes[:, ax] * others
        return out

    return grad


def default_test_functions(grid: SpatialGrid):
    """Bump gradients centered on the interior quarter lattice, two widths."""
    extent = grid.upper_array - grid.lower_array
    fractions = (0.25, 0.5, 0.75)
    axis_centers = [
        [grid.lower[ax] + f * extent[ax] for f in fractions] for ax in range(grid.dim)
    ]
    family = []
    for center in itertools.product(*axis_centers):
        for frac in (0.25, 0.125):
            width = float(frac * extent.max())
            family.append(bump_gradient(np.asarray(center), width))
    return family


def node_gradient(v, grid: SpatialGrid) -> list[np.ndarray]:
    """Central-difference gradient per axis (one-sided at the boundary)."""
    arr = np.asarray(v, dtype=float).reshape(grid.shape)
    return [np.gradient(arr, grid.spacing[ax], axis=ax) for ax in range(grid.dim)]


def continuity_residual(v, m: DiscreteMeasure, grid: SpatialGrid, test_functions=None):
    """Worst violation of the weak continuity equation div(m grad v) = 0.

    Returns ``(max |integral of grad(phi) . grad(v) dm|, family size)`` over
    the test family; gradients of v are central differences interpolated at
    the particles.
    """
    if test_functions is None:
        test_functions = default_test_functions(grid)
    grads = node_gradient(v, grid)
    grad_v = np.stack(
        [grid.interpolate_many(g, m.points) for g in grads], axis=-1
    )
    worst = 0.0
    for grad_phi in test_functions:
        pairing = float(m.weights @ (grad_phi(m.points) * grad_v).sum(axis=1))
        worst = max(worst, abs(pairing))
    return worst, len(test_functions)


# -- triple construction and validation ----------------------------------------


@dataclass(eq=False)
class ErgodicTriple:
    """A candidate (c, v, m) with its validation residuals.

    ``residuals`` carries hj_residual (max Hamilton-Jacobi defect away from
    the Dirichlet set and the box boundary), continuity_residual,
    mather_residual, support_violation, and the continuity family size.
    ``boundary_monotone`` records whether v increases toward the box
    boundary (the outflow condition that replaces decay at infinity on a
    truncated domain).
    """

    c: float
    v: np.ndarray
    m: DiscreteMeasure
    grid: SpatialGrid
    dirichlet: NodeSet
    residuals: dict = field(default_factory=dict)
    boundary_monotone: bool = True
    metadata: dict = field(default_factory=dict)


def mather_identity_check(F: CostFunctional, m: DiscreteMeasure, grid: SpatialGrid) -> float:
    """|average of F under m minus the critical value| for a rest measure.

    For the Lagrangian |q|^2/2 + F the measure m x delta_0 minimizes the
    average action exactly when m charges only minimizers of F(., m), so
    this equals the static-equilibrium residual up to rounding.
    """
    particle_vals = F.evaluate_many(m.points, m)
    grid_min = float(F.evaluate_many(grid.nodes, m).min())
    c = min(grid_min, float(particle_vals.min()))
    return abs(float(m.weights @ particle_vals) - c)


def _boundary_monotone(v: np.ndarray, grid: SpatialGrid, tol: float) -> bool:
    for ax in range(grid.dim):
        outer_lo = [slice(None)] * grid.dim
        inner_lo = [slice(None)] * grid.dim
        outer_lo[ax], inner_lo[ax] = 0, 1
        outer_hi = [slice(None)] * grid.dim
        inner_hi = [slice(None)] * grid.dim
        outer_hi[ax], inner_hi[ax] = -1, -2
        if np.any(v[tuple(outer_lo)] < v[tuple(inner_lo)] - tol):
            return False
        if np.any(v[tuple(outer_hi)] < v[tuple(inner_hi)] - tol):
            return False
    return True


def _boundary_distance(points: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    lo_gap = points - grid.lower_array
    hi_gap = grid.upper_array - points
    return np.minimum(lo_gap, hi_gap).min(axis=1)


def build_ergodic_triple(
    F: CostFunctional,
    m: DiscreteMeasure,
    grid: SpatialGrid,
    static_tol: float = 1e-6,
    eps_min: float | None = None,
    sweep_tol: float = 1e-12,
    max_sweeps: int = 200,
    test_functions=None,
) -> ErgodicTriple:
    """Assemble and validate the ergodic triple seeded by a static solution.

    Requires the static residual of m to be at most ``static_tol``; the
    critical value is the grid minimum of F(., m), ell = sqrt(2 (F - c)),
    and v solves the Dirichlet eikonal problem on the argmin set.  The
    Hamilton-Jacobi residual is evaluated only at nodes farther than two
    cells from both the Dirichlet set and the box boundary, where the
    upwind norm is two-sided and the solution is differentiable.
    """
    res = static_residual(F, m, grid)
    if res > static_tol:
        raise StaticResidualError(
            f"measure is not a static equilibrium: residual {res} > {static_tol}",
            residual=res,
            tol=static_tol,
        )
    stats = slice_stats(F, m, grid, eps_min)
    c = stats.c_m
    ell = np.sqrt(2.0 * stats.fbar)
    v = solve_eikonal(ell, stats.argmin_set, grid, sweep_tol=sweep_tol, max_sweeps=max_sweeps)

    collar = 2.0 * grid.max_spacing
    # c + |grad v|^2/2 - F(., m) with F - c = fbar
    hvals = 0.5 * grid.upwind_gradient_norm_field(v) ** 2 - stats.fbar
    far_from_set = distance_to_set(grid.nodes, stats.argmin_set) > collar
    far_from_boundary = _boundary_distance(grid.nodes, grid) > collar
    eligible = (far_from_set & far_from_boundary).reshape(grid.shape)
    hj = float(np.abs(hvals[eligible]).max()) if eligible.any() else 0.0

    cont, family = continuity_residual(v, m, grid, test_functions)
    mather = mather_identity_check(F, m, grid)
    support_violation = support_distance(m, stats.argmin_set)
    tol_mono = max(1e-9, 1e-12 * float(np.max(v)))
    return ErgodicTriple(
        c=float(c),
        v=v,
        m=m,
        grid=grid,
        dirichlet=stats.argmin_set,
        residuals={
            "hj_residual": hj,
            "continuity_residual": cont,
            "continuity_family": family,
            "mather_residual": mather,
            "support_violation": float(support_violation),
            "static_residual": float(res),
        },
        boundary_monotone=_boundary_monotone(v, grid, tol_mono),
        metadata={"eps_min": stats.eps_min, "sweep_tol": sweep_tol},
    )


def converse_check(
    F: CostFunctional,
    triple: ErgodicTriple,
    grid: SpatialGrid,
    eps_min: float | None = None,
    c_tol: float = 1e-9,
) -> dict:
    """Necessary-condition report for a candidate triple.

    The measure must charge only (grid-tolerant) minimizers of its own
    slice, and the stored c may not exceed the slice minimum.
    """
    stats = slice_stats(F, triple.m, grid, eps_min)
    supp_dist = support_distance(triple.m, stats.argmin_set)
    support_ok = supp_dist <= grid.max_spacing * (1.0 + 1e-9)
    c_ok = triple.c <= stats.c_m + c_tol
    return {
        "support_distance": float(supp_dist),
        "support_ok": bool(support_ok),
        "c_m": float(stats.c_m),
        "c_gap": float(stats.c_m - triple.c),
        "c_ok": bool(c_ok),
        "passed": bool(support_ok and c_ok),
    }
