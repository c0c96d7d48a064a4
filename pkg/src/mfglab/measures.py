"""Discrete probability measures as weighted particle clouds.

Measures are Lagrangian particle lists: positions plus weights on the
simplex.  The 1-Wasserstein distance is computed exactly: in dimension one
by the CDF-difference integral, in dimension two by the Hungarian
assignment for equal uniform clouds and by a north-west-corner seeded
transportation simplex for general supports (both capped at
``DEFAULT_SIZE_CAP`` support points; the harness downsamples beyond that
and records it in metadata).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DomainEscapeError, InvalidMeasureError, SizeCapError, SolverError
from .grid_geometry import NodeSet, SpatialGrid, distance_to_set

WEIGHT_SUM_TOL = 1e-12
DUPLICATE_TOL = 1e-12
PRUNE_TOL = 1e-14
DEFAULT_SIZE_CAP = 512


@dataclass(eq=False)
class DiscreteMeasure:
    """Probability measure with finite support.

    ``points`` has shape (n, dim); ``weights`` is nonnegative and sums to
    one within ``WEIGHT_SUM_TOL``.  ``metadata`` records provenance such as
    the sampling source and seed.
    """

    points: np.ndarray
    weights: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InvalidMeasureError("points must be a nonempty (n, dim) array")
        if pts.shape[1] not in (1, 2):
            raise InvalidMeasureError("only dimensions 1 and 2 are supported")
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape[0] != pts.shape[0]:
            raise InvalidMeasureError("weights and points must have the same length")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise InvalidMeasureError("points and weights must be finite")
        if w.min() < -1e-15:
            raise InvalidMeasureError(f"negative weight {w.min()}")
        w = np.maximum(w, 0.0)
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidMeasureError(f"weights sum to {total}, not 1")
        self.points = pts.copy()
        self.weights = w.copy()

    # -- constructors ------------------------------------------------------

    @classmethod
    def dirac(cls, point, **metadata) -> "DiscreteMeasure":
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(p[None, :], np.array([1.0]), dict(metadata))

    @classmethod
    def uniform(cls, points, **metadata) -> "DiscreteMeasure":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n), dict(metadata))

    @classmethod
    def from_weighted(cls, points, weights, normalize: bool = False, **metadata) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=float).ravel()
        if normalize:
            total = w.sum()
            if total <= 0:
                raise InvalidMeasureError("cannot normalize nonpositive total weight")
            w = w / total
        return cls(points, w, dict(metadata))

    # -- basic queries -------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.points


def merge_duplicates(measure: DiscreteMeasure, tol: float = DUPLICATE_TOL) -> DiscreteMeasure:
    """Merge particles whose positions agree within ``tol`` per axis."""
    keys = np.round(measure.points / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    if first.size == measure.size:
        return measure
    weights = np.bincount(inverse, weights=measure.weights, minlength=first.size)
    return DiscreteMeasure(measure.points[first], weights / weights.sum(), dict(measure.metadata))


def prune(measure: DiscreteMeasure, w_min: float = PRUNE_TOL) -> DiscreteMeasure:
    """Drop particles below ``w_min`` weight and renormalize."""
    keep = measure.weights >= w_min
    if keep.all():
        return measure
    if not keep.any():
        raise InvalidMeasureError("pruning removed every particle")
    w = measure.weights[keep]
    return DiscreteMeasure(measure.points[keep], w / w.sum(), dict(measure.metadata))


def mix(a: DiscreteMeasure, b: DiscreteMeasure, lam: float) -> DiscreteMeasure:
    """Convex combination (1 - lam) a + lam b with merge and prune."""
    if a.dim != b.dim:
        raise InvalidMeasureError("cannot mix measures of different dimension")
    if lam <= 0.0:
        return a
    if lam >= 1.0:
        return b
    pts = np.concatenate([a.points, b.points], axis=0)
    w = np.concatenate([(1.0 - lam) * a.weights, lam * b.weights])
    return prune(merge_duplicates(DiscreteMeasure(pts, w / w.sum())))


# -- Wasserstein-1 ---------------------------------------------------------


def _w1_exact_1d(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    x = np.concatenate([a.points[:, 0], b.points[:, 0]])
    s = np.concatenate([a.weights, -b.weights])
    order = np.argsort(x, kind="stable")
    xs = x[order]
    cdf_gap = np.cumsum(s[order])
    return float(np.sum(np.abs(cdf_gap[:-1]) * np.diff(xs)))


def _w1_assignment(a: DiscreteMeasure, b: DiscreteMeasure) -> float:
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.sqrt((diff * diff).sum(axis=-1))
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / a.size)


def _northwest_corner(supply: np.ndarray, demand: np.ndarray):
    """Initial basic feasible flow; always returns n + m - 1 basis arcs."""
    n, m = supply.size, demand.size
    a = supply.copy()
    b = demand.copy()
    flow = {}
    arcs = []
    i = j = 0
    while True:
        q = min(a[i], b[j])
        flow[(i, j)] = q
        arcs.append((i, j))
        a[i] -= q
        b[j] -= q
        if i == n - 1 and j == m - 1:
            break
        if a[i] <= b[j] and i < n - 1:
            i += 1
        elif j < m - 1:
            j += 1
        else:
            i += 1
    return flow, arcs


def _transport_simplex(cost: np.ndarray, supply: np.ndarray, demand: np.ndarray) -> float:
    """Exact optimal-transport value on a dense bipartite cost matrix.

    Classical transportation simplex: north-west-corner seed, duals solved
    on the spanning basis tree, most negative reduced cost enters, first
    blocking arc leaves.  Degenerate pivots are allowed; a pivot cap guards
    against cycling.
    """
    n, m = cost.shape
    flow, arcs = _northwest_corner(supply, demand)
    # basis adjacency over nodes 0..n-1 (rows) and n..n+m-1 (cols)
    adj = [set() for _ in range(n + m)]
    for (i, j) in arcs:
        adj[i].add(n + j)
        adj[n + j].add(i)

    max_pivots = 400 + 40 * (n + m)
    for _ in range(max_pivots):
        # duals via breadth-first traversal of the basis tree
        u = np.full(n, np.nan)
        v = np.full(m, np.nan)
        u[0] = 0.0
        stack = [0]
        while stack:
            node = stack.pop()
            for other in adj[node]:
                if node < n:
                    j = other - n
                    if np.isnan(v[j]):
                        v[j] = cost[node, j] - u[node]
                        stack.append(other)
                else:
                    j = node - n
                    if np.isnan(u[other]):
                        u[other] = cost[other, j] - v[j]
                        stack.append(other)
        reduced = cost - u[:, None] - v[None, :]
        enter = np.unravel_index(int(np.argmin(reduced)), reduced.shape)
        if reduced[enter] >= -1e-12:
            break
        ei, ej = int(enter[0]), int(enter[1])
        # tree path from col ej back to row ei
        target = ei
        start = n + ej
        parent = {start: None}
        stack = [start]
        while stack:
            node = stack.pop()
            if node == target:
                break
            for other in adj[node]:
                if other not in parent:
                    parent[other] = node
                    stack.append(other)
        path = [target]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        # path runs ei -> ... -> n + ej; cycle closes with the entering arc.
        # Walking from the entering col end, edges alternate -theta, +theta.
        edges = []
        seq = path[::-1]  # n + ej -> ... -> ei
        for k in range(len(seq) - 1):
            aa, bb = seq[k], seq[k + 1]
            arc = (aa, bb - n) if aa < n else (bb, aa - n)
            edges.append(arc)
        minus = edges[0::2]
        theta_arc = min(minus, key=lambda arc: (flow[arc], arc))
        theta = flow[theta_arc]
        flow[(ei, ej)] = theta
        adj[ei].add(n + ej)
        adj[n + ej].add(ei)
        sign = -1.0
        for arc in edges:
            flow[arc] += sign * theta
            sign = -sign
        del flow[theta_arc]
        adj[theta_arc[0]].discard(n + theta_arc[1])
        adj[n + theta_arc[1]].discard(theta_arc[0])
    else:
        raise SolverError("transportation simplex exceeded its pivot cap")
    return float(sum(cost[i, j] * q for (i, j), q in flow.items()))


def wasserstein1(a: DiscreteMeasure, b: DiscreteMeasure, size_cap: int = DEFAULT_SIZE_CAP) -> float:
    """Exact 1-Wasserstein distance between two particle measures.

    Dimension one uses the CDF formula; dimension two uses the Hungarian
    assignment when both clouds are uniform with equal size, otherwise the
    transportation simplex.  Supports larger than ``size_cap`` raise
    :class:`SizeCapError` (see :func:`wasserstein1_capped`).
    """
    if a.dim != b.dim:
        raise InvalidMeasureError("measures have different dimensions")
    if a.dim == 1:
        return _w1_exact_1d(a, b)
    if max(a.size, b.size) > size_cap:
        raise SizeCapError(
            f"supports of size {a.size} and {b.size} exceed the exact-transport cap {size_cap}"
        )
    uniform = (
        a.size == b.size
        and np.allclose(a.weights, 1.0 / a.size, atol=1e-12, rtol=0.0)
        and np.allclose(b.weights, 1.0 / b.size, atol=1e-12, rtol=0.0)
    )
    if uniform:
        return _w1_assignment(a, b)
    diff = a.points[:, None, :] - b.points[None, :, :]
    cost = np.sqrt((diff * diff).sum(axis=-1))
    return _transport_simplex(cost, a.weights, b.weights)


def wasserstein1_capped(
    a: DiscreteMeasure,
    b: DiscreteMeasure,
    size_cap: int = DEFAULT_SIZE_CAP,
    seed: int = 0,
) -> tuple[float, bool]:
    """W1 with automatic systematic downsampling above the cap.

    Returns ``(value, capped)`` where ``capped`` records whether either
    measure was downsampled; callers are expected to surface that flag in
    output metadata.
    """
    capped = False
    if a.dim >= 2:
        rng = np.random.default_rng(seed)
        if a.size > size_cap:
            a = _downsample(a, size_cap, rng)
            capped = True
        if b.size > size_cap:
            b = _downsample(b, size_cap, rng)
            capped = True
    return wasserstein1(a, b, size_cap=size_cap), capped


def _systematic_indices(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    targets = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(weights), targets, side="left").clip(0, weights.size - 1)


def _downsample(m: DiscreteMeasure, n: int, rng: np.random.Generator) -> DiscreteMeasure:
    idx = _systematic_indices(m.weights, n, rng)
    meta = dict(m.metadata)
    meta["downsampled_to"] = n
    return merge_duplicates(
        DiscreteMeasure(m.points[idx], np.full(n, 1.0 / n), meta)
    )


# -- transport of measures ---------------------------------------------------


def push_forward(m: DiscreteMeasure, flow, grid: SpatialGrid | None = None) -> DiscreteMeasure:
    """Image measure under ``flow``: particles move, weights stay.

    ``flow`` maps a (n, dim) position array to a (n, dim) array.  When a
    grid is given, images beyond one cell outside the box raise
    :class:`DomainEscapeError`; images within that margin are clamped onto
    the box.
    """
    new_pts = np.asarray(flow(m.points.copy()), dtype=float)
    if new_pts.shape != m.points.shape:
        raise InvalidMeasureError(
            f"flow returned shape {new_pts.shape}, expected {m.points.shape}"
        )
    if grid is not None:
        _, _, escaped = grid.locate(new_pts)
        if escaped.any():
            bad = new_pts[int(np.argmax(escaped))]
            raise DomainEscapeError(
                f"flow sent a particle to {bad.tolist()}, beyond the clamp margin",
                point=tuple(bad.tolist()),
            )
        new_pts = np.clip(new_pts, grid.lower_array, grid.upper_array)
    return DiscreteMeasure(new_pts, m.weights, dict(m.metadata))


def support_distance(m: DiscreteMeasure, node_set: NodeSet, w_min: float = 0.0) -> float:
    """Largest distance from a retained particle to the node set.

    Particles with weight <= ``w_min`` are ignored.
    """
    keep = m.weights > w_min
    if not keep.any():
        raise InvalidMeasureError("w_min filtered out every particle")
    return float(np.max(distance_to_set(m.points[keep], node_set)))


# -- sampling from densities -------------------------------------------------


def _cell_masses(density: np.ndarray, grid: SpatialGrid) -> np.ndarray:
    """Cell mass array from a cell-indexed or node-indexed density."""
    dens = np.asarray(density, dtype=float)
    if dens.shape == tuple(grid.n_cells):
        cell_vals = dens
    elif dens.shape == grid.shape:
        # corner average: exact integral of the multilinear interpolant
        if grid.dim == 1:
            cell_vals = 0.5 * (dens[:-1] + dens[1:])
        else:
            cell_vals = 0.25 * (
                dens[:-1, :-1] + dens[1:, :-1] + dens[:-1, 1:] + dens[1:, 1:]
            )
    else:
        raise ValueError(
            f"density shape {dens.shape} matches neither cells {tuple(grid.n_cells)} "
            f"nor nodes {grid.shape}"
        )
    if cell_vals.min() < 0:
        raise ValueError("density must be nonnegative")
    return cell_vals * float(np.prod(grid.spacing))


def _cell_centroids(grid: SpatialGrid) -> np.ndarray:
    axes = [
        grid.lower[i] + (np.arange(grid.n_cells[i]) + 0.5) * grid.spacing[i]
        for i in range(grid.dim)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([mm.ravel() for mm in mesh], axis=-1)


def sample_from_density(density, grid: SpatialGrid, n_particles: int, seed: int = 0) -> DiscreteMeasure:
    """Deterministic stratified sampling of a density on the grid.

    Cell weights are proportional to density times cell volume.  When
    ``n_particles`` is at least the number of positive cells, one particle
    sits at each positive cell centroid carrying that cell's mass;
    otherwise a seeded systematic resampling selects ``n_particles``
    centroids with equal weights.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be positive")
    masses = _cell_masses(density, grid).ravel()
    total = masses.sum()
    if total <= 0:
        raise ValueError("density integrates to zero")
    w = masses / total
    centroids = _cell_centroids(grid)
    positive = np.flatnonzero(w > 0)
    meta = {"source": "sample_from_density", "seed": seed, "requested": n_particles}
    if n_particles >= positive.size:
        return DiscreteMeasure(centroids[positive], w[positive], meta)
    rng = np.random.default_rng(seed)
    idx = _systematic_indices(w, n_particles, rng)
    sampled = DiscreteMeasure(centroids[idx], np.full(n_particles, 1.0 / n_particles), meta)
    return merge_duplicates(sampled)


# -- measure paths -----------------------------------------------------------


@dataclass(eq=False)
class MeasurePath:
    """A time-indexed family of measures sharing one particle system.

    ``positions`` has shape (n_times, n_slots, dim); ``weights`` is one
    simplex vector shared by all times (particles move, weights stay).
    """

    times: np.ndarray
    positions: np.ndarray
    weights: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        pos = np.asarray(self.positions, dtype=float)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pos.ndim != 3:
            raise InvalidMeasureError("positions must have shape (n_times, n_slots, dim)")
        if pos.shape[0] != t.size:
            raise InvalidMeasureError("positions and times disagree on n_times")
        if pos.shape[1] != w.size:
            raise InvalidMeasureError("positions and weights disagree on n_slots")
        if t.size < 1 or np.any(np.diff(t) <= 0):
            raise InvalidMeasureError("times must be strictly increasing")
        # weight checks are delegated to DiscreteMeasure semantics
        DiscreteMeasure(pos[0], w)
        self.times = t.copy()
        self.positions = pos.copy()
        self.weights = np.maximum(w, 0.0).copy()

    @classmethod
    def constant(cls, m: DiscreteMeasure, times, **metadata) -> "MeasurePath":
        t = np.asarray(times, dtype=float).ravel()
        pos = np.broadcast_to(m.points, (t.size,) + m.points.shape).copy()
        return cls(t, pos, m.weights, dict(metadata))

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def n_slots(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def measure_at(self, k: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.positions[k], self.weights)


def _dedupe_trajectories(path: MeasurePath) -> MeasurePath:
    """Merge slots whose full trajectories coincide within 1e-12."""
    flattened = path.positions.transpose(1, 0, 2).reshape(path.n_slots, -1)
    keys = np.round(flattened / DUPLICATE_TOL).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    if first.size == path.n_slots:
        return path
    w = np.bincount(inverse, weights=path.weights, minlength=first.size)
    pos = path.positions[:, first, :]
    return MeasurePath(path.times, pos, w / w.sum(), dict(path.metadata))


def mix_paths(
    a: MeasurePath,
    b: MeasurePath,
    lam: float,
    cap: int | None = None,
    seed: int = 0,
) -> MeasurePath:
    """Damped mixture of two measure paths on the same time lattice.

    Slots are concatenated with weights scaled by (1 - lam) and lam,
    identical trajectories merged, tiny weights pruned, and the slot count
    capped by seeded systematic resampling of whole trajectories.
    """
    if a.n_times != b.n_times or not np.allclose(a.times, b.times, rtol=0.0, atol=1e-9):
        raise InvalidMeasureError("paths live on different time lattices")
    if a.dim != b.dim:
        raise InvalidMeasureError("paths have different dimensions")
    if lam >= 1.0:
        mixed = b
    elif lam <= 0.0:
        mixed = a
    else:
        pos = np.concatenate([a.positions, b.positions], axis=1)
        w = np.concatenate([(1.0 - lam) * a.weights, lam * b.weights])
        mixed = MeasurePath(a.times, pos, w / w.sum(), dict(b.metadata))
    mixed = _dedupe_trajectories(mixed)
    keep = mixed.weights >= PRUNE_TOL
    if not keep.all():
        w = mixed.weights[keep]
        mixed = MeasurePath(mixed.times, mixed.positions[:, keep, :], w / w.sum(), dict(mixed.metadata))
    if cap is not None and mixed.n_slots > cap:
        rng = np.random.default_rng(seed)
        idx = _systematic_indices(mixed.weights, cap, rng)
        pos = mixed.positions[:, idx, :]
        meta = dict(mixed.metadata)
        meta["path_resampled_to_cap"] = cap
        mixed = _dedupe_trajectories(
            MeasurePath(mixed.times, pos, np.full(cap, 1.0 / cap), meta)
        )
    return mixed
