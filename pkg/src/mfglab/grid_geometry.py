"""Uniform Cartesian grids on axis-aligned boxes in dimensions one and two.

Every solver in this package shares one spatial discretisation: a box
``[lower, upper]`` split into uniform cells, with fields stored at the cell
corners (nodes) in row-major order (last axis fastest).  This module owns
that lattice and the three geometric primitives everything else is built
from: multilinear interpolation with a strict escape policy, Euclidean
distance to node sets, and the Godunov upwind gradient norm used both by
the eikonal sweeper and by the a-priori gradient diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainEscapeError

# Relative slop applied to the one-cell clamp margin so points that sit on
# the margin up to rounding are clamped instead of rejected.
_MARGIN_SLOP = 1e-9


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform node lattice on an axis-aligned box.

    Axis ``i`` carries ``n_cells[i] + 1`` nodes at
    ``lower[i] + j * spacing[i]`` for ``j = 0 .. n_cells[i]``.
    Fields live on nodes as arrays of shape ``grid.shape``.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    n_cells: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(a) for a in np.atleast_1d(np.asarray(self.lower, dtype=float)))
        upper = tuple(float(b) for b in np.atleast_1d(np.asarray(self.upper, dtype=float)))
        cells = tuple(int(n) for n in np.atleast_1d(np.asarray(self.n_cells)))
        if not (len(lower) == len(upper) == len(cells)):
            raise ValueError("lower, upper and n_cells must have matching lengths")
        if len(lower) not in (1, 2):
            raise ValueError(f"only dimensions 1 and 2 are supported, got {len(lower)}")
        if any(b <= a for a, b in zip(lower, upper)):
            raise ValueError("upper must exceed lower on every axis")
        if any(n < 2 for n in cells):
            raise ValueError("need at least 2 cells per axis")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "n_cells", cells)

    # -- basic geometry ----------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.lower)

    @cached_property
    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float)

    @cached_property
    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float)

    @cached_property
    def cells_array(self) -> np.ndarray:
        return np.asarray(self.n_cells, dtype=int)

    @cached_property
    def spacing(self) -> np.ndarray:
        """Cell width per axis: (upper - lower) / n_cells."""
        return (self.upper_array - self.lower_array) / self.cells_array

    @property
    def max_spacing(self) -> float:
        return float(self.spacing.max())

    @property
    def shape(self) -> tuple[int, ...]:
        """Nodes per axis."""
        return tuple(n + 1 for n in self.n_cells)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    def axis_nodes(self, axis: int) -> np.ndarray:
        return self.lower[axis] + np.arange(self.n_cells[axis] + 1) * self.spacing[axis]

    @cached_property
    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, dim), row-major order."""
        axes = [self.axis_nodes(i) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def node_point(self, index) -> np.ndarray:
        """Coordinates of a node given a flat index or a multi-index."""
        if np.isscalar(index):
            multi = np.unravel_index(int(index), self.shape)
        else:
            multi = tuple(int(i) for i in index)
        return self.lower_array + np.asarray(multi, dtype=float) * self.spacing

    def nearest_node_index(self, points) -> np.ndarray:
        """Flat index of the node closest to each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        j = np.rint((pts - self.lower_array) / self.spacing).astype(int)
        j = np.clip(j, 0, self.cells_array)
        flat = np.ravel_multi_index(tuple(j.T), self.shape)
        return flat

    def contains(self, points, slack: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = self.lower_array - slack
        hi = self.upper_array + slack
        return np.all((pts >= lo) & (pts <= hi), axis=1)

    # -- interpolation -----------------------------------------------------

    def locate(self, points):
        """Cell index and barycentric weight per axis for each query point.

        Points are clamped onto the box; points farther than one cell width
        outside on any axis are flagged as escaped.  Returns
        ``(cell_index (k, dim) int, weight (k, dim) float, escaped (k,) bool)``.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, grid has {self.dim}")
        t = (pts - self.lower_array) / self.spacing
        margin = 1.0 + _MARGIN_SLOP * (1.0 + self.cells_array)
        escaped = np.any((t < -margin) | (t > self.cells_array + margin), axis=1)
        t = np.clip(t, 0.0, self.cells_array.astype(float))
        j = np.minimum(np.floor(t).astype(int), self.cells_array - 1)
        w = t - j
        return j, w, escaped

    def interpolate_many(self, field, points, out_of_range: str = "raise") -> np.ndarray:
        """Multilinear interpolation of a node field at many points.

        Exact on multilinear fields.  Clamping onto the box is applied up to
        one cell width outside; beyond that the point has escaped and the
        behaviour follows ``out_of_range``: ``"raise"`` raises
        :class:`DomainEscapeError`, ``"inf"`` returns ``+inf`` for the
        escaped entries.
        """
        arr = np.asarray(field, dtype=float)
        if arr.shape != self.shape:
            raise ValueError(f"field has shape {arr.shape}, expected {self.shape}")
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        j, w, escaped = self.locate(pts)
        if escaped.any():
            if out_of_range == "raise":
                bad = pts[int(np.argmax(escaped))]
                raise DomainEscapeError(
                    f"point {bad.tolist()} lies more than one cell outside the box",
                    point=tuple(bad.tolist()),
                )
            if out_of_range != "inf":
                raise ValueError(f"unknown out_of_range mode {out_of_range!r}")
        flat = arr.ravel()
        if self.dim == 1:
            i0 = j[:, 0]
            w0 = w[:, 0]
            vals = flat[i0] * (1.0 - w0) + flat[i0 + 1] * w0
        else:
            ny = self.shape[1]
            base = j[:, 0] * ny + j[:, 1]
            w0, w1 = w[:, 0], w[:, 1]
            vals = (
                flat[base] * (1.0 - w0) * (1.0 - w1)
                + flat[base + ny] * w0 * (1.0 - w1)
                + flat[base + 1] * (1.0 - w0) * w1
                + flat[base + ny + 1] * w0 * w1
            )
        if escaped.any():
            vals = vals.copy()
            vals[escaped] = np.inf
        return vals

    def interpolate(self, field, x) -> float:
        """Multilinear interpolation at a single point."""
        return float(self.interpolate_many(field, np.atleast_2d(np.asarray(x, dtype=float)))[0])

    # -- upwind gradient ---------------------------------------------------

    def upwind_gradient_norm_field(self, field) -> np.ndarray:
        """Godunov upwind gradient norm at every node.

        Per axis the contribution is ``max(D-, -D+, 0)`` with one-sided
        differences at the box boundary; the norm is the Euclidean
        combination across axes.
        """
        arr = np.asarray(field, dtype=float)
        if arr.shape != self.shape:
            raise ValueError(f"field has shape {arr.shape}, expected {self.shape}")
        total = np.zeros(self.shape)
        for ax in range(self.dim):
            d = np.diff(arr, axis=ax) / self.spacing[ax]
            pad_shape = list(arr.shape)
            pad_shape[ax] = 1
            pad = np.full(pad_shape, -np.inf)
            backward = np.concatenate([pad, d], axis=ax)
            forward_neg = np.concatenate([-d, pad], axis=ax)
            contrib = np.maximum(np.maximum(backward, forward_neg), 0.0)
            total += contrib * contrib
        return np.sqrt(total)

    def upwind_gradient_norm(self, field, node) -> float:
        """Godunov upwind gradient norm at one node (flat or multi index)."""
        arr = np.asarray(field, dtype=float)
        if arr.shape != self.shape:
            raise ValueError(f"field has shape {arr.shape}, expected {self.shape}")
        if np.isscalar(node):
            multi = np.unravel_index(int(node), self.shape)
        else:
            multi = tuple(int(i) for i in node)
        total = 0.0
        for ax in range(self.dim):
            i = multi[ax]
            h = self.spacing[ax]
            here = arr[multi]
            candidates = [0.0]
            if i > 0:
                left = list(multi)
                left[ax] = i - 1
                candidates.append((here - arr[tuple(left)]) / h)
            if i < self.shape[ax] - 1:
                right = list(multi)
                right[ax] = i + 1
                candidates.append((here - arr[tuple(right)]) / h)
            c = max(candidates)
            total += c * c
        return float(np.sqrt(total))


@dataclass(frozen=True, eq=False)
class NodeSet:
    """A finite set of grid nodes, stored as sorted unique flat indices.

    ``tol`` records the extraction tolerance the set was built with (zero
    for exact constructions); it is carried as metadata only.
    """

    grid: SpatialGrid
    indices: np.ndarray
    tol: float = 0.0

    def __post_init__(self):
        idx = np.unique(np.asarray(self.indices, dtype=np.int64).ravel())
        if idx.size and (idx[0] < 0 or idx[-1] >= self.grid.n_nodes):
            raise ValueError("node index out of range")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_mask(cls, grid: SpatialGrid, mask, tol: float = 0.0) -> "NodeSet":
        m = np.asarray(mask, dtype=bool)
        if m.shape != grid.shape:
            raise ValueError(f"mask has shape {m.shape}, expected {grid.shape}")
        return cls(grid, np.flatnonzero(m.ravel()), tol)

    @classmethod
    def from_points(cls, grid: SpatialGrid, points, tol: float = 0.0) -> "NodeSet":
        """Snap points to their nearest nodes."""
        return cls(grid, grid.nearest_node_index(points), tol)

    @cached_property
    def points(self) -> np.ndarray:
        """Coordinates of the member nodes, shape (len, dim)."""
        return self.grid.nodes[self.indices]

    def __len__(self) -> int:
        return int(self.indices.size)

    def __contains__(self, flat_index) -> bool:
        return bool(np.isin(int(flat_index), self.indices))


def distance_to_set(points, node_set: NodeSet):
    """Euclidean distance from each point to the nearest node of the set.

    Raises ``ValueError`` on an empty set.  Scalar in, scalar out.
    """
    if len(node_set) == 0:
        raise ValueError("distance to an empty node set is undefined")
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != node_set.grid.dim:
        raise ValueError(f"points have dimension {pts.shape[1]}, grid has {node_set.grid.dim}")
    diff = pts[:, None, :] - node_set.points[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1).min(axis=1))
    return float(d[0]) if single else d


def distance_to_box(points, lower, upper):
    """Euclidean distance from each point to an axis-aligned box."""
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    d = np.sqrt((gap * gap).sum(axis=1))
    return float(d[0]) if single else d
