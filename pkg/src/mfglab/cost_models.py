"""Cost functionals F(x, m) coupling position to the crowd distribution.

A model bundles a vectorised evaluator with the structural metadata the
solvers and diagnostics rely on: a bound on |F| over the box, a core box
that must contain every slice argmin, the cost gap outside the core, and,
when known in closed form, the argmin set and critical value of the
long-time limit.  None of the built-ins is monotone in the measure; the
coupling enters through bounded kernel integrals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidMeasureError, ModelValidationError
from .grid_geometry import NodeSet, SpatialGrid, distance_to_box
from .measures import DiscreteMeasure, sample_from_density, wasserstein1

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class CostFunctional:
    """A coupling cost F(x, m) with its structural metadata.

    ``evaluator`` maps (points (k, dim), measure) to values (k,).
    ``core_lower``/``core_upper`` bound the box where slice argmins must
    live; ``gap`` is a certified lower bound on F - min F outside it.
    ``analytic_argmin`` (coordinates, shape (k, dim)) and
    ``analytic_c_star`` are set when the long-time limit is known in
    closed form.  ``test_only`` marks oracles that are not legitimate
    experiment models.
    """

    name: str
    dim: int
    evaluator: Callable[[np.ndarray, DiscreteMeasure], np.ndarray]
    m_bound: float
    core_lower: tuple[float, ...]
    core_upper: tuple[float, ...]
    gap: float
    analytic_argmin: np.ndarray | None = None
    analytic_c_star: float | None = None
    lipschitz_d1: float | None = None
    test_only: bool = False
    params: dict = field(default_factory=dict)

    def evaluate_many(self, points, m: DiscreteMeasure) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dim:
            raise ValueError(f"points have dimension {pts.shape[1]}, model has {self.dim}")
        if m.dim != self.dim:
            raise InvalidMeasureError(f"measure has dimension {m.dim}, model has {self.dim}")
        vals = np.asarray(self.evaluator(pts, m), dtype=float)
        return vals.reshape(pts.shape[0])

    def evaluate(self, x, m: DiscreteMeasure) -> float:
        return float(self.evaluate_many(np.atleast_2d(np.asarray(x, dtype=float)), m)[0])


@dataclass(eq=False)
class CostSliceStats:
    """Grid statistics of one slice x -> F(x, m)."""

    c_m: float
    argmin_set: NodeSet
    fbar: np.ndarray
    eps_min: float


def default_eps_min(max_abs_f: float, grid: SpatialGrid) -> float:
    """Argmin extraction tolerance: second-order flatness of smooth minima."""
    return 10.0 * max_abs_f * grid.max_spacing ** 2


def slice_stats(
    F: CostFunctional,
    m: DiscreteMeasure,
    grid: SpatialGrid,
    eps_min: float | None = None,
) -> CostSliceStats:
    """Minimum, grid-tolerant argmin set, and shifted values of F(., m).

    Logs a warning when the extracted argmin leaks outside the model's
    core box (an assumption-violation signal, not an error).
    """
    vals = F.evaluate_many(grid.nodes, m).reshape(grid.shape)
    c = float(vals.min())
    if eps_min is None:
        eps_min = default_eps_min(float(np.abs(vals).max()), grid)
    mask = (vals - c) <= eps_min
    argmin = NodeSet.from_mask(grid, mask, tol=eps_min)
    outside = distance_to_box(argmin.points, F.core_lower, F.core_upper) > grid.max_spacing
    if outside.any():
        logger.warning(
            "model %s: %d argmin node(s) outside the core box", F.name, int(outside.sum())
        )
    return CostSliceStats(c_m=c, argmin_set=argmin, fbar=vals - c, eps_min=eps_min)


def gamma_estimate(
    F: CostFunctional,
    grid: SpatialGrid,
    r_values,
    measures,
    argmin_points=None,
    eps_min: float | None = None,
) -> list[tuple[float, float]]:
    """Empirical coercivity profile from sampled measures.

    For each radius r, the minimum of F(., m) - min F(., m) over nodes
    farther than r from the argmin set, minimised over the sampled
    measures.  Nondecreasing in r by nestedness; radii whose node set is
    empty are dropped.
    """
    if argmin_points is None:
        argmin_points = F.analytic_argmin
    if argmin_points is None:
        unions = []
        for m in measures:
            unions.append(slice_stats(F, m, grid, eps_min).argmin_set.points)
        argmin_points = np.concatenate(unions, axis=0)
    pts = np.atleast_2d(np.asarray(argmin_points, dtype=float))
    diff = grid.nodes[:, None, :] - pts[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1)).min(axis=1)
    fbars = [slice_stats(F, m, grid, eps_min).fbar.ravel() for m in measures]
    table = []
    for r in sorted(float(r) for r in r_values):
        mask = dist > r
        if not mask.any():
            continue
        gamma = min(float(fb[mask].min()) for fb in fbars)
        table.append((r, gamma))
    return table


# -- model builders ----------------------------------------------------------


def _as_box(dim: int, lower, upper) -> tuple[tuple[float, ...], tuple[float, ...]]:
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (dim,))
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (dim,))
    return tuple(float(x) for x in lo), tuple(float(x) for x in hi)


def _probe_points(dim: int, lo, hi, pad: float = 1.5, n: int = 9) -> np.ndarray:
    axes = [np.linspace(lo[i] - pad, hi[i] + pad, n) for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([mm.ravel() for mm in mesh], axis=-1)


def model_congestion(
    f: Callable[[np.ndarray], np.ndarray],
    g: Callable[[np.ndarray], np.ndarray],
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
    *,
    name: str,
    dim: int,
    m_bound: float,
    core_lower,
    core_upper,
    gap: float,
    **metadata,
) -> CostFunctional:
    """Multiplicative congestion cost F(x, m) = f(x) g(int kernel(x, y) dm).

    Validates f >= 0, g >= 1 and kernel >= 0 on a probe lattice around the
    core box before returning the model.
    """

    def evaluator(pts: np.ndarray, m: DiscreteMeasure) -> np.ndarray:
        interaction = kernel(pts, m.points) @ m.weights
        return f(pts) * g(interaction)

    lo, hi = _as_box(dim, core_lower, core_upper)
    probes = _probe_points(dim, lo, hi)
    fv = np.asarray(f(probes), dtype=float)
    kv = np.asarray(kernel(probes, probes), dtype=float)
    if fv.min() < 0:
        raise ModelValidationError(f"model {name}: f takes negative value {fv.min()}")
    if kv.min() < 0:
        raise ModelValidationError(f"model {name}: kernel takes negative value {kv.min()}")
    gv = np.asarray(g(np.linspace(0.0, max(kv.max(), 1.0), 17)), dtype=float)
    if gv.min() < 1.0 - 1e-12:
        raise ModelValidationError(f"model {name}: g takes value {gv.min()} below 1")
    return CostFunctional(
        name=name, dim=dim, evaluator=evaluator, m_bound=float(m_bound),
        core_lower=lo, core_upper=hi, gap=float(gap), **metadata,
    )


def model_separated_kernel(
    f: Callable[[np.ndarray], np.ndarray],
    kernel_radial: Callable[[np.ndarray], np.ndarray],
    delta: float,
    g_measure: Callable[[DiscreteMeasure], float] | None = None,
    *,
    name: str,
    dim: int,
    m_bound: float,
    core_lower,
    core_upper,
    gap: float,
    **metadata,
) -> CostFunctional:
    """Additive cost F(x, m) = f(x) + int k(|x - y|) dm(y) + g(m).

    The radial kernel must vanish on [0, delta] and the declared zero set
    of f (``analytic_argmin``) must have diameter at most delta, so that a
    measure parked on the zero set never raises the cost there.
    """
    if g_measure is None:
        g_measure = lambda m: 0.0

    def evaluator(pts: np.ndarray, m: DiscreteMeasure) -> np.ndarray:
        diff = pts[:, None, :] - m.points[None, :, :]
        r = np.sqrt((diff * diff).sum(axis=-1))
        return f(pts) + kernel_radial(r) @ m.weights + g_measure(m)

    if delta <= 0:
        raise ModelValidationError(f"model {name}: delta must be positive, got {delta}")
    kv = np.asarray(kernel_radial(np.linspace(0.0, delta, 33)), dtype=float)
    if np.abs(kv).max() > 1e-15:
        raise ModelValidationError(
            f"model {name}: kernel does not vanish on [0, {delta}]"
        )
    zeros = metadata.get("analytic_argmin")
    if zeros is not None:
        z = np.atleast_2d(np.asarray(zeros, dtype=float))
        diffz = z[:, None, :] - z[None, :, :]
        diam = float(np.sqrt((diffz * diffz).sum(axis=-1)).max())
        if diam > delta:
            raise ModelValidationError(
                f"model {name}: zero set has diameter {diam}, larger than delta {delta}"
            )
    lo, hi = _as_box(dim, core_lower, core_upper)
    params = dict(metadata.pop("params", {}))
    params.setdefault("delta", float(delta))
    return CostFunctional(
        name=name, dim=dim, evaluator=evaluator, m_bound=float(m_bound),
        core_lower=lo, core_upper=hi, gap=float(gap),
        params=params, **metadata,
    )


def model_fG_plus_g(
    f: Callable[[np.ndarray], np.ndarray],
    G: Callable[[np.ndarray, DiscreteMeasure], np.ndarray],
    g_measure: Callable[[DiscreteMeasure], float],
    *,
    name: str,
    dim: int,
    m_bound: float,
    core_lower,
    core_upper,
    gap: float,
    **metadata,
) -> CostFunctional:
    """Factored cost F(x, m) = f(x) G(x, m) + g(m) with f >= 0 and G >= 1."""

    def evaluator(pts: np.ndarray, m: DiscreteMeasure) -> np.ndarray:
        return f(pts) * G(pts, m) + g_measure(m)

    lo, hi = _as_box(dim, core_lower, core_upper)
    probes = _probe_points(dim, lo, hi)
    fv = np.asarray(f(probes), dtype=float)
    if fv.min() < 0:
        raise ModelValidationError(f"model {name}: f takes negative value {fv.min()}")
    probe_m = DiscreteMeasure.dirac(0.5 * (np.asarray(lo) + np.asarray(hi)))
    Gv = np.asarray(G(probes, probe_m), dtype=float)
    if Gv.min() < 1.0 - 1e-12:
        raise ModelValidationError(f"model {name}: G takes value {Gv.min()} below 1")
    return CostFunctional(
        name=name, dim=dim, evaluator=evaluator, m_bound=float(m_bound),
        core_lower=lo, core_upper=hi, gap=float(gap), **metadata,
    )


# -- built-in models -----------------------------------------------------------


def _sq_norm(pts: np.ndarray) -> np.ndarray:
    return (pts * pts).sum(axis=-1)


def _gauss_well(pts: np.ndarray) -> np.ndarray:
    """f(x) = 1 - exp(-|x|^2): smooth, zero exactly at the origin."""
    return 1.0 - np.exp(-_sq_norm(pts))


def _congestion_g(r: np.ndarray) -> np.ndarray:
    """g(r) = 1 + r / (1 + r): bounded in [1, 2), increasing."""
    return 1.0 + r / (1.0 + r)


def _gauss_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - y[None, :, :]
    return np.exp(-(diff * diff).sum(axis=-1))


def _box_radius_sq(box_lower, box_upper, dim: int) -> float:
    lo, hi = _as_box(dim, box_lower, box_upper)
    return float(sum(max(abs(a), abs(b)) ** 2 for a, b in zip(lo, hi)))


def _numeric_gap(evaluate_f, dim: int, box_lower, box_upper, core_lower, core_upper, n: int = 201) -> float:
    """Certified-by-scan lower bound on f outside the core box."""
    lo, hi = _as_box(dim, box_lower, box_upper)
    axes = [np.linspace(lo[i], hi[i], n) for i in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([mm.ravel() for mm in mesh], axis=-1)
    outside = distance_to_box(pts, *_as_box(dim, core_lower, core_upper)) > 0
    if not outside.any():
        return 0.0
    return float(evaluate_f(pts[outside]).min())


def quadratic_congestion(dim: int = 1, box_lower=-2.0, box_upper=2.0, **overrides) -> CostFunctional:
    """Congestion around one quadratic well at the origin.

    F(x, m) = (1 - e^{-|x|^2}) (1 + I/(1 + I)) with
    I = int e^{-|x-y|^2} dm(y).  The argmin of every slice is {0}; the
    long-time critical value is 0.
    """
    rmax2 = _box_radius_sq(box_lower, box_upper, dim)
    core = overrides.pop("core", 0.5)
    # kernel slope bound sup_r 2 r e^{-r^2} = sqrt(2/e), g' <= 1, f <= 1
    lip = float(np.sqrt(2.0 / np.e))
    gap = (1.0 - np.exp(-core * core)) * 1.0
    return model_congestion(
        _gauss_well, _congestion_g, _gauss_kernel,
        name="quadratic_congestion", dim=dim,
        m_bound=(1.0 - np.exp(-rmax2)) * 2.0,
        core_lower=-core, core_upper=core, gap=gap,
        analytic_argmin=np.zeros((1, dim)),
        analytic_c_star=0.0,
        lipschitz_d1=lip,
        params={"box_lower": box_lower, "box_upper": box_upper, **overrides},
    )


def two_wells(dim: int = 1, box_lower=-2.0, box_upper=2.0, **overrides) -> CostFunctional:
    """Measure-independent cost with two symmetric wells.

    F(x) = (1 - e^{-|x - p|^2})(1 - e^{-|x + p|^2}) with p the first basis
    vector; the argmin is {-p, +p} for every measure.
    """
    p = np.zeros(dim)
    p[0] = 1.0

    def f(pts: np.ndarray) -> np.ndarray:
        return (1.0 - np.exp(-_sq_norm(pts - p))) * (1.0 - np.exp(-_sq_norm(pts + p)))

    def evaluator(pts: np.ndarray, m: DiscreteMeasure) -> np.ndarray:
        return f(pts)

    core_lo = np.full(dim, -0.5)
    core_hi = np.full(dim, 0.5)
    core_lo[0], core_hi[0] = -1.5, 1.5
    gap = _numeric_gap(f, dim, box_lower, box_upper, core_lo, core_hi)
    return CostFunctional(
        name="two_wells", dim=dim, evaluator=evaluator,
        m_bound=1.0,
        core_lower=tuple(core_lo), core_upper=tuple(core_hi), gap=gap,
        analytic_argmin=np.stack([-p, p]),
        analytic_c_star=0.0,
        lipschitz_d1=0.0,
        params={"box_lower": box_lower, "box_upper": box_upper, **overrides},
    )


def separated_kernel(dim: int = 1, box_lower=-2.0, box_upper=2.0, delta: float = 0.5, **overrides) -> CostFunctional:
    """Additive coupling through a kernel that vanishes near the well.

    F(x, m) = (1 - e^{-|x|^2}) + int max(0, |x - y| - delta)^2 dm(y); the
    kernel is flat on [0, delta], so measures supported near the origin do
    not raise the cost there.
    """

    def k(r: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, r - delta) ** 2

    lo, hi = _as_box(dim, box_lower, box_upper)
    diam = float(np.sqrt(sum((b - a) ** 2 for a, b in zip(lo, hi))))
    core = delta / 2.0
    return model_separated_kernel(
        _gauss_well, k, delta,
        name="separated_kernel", dim=dim,
        m_bound=1.0 + k(np.array([diam]))[0],
        core_lower=-core, core_upper=core,
        gap=1.0 - np.exp(-core * core),
        analytic_argmin=np.zeros((1, dim)),
        analytic_c_star=0.0,
        params={"box_lower": box_lower, "box_upper": box_upper, "delta": delta, **overrides},
    )


def fg_plus_g(dim: int = 1, box_lower=-2.0, box_upper=2.0, **overrides) -> CostFunctional:
    """Factored coupling with a measure-dependent floor.

    F(x, m) = (1 - e^{-|x|^2}) (1 + I/(1 + I)) + int |y| dm(y); the slice
    minimum equals the floor term, so the critical value moves with m.
    """

    def G(pts: np.ndarray, m: DiscreteMeasure) -> np.ndarray:
        return _congestion_g(_gauss_kernel(pts, m.points) @ m.weights)

    def g_measure(m: DiscreteMeasure) -> float:
        return float(m.weights @ np.sqrt(_sq_norm(m.points)))

    rmax2 = _box_radius_sq(box_lower, box_upper, dim)
    core = 0.5
    return model_fG_plus_g(
        _gauss_well, G, g_measure,
        name="fG_plus_g", dim=dim,
        m_bound=(1.0 - np.exp(-rmax2)) * 2.0 + np.sqrt(rmax2),
        core_lower=-core, core_upper=core,
        gap=1.0 - np.exp(-core * core),
        analytic_argmin=np.zeros((1, dim)),
        analytic_c_star=None,
        params={"box_lower": box_lower, "box_upper": box_upper, **overrides},
    )


def lqr_oracle(dim: int = 1, box_lower=-2.0, box_upper=2.0, c_star: float = 0.0, **overrides) -> CostFunctional:
    """Closed-form test oracle F(x, m) = c* + |x|^2 / 2 (measure-free).

    Marked test-only: its finite-horizon value function is known exactly,
    which makes it an oracle rather than an experiment model.
    """

    def evaluator(pts: np.ndarray, m: DiscreteMeasure) -> np.ndarray:
        return c_star + 0.5 * _sq_norm(pts)

    rmax2 = _box_radius_sq(box_lower, box_upper, dim)
    core = 0.5
    return CostFunctional(
        name="lqr_oracle", dim=dim, evaluator=evaluator,
        m_bound=abs(c_star) + 0.5 * rmax2,
        core_lower=(-core,) * dim, core_upper=(core,) * dim,
        gap=0.5 * core * core,
        analytic_argmin=np.zeros((1, dim)),
        analytic_c_star=float(c_star),
        lipschitz_d1=0.0,
        test_only=True,
        params={"box_lower": box_lower, "box_upper": box_upper, "c_star": c_star, **overrides},
    )


BUILTIN_MODELS: dict[str, Callable[..., CostFunctional]] = {
    "quadratic_congestion": quadratic_congestion,
    "two_wells": two_wells,
    "separated_kernel": separated_kernel,
    "fG_plus_g": fg_plus_g,
    "lqr_oracle": lqr_oracle,
}


def build_model(name: str, dim: int, box_lower, box_upper, params: dict | None = None) -> CostFunctional:
    """Instantiate a built-in model by name on a given box."""
    if name not in BUILTIN_MODELS:
        raise ValueError(f"unknown model {name!r}; known: {sorted(BUILTIN_MODELS)}")
    return BUILTIN_MODELS[name](dim=dim, box_lower=box_lower, box_upper=box_upper, **(params or {}))


# -- assumption diagnostics ----------------------------------------------------


def _sample_measures(F: CostFunctional, grid: SpatialGrid, seed: int, extra: int) -> list[DiscreteMeasure]:
    core_lo = np.asarray(F.core_lower)
    core_hi = np.asarray(F.core_upper)
    center = 0.5 * (core_lo + core_hi)
    samples = [
        DiscreteMeasure.dirac(center),
        DiscreteMeasure.dirac(core_hi),
        DiscreteMeasure.uniform(np.stack([core_lo, core_hi])),
    ]
    density = np.ones(tuple(grid.n_cells))
    samples.append(sample_from_density(density, grid, 16, seed=seed))
    rng = np.random.default_rng(seed)
    for _ in range(extra):
        pts = rng.uniform(core_lo, core_hi, size=(4, F.dim))
        w = rng.dirichlet(np.ones(4))
        samples.append(DiscreteMeasure(pts, w))
    return samples


def validate_assumptions(
    F: CostFunctional,
    grid: SpatialGrid,
    seed: int = 0,
    n_random: int = 3,
    lipschitz_slack: float = 1.10,
) -> dict:
    """Numerical checks of the structural model assumptions.

    Checks, over a deterministic suite of sampled measures: |F| within the
    declared bound, slice argmins inside the core box, the cost gap on the
    outermost node ring (confinement), bounded second differences
    (regularity), the Lipschitz-in-measure ratio against the declared
    constant, and monotonicity of the coercivity profile.  Returns a report
    dict with a ``violations`` list; empty means all assumptions held.
    """
    samples = _sample_measures(F, grid, seed, n_random)
    violations: list[str] = []
    metrics: dict = {}

    all_vals = [F.evaluate_many(grid.nodes, m).reshape(grid.shape) for m in samples]
    max_abs = max(float(np.abs(v).max()) for v in all_vals)
    metrics["max_abs_f"] = max_abs
    if max_abs > F.m_bound * (1 + 1e-9):
        violations.append(f"|F| reaches {max_abs}, above the declared bound {F.m_bound}")

    # argmin containment and boundary-ring gap
    ring = np.zeros(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        idxBase = [slice(None)] * grid.dim
        for side in (0, -1):
            idx = list(idxBase)
            idx[ax] = side
            ring[tuple(idx)] = True
    worst_ring = np.inf
    worst_core = 0.0
    for m, vals in zip(samples, all_vals):
        stats = slice_stats(F, m, grid)
        pts = stats.argmin_set.points
        worst_core = max(worst_core, float(distance_to_box(pts, F.core_lower, F.core_upper).max()))
        worst_ring = min(worst_ring, float((vals - stats.c_m)[ring].min()))
    metrics["argmin_core_excess"] = worst_core
    metrics["boundary_ring_gap"] = worst_ring
    if worst_core > grid.max_spacing:
        violations.append(f"slice argmin leaves the core box by {worst_core}")
    if worst_ring < F.gap * (1 - 1e-9):
        violations.append(
            f"boundary-ring cost gap {worst_ring} below declared gap {F.gap}"
        )

    # regularity: second differences stay bounded
    second = 0.0
    for vals in all_vals:
        for ax in range(grid.dim):
            d2 = np.diff(vals, n=2, axis=ax) / grid.spacing[ax] ** 2
            second = max(second, float(np.abs(d2).max()))
    metrics["max_second_difference"] = second
    if not np.isfinite(second):
        violations.append("second differences are not finite")

    # Lipschitz continuity in the measure argument
    ratio = 0.0
    for i in range(len(samples)):
        for j in range(i + 1, len(samples)):
            d1 = wasserstein1(samples[i], samples[j])
            if d1 < 1e-12:
                continue
            gapij = float(np.abs(all_vals[i] - all_vals[j]).max())
            ratio = max(ratio, gapij / d1)
    metrics["lipschitz_ratio"] = ratio
    if F.lipschitz_d1 is not None and ratio > max(F.lipschitz_d1, 1e-12) * lipschitz_slack:
        violations.append(
            f"Lipschitz ratio {ratio} exceeds declared constant {F.lipschitz_d1}"
        )

    # coercivity profile
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    rmax = float(np.sqrt(((hi - lo) / 2) @ ((hi - lo) / 2)))
    radii = np.linspace(0.25, rmax, 6)
    table = gamma_estimate(F, grid, radii, samples[:3])
    metrics["gamma_table"] = table
    gammas = [gval for _, gval in table]
    if any(b < a - 1e-12 for a, b in zip(gammas, gammas[1:])):
        violations.append("coercivity profile is not nondecreasing")

    return {"model": F.name, "violations": violations, "metrics": metrics}
