"""
Metric spaces for time-varying objects: distances, point validation and the
Fréchet median / mean solvers.

Three spaces are supported:

* ``LaplacianSpace`` - graph Laplacians with the Frobenius (extrinsic) metric.
* ``SphereSpace`` - the unit sphere S^2 with the great-circle metric.
* ``EuclideanSpace`` - R^d, mostly used as a reference space with known answers.

Points are plain numpy arrays: ``(p, p)`` for Laplacians, ``(3,)`` on the
sphere and ``(d,)`` in Euclidean space. Everything here is a pure function of
its inputs.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import DefaultSolver
from .errors import (
    ConcentrationError,
    ConfigError,
    ConvergenceError,
    SingularityError,
    ValidationError,
)

ROW_SUM_TOL = 1e-9
OFF_DIAGONAL_TOL = 1e-12
UNIT_NORM_TOL = 1e-9
# relative slack for the per-step descent check, float noise only
COST_SLACK = 1e-12


class SpaceKind(str, Enum):
    LAPLACIAN = "laplacian"
    SPHERE = "sphere"
    EUCLIDEAN = "euclidean"


@dataclass(frozen=True)
class MedianSolverConfig:
    max_iter: int = DefaultSolver.MAX_ITER
    tol: float = DefaultSolver.TOL
    anchor_eps: float = DefaultSolver.ANCHOR_EPS

    def __post_init__(self):
        if not isinstance(self.max_iter, (int, np.integer)) or self.max_iter < 1:
            raise ConfigError(f"max_iter must be a positive integer, got {self.max_iter!r}", key="solver.max_iter")
        if not self.tol > 0:
            raise ConfigError(f"tol must be positive, got {self.tol!r}", key="solver.tol")
        if not self.anchor_eps > 0:
            raise ConfigError(f"anchor_eps must be positive, got {self.anchor_eps!r}", key="solver.anchor_eps")


@dataclass
class ValidityReport:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def extend(self, other: "ValidityReport", prefix: str = "") -> None:
        self.violations.extend(f"{prefix}{v}" for v in other.violations)


@dataclass(frozen=True)
class SolverResult:
    point: np.ndarray
    iterations: int
    step: float
    costs: Tuple[float, ...]


class MetricSpace(ABC):
    """Descriptor of a metric space: its distance and its median/mean solvers."""

    kind: SpaceKind

    def __init__(self, dim: int):
        if int(dim) < 1:
            raise ValidationError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"

    def __eq__(self, other):
        return isinstance(other, MetricSpace) and self.kind == other.kind and self.dim == other.dim

    def __hash__(self):
        return hash((self.kind, self.dim))

    @property
    @abstractmethod
    def point_shape(self) -> Tuple[int, ...]:
        ...

    @property
    @abstractmethod
    def coord_count(self) -> int:
        """Number of scalar columns one point occupies in a trajectory file."""

    @abstractmethod
    def to_coords(self, point: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def from_coords(self, coords: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def distances(self, points: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Distances from each of ``points`` (shape ``(k, *point_shape)``) to ``b``."""

    @abstractmethod
    def validate(self, candidate) -> ValidityReport:
        ...

    @abstractmethod
    def median(self, points: np.ndarray, config: MedianSolverConfig, init: Optional[np.ndarray] = None) -> SolverResult:
        ...

    @abstractmethod
    def mean(self, points: np.ndarray, config: MedianSolverConfig, init: Optional[np.ndarray] = None) -> SolverResult:
        ...

    def check_shape(self, point: np.ndarray, what: str = "point") -> np.ndarray:
        point = np.asarray(point, dtype=float)
        if point.shape != self.point_shape:
            raise ValidationError(
                f"{what} has shape {point.shape}, expected {self.point_shape} for {self.kind.value} space"
            )
        return point

    def as_points(self, points) -> np.ndarray:
        arr = np.asarray(points, dtype=float)
        if arr.ndim == len(self.point_shape):
            arr = arr[np.newaxis]
        if arr.shape[1:] != self.point_shape or arr.shape[0] == 0:
            raise ValidationError(
                f"expected a non-empty stack of points with shape (k, {self.point_shape}), got {arr.shape}"
            )
        return arr

    def distance(self, a, b) -> float:
        a = self.check_shape(a)
        b = self.check_shape(b)
        return float(self.distances(a[np.newaxis], b)[0])

    def cost(self, points: np.ndarray, omega: np.ndarray, power: int = 1) -> float:
        return float(np.sum(self.distances(points, omega) ** power))


def _weiszfeld(
        X: np.ndarray,
        config: MedianSolverConfig,
        init: Optional[np.ndarray] = None,
        canonicalize: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ) -> Tuple[np.ndarray, int, float, List[float]]:
    """Weiszfeld iteration on row vectors with the Vardi-Zhang step at data anchors."""
    n = X.shape[0]
    y = np.median(X, axis=0) if init is None else np.array(init, dtype=float)
    if canonicalize is not None:
        y = canonicalize(y)
    d = np.linalg.norm(X - y, axis=1)
    cost = float(d.sum())
    costs = [cost]
    step = np.inf

    # the nearest data point may already satisfy the optimality condition
    anchor = X[int(np.argmin(d))]
    d_anchor = np.linalg.norm(X - anchor, axis=1)
    away = d_anchor > config.anchor_eps
    pull = float(np.linalg.norm((X[away] - anchor).T @ (1.0 / d_anchor[away]))) if away.any() else 0.0
    if pull <= n - int(away.sum()):
        y = anchor.copy() if canonicalize is None else canonicalize(anchor.copy())
        return y, 0, 0.0, [float(np.linalg.norm(X - y, axis=1).sum())]

    for iteration in range(1, config.max_iter + 1):
        far = d > config.anchor_eps
        if not far.any():
            return y, iteration - 1, 0.0, costs
        w = 1.0 / d[far]
        Xf = X[far]
        target = (w @ Xf) / w.sum()
        eta = n - int(far.sum())
        if eta == 0:
            y_new = target
        else:
            r = float(np.linalg.norm(w @ (Xf - y)))
            if r <= eta:
                # optimality condition holds at the anchor
                return y, iteration - 1, 0.0, costs
            gamma = min(1.0, eta / r)
            y_new = (1.0 - gamma) * target + gamma * y
        if canonicalize is not None:
            y_new = canonicalize(y_new)
        step = float(np.linalg.norm(y_new - y))
        d_new = np.linalg.norm(X - y_new, axis=1)
        new_cost = float(d_new.sum())
        if new_cost > cost + COST_SLACK * max(1.0, cost):
            raise ConvergenceError(
                f"Weiszfeld cost increased from {cost!r} to {new_cost!r} at iteration {iteration}",
                last_iterate=y_new,
                step=step,
            )
        y, d, cost = y_new, d_new, new_cost
        costs.append(cost)
        if step < config.tol:
            return y, iteration, step, costs
    raise ConvergenceError(
        f"Weiszfeld did not converge in {config.max_iter} iterations (last step {step:.3e})",
        last_iterate=y,
        step=step,
    )


class EuclideanSpace(MetricSpace):
    kind = SpaceKind.EUCLIDEAN

    @property
    def point_shape(self):
        return (self.dim,)

    @property
    def coord_count(self):
        return self.dim

    def to_coords(self, point):
        return np.asarray(point, dtype=float).reshape(-1)

    def from_coords(self, coords):
        return np.asarray(coords, dtype=float).reshape(self.point_shape)

    def distances(self, points, b):
        diff = (np.asarray(points, dtype=float) - b).reshape(len(points), -1)
        return np.linalg.norm(diff, axis=1)

    def validate(self, candidate):
        report = ValidityReport()
        arr = np.asarray(candidate, dtype=float)
        if arr.shape != self.point_shape:
            report.violations.append(f"shape {arr.shape} differs from {self.point_shape}")
            return report
        if not np.all(np.isfinite(arr)):
            report.violations.append("non-finite entries")
        return report

    def _canonicalize(self, y: np.ndarray) -> np.ndarray:
        return y

    def _initial_point(self, X: np.ndarray) -> np.ndarray:
        return np.median(X, axis=0)

    def median(self, points, config, init=None):
        X = self.as_points(points)
        flat = X.reshape(len(X), -1)
        start = self._initial_point(X) if init is None else self.check_shape(init, "initial point")
        flat_init = start.reshape(-1)
        canon = lambda v: self._canonicalize(v.reshape(self.point_shape)).reshape(-1)
        y, iterations, step, costs = _weiszfeld(flat, config, flat_init, canon)
        return SolverResult(y.reshape(self.point_shape), iterations, step, tuple(costs))

    def mean(self, points, config, init=None):
        X = self.as_points(points)
        y = self._canonicalize(X.mean(axis=0))
        return SolverResult(y, 0, 0.0, (self.cost(X, y, power=2),))


class LaplacianSpace(EuclideanSpace):
    """Graph Laplacians of weighted undirected networks on ``dim`` nodes, Frobenius metric.

    The set of Laplacians is convex, so Weiszfeld iterates (convex combinations
    of the data) stay inside it and no projection is needed. Files store the
    half-vectorized upper triangle, diagonal included.
    """

    kind = SpaceKind.LAPLACIAN

    @property
    def point_shape(self):
        return (self.dim, self.dim)

    @property
    def coord_count(self):
        return self.dim * (self.dim + 1) // 2

    def to_coords(self, point):
        point = np.asarray(point, dtype=float)
        return point[np.triu_indices(self.dim)]

    def from_coords(self, coords):
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (self.coord_count,):
            raise ValidationError(f"expected {self.coord_count} half-vectorized entries, got {coords.shape}")
        out = np.zeros(self.point_shape)
        iu = np.triu_indices(self.dim)
        out[iu] = coords
        out.T[iu] = coords
        return out

    def _canonicalize(self, y):
        return 0.5 * (y + y.T)

    def _initial_point(self, X):
        # coordinate-wise median, diagonal rebuilt so the start is itself a Laplacian
        start = graph_laplacian(adjacency_of(np.median(X, axis=0)))
        d = self.distances(X, start)
        nearest = int(np.argmin(d))
        if d[nearest] <= 1e-12 * max(1.0, float(np.linalg.norm(start))):
            return X[nearest].copy()
        return start

    def validate(self, candidate):
        report = ValidityReport()
        arr = np.asarray(candidate, dtype=float)
        if arr.shape != self.point_shape:
            report.violations.append(f"shape {arr.shape} differs from {self.point_shape}")
            return report
        if not np.all(np.isfinite(arr)):
            report.violations.append("non-finite entries")
            return report
        if not np.array_equal(arr, arr.T):
            report.violations.append("not symmetric")
        row_sums = np.abs(arr.sum(axis=1))
        if np.any(row_sums > ROW_SUM_TOL):
            rows = np.flatnonzero(row_sums > ROW_SUM_TOL).tolist()
            report.violations.append(f"row sums not zero in rows {rows} (max {row_sums.max():.3g})")
        off = arr[~np.eye(self.dim, dtype=bool)]
        if np.any(off > OFF_DIAGONAL_TOL):
            report.violations.append(f"positive off-diagonal entries (max {off.max():.3g})")
        if np.any(np.diag(arr) < 0):
            report.violations.append("negative diagonal entries")
        return report


class SphereSpace(MetricSpace):
    """The unit sphere S^2 with the great-circle distance arccos(<p, q>)."""

    kind = SpaceKind.SPHERE

    def __init__(self, dim: int = 3):
        if int(dim) != 3:
            raise ValidationError(f"only the 2-sphere in R^3 is supported, got ambient dimension {dim}")
        super().__init__(dim)

    @property
    def point_shape(self):
        return (3,)

    @property
    def coord_count(self):
        return 3

    def to_coords(self, point):
        return np.asarray(point, dtype=float).reshape(-1)

    def from_coords(self, coords):
        return np.asarray(coords, dtype=float).reshape(3)

    def distances(self, points, b):
        inner = np.clip(np.asarray(points, dtype=float) @ np.asarray(b, dtype=float), -1.0, 1.0)
        return np.arccos(inner)

    def validate(self, candidate):
        report = ValidityReport()
        arr = np.asarray(candidate, dtype=float)
        if arr.shape != (3,):
            report.violations.append(f"shape {arr.shape} differs from (3,)")
            return report
        if not np.all(np.isfinite(arr)):
            report.violations.append("non-finite entries")
            return report
        norm = float(np.linalg.norm(arr))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            report.violations.append(f"not unit norm (norm {norm:.12g})")
        return report

    def check_concentration(self, X: np.ndarray) -> None:
        # max pairwise great-circle distance < pi/2  <=>  every inner product > 0
        gram = X @ X.T
        if gram.min() <= 0.0:
            worst = float(np.arccos(np.clip(gram.min(), -1.0, 1.0)))
            raise ConcentrationError(
                f"points are not concentrated: maximum pairwise distance {worst:.6f} >= pi/2",
                max_distance=worst,
            )

    def _initial_point(self, X: np.ndarray) -> np.ndarray:
        y = np.median(X, axis=0)
        norm = np.linalg.norm(y)
        if norm < 1e-12:
            return X[0].copy()
        return y / norm

    def _descend(self, X, config, init, squared: bool) -> SolverResult:
        X = self.as_points(X)
        self.check_concentration(X)
        n = len(X)
        y = self._initial_point(X) if init is None else sphere_exp(self.check_shape(init), np.zeros(3))
        power = 2 if squared else 1
        cost = self.cost(X, y, power)
        costs = [cost]
        step = np.inf
        for iteration in range(1, config.max_iter + 1):
            logs = sphere_log_many(y, X)
            if squared:
                direction = logs.mean(axis=0)
            else:
                d = np.linalg.norm(logs, axis=1)
                far = d > config.anchor_eps
                if not far.any():
                    return SolverResult(y, iteration - 1, 0.0, tuple(costs))
                w = 1.0 / d[far]
                pull = w @ logs[far]
                direction = pull / w.sum()
                eta = n - int(far.sum())
                if eta > 0:
                    r = float(np.linalg.norm(pull))
                    if r <= eta:
                        return SolverResult(y, iteration - 1, 0.0, tuple(costs))
                    direction = (1.0 - min(1.0, eta / r)) * direction
            # halve the step until the cost does not increase
            scale = 1.0
            while True:
                y_new = sphere_exp(y, scale * direction)
                new_cost = self.cost(X, y_new, power)
                if new_cost <= cost + COST_SLACK * max(1.0, cost):
                    break
                if scale < 1e-8:
                    raise ConvergenceError(
                        f"Riemannian descent cost increased from {cost!r} to {new_cost!r} at iteration {iteration}",
                        last_iterate=y,
                        step=float(np.linalg.norm(scale * direction)),
                    )
                scale *= 0.5
            step = float(np.linalg.norm(scale * direction))
            y, cost = y_new, new_cost
            costs.append(new_cost)
            if step < config.tol:
                return SolverResult(y, iteration, step, tuple(costs))
        raise ConvergenceError(
            f"Riemannian descent did not converge in {config.max_iter} iterations (last step {step:.3e})",
            last_iterate=y,
            step=step,
        )

    def median(self, points, config, init=None):
        return self._descend(points, config, init, squared=False)

    def mean(self, points, config, init=None):
        return self._descend(points, config, init, squared=True)


def make_space(kind, dim: Optional[int] = None) -> MetricSpace:
    kind = SpaceKind(kind)
    if kind is SpaceKind.LAPLACIAN:
        return LaplacianSpace(dim)
    if kind is SpaceKind.SPHERE:
        return SphereSpace(3 if dim is None else dim)
    return EuclideanSpace(dim)


def graph_laplacian(adjacency: np.ndarray) -> np.ndarray:
    """L = D - A for a symmetric non-negative adjacency (self loops ignored).

    Works on a single ``(p, p)`` matrix or a stack ``(..., p, p)``.
    """
    A = np.array(adjacency, dtype=float)
    p = A.shape[-1]
    A[..., np.arange(p), np.arange(p)] = 0.0
    L = -A
    L[..., np.arange(p), np.arange(p)] = A.sum(axis=-1)
    return L


def adjacency_of(laplacian: np.ndarray) -> np.ndarray:
    """Inverse of ``graph_laplacian``: the off-diagonal weights of L, sign flipped."""
    L = np.asarray(laplacian, dtype=float)
    p = L.shape[-1]
    A = -L.copy()
    A[..., np.arange(p), np.arange(p)] = 0.0
    return A


def sphere_log(base, q) -> np.ndarray:
    base = np.asarray(base, dtype=float)
    q = np.asarray(q, dtype=float)
    if base.shape != (3,) or q.shape != (3,):
        raise ValidationError("sphere points must be 3-vectors")
    return sphere_log_many(base, q[np.newaxis])[0]


def sphere_log_many(base: np.ndarray, Q: np.ndarray) -> np.ndarray:
    inner = np.clip(Q @ base, -1.0, 1.0)
    if np.any(np.linalg.norm(Q + base, axis=1) < 1e-12):
        raise SingularityError("log map undefined for a point antipodal to the base point")
    theta = np.arccos(inner)
    U = Q - inner[:, np.newaxis] * base
    norms = np.linalg.norm(U, axis=1)
    out = np.zeros_like(U)
    ok = norms > 1e-300
    out[ok] = (theta[ok] / norms[ok])[:, np.newaxis] * U[ok]
    return out


def sphere_exp(base, v) -> np.ndarray:
    base = np.asarray(base, dtype=float)
    v = np.asarray(v, dtype=float)
    if base.shape != (3,) or v.shape != (3,):
        raise ValidationError("sphere points and tangent vectors must be 3-vectors")
    nv = float(np.linalg.norm(v))
    if nv < 1e-300:
        out = base
    else:
        out = np.cos(nv) * base + np.sin(nv) * (v / nv)
    return out / np.linalg.norm(out)


def distance(space: MetricSpace, a, b) -> float:
    return space.distance(a, b)


def validate_point(space: MetricSpace, candidate) -> ValidityReport:
    return space.validate(candidate)


def frechet_median(space: MetricSpace, points: Sequence, config: Optional[MedianSolverConfig] = None, init=None) -> np.ndarray:
    return frechet_median_result(space, points, config, init).point


def frechet_median_result(space: MetricSpace, points: Sequence, config: Optional[MedianSolverConfig] = None, init=None) -> SolverResult:
    config = config or MedianSolverConfig()
    result = space.median(points, config, init)
    logging.getLogger().debug(f"{space.kind.value} median: {result.iterations} iterations, step {result.step:.3e}")
    return result


def frechet_mean(space: MetricSpace, points: Sequence, config: Optional[MedianSolverConfig] = None, init=None) -> np.ndarray:
    config = config or MedianSolverConfig()
    return space.mean(points, config, init).point
