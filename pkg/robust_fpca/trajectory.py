"""
Time grids, object trajectory samples and their conversion to functional data.

A sample of n subjects observed on a shared grid of T time points is turned
into distance trajectories ``V_i(t_k) = d(X_i(t_k), center(t_k))`` relative to
the pointwise Fréchet median (or, for the dm baseline, the squared
distances to the pointwise Fréchet mean).
"""

import concurrent.futures
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

import numpy as np

from .config import DefaultSolver
from .errors import RobustFpcaError, ValidationError, InsufficientSampleError
from .metric_core import MedianSolverConfig, MetricSpace, ValidityReport


class CenterKind(str, Enum):
    MEDIAN = "median"
    MEAN = "mean"


class DistanceKind(str, Enum):
    MEDIAN_DISTANCE = "median-distance"
    DM_SQUARED_DISTANCE = "dm-squared-distance"


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time points in [0, 1] with trapezoidal quadrature weights."""

    points: np.ndarray
    quad_weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = np.array(self.points, dtype=float).reshape(-1)
        if t.size < 2:
            raise ValidationError(f"a time grid needs at least 2 points, got {t.size}")
        if not np.all(np.isfinite(t)) or t[0] < 0.0 or t[-1] > 1.0:
            raise ValidationError("time points must be finite and lie in [0, 1]")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("time points must be strictly increasing")
        w = np.empty_like(t)
        w[0] = (t[1] - t[0]) / 2.0
        w[-1] = (t[-1] - t[-2]) / 2.0
        w[1:-1] = (t[2:] - t[:-2]) / 2.0
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", t)
        object.__setattr__(self, "quad_weights", w)

    @classmethod
    def uniform(cls, size: int, start: float = 0.0, end: float = 1.0) -> "TimeGrid":
        return cls(np.linspace(start, end, int(size)))

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        return isinstance(other, TimeGrid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Quadrature inner product along the last axis."""
        return np.sum(self.quad_weights * np.asarray(a) * np.asarray(b), axis=-1)

    def norm(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(self.inner(x, x))


@dataclass(frozen=True, eq=False)
class ObjectTrajectorySample:
    """n subject trajectories of metric-space points on a shared grid.

    ``subjects`` has shape ``(n, T, *space.point_shape)``. ``labels`` holds
    optional integer group labels (the simulators fill them in).
    """

    space: MetricSpace
    grid: TimeGrid
    subjects: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        subjects = np.asarray(self.subjects, dtype=float)
        expected = (len(self.grid),) + tuple(self.space.point_shape)
        if subjects.ndim != 1 + len(expected) or subjects.shape[1:] != expected:
            raise ValidationError(f"subjects must have shape (n, {expected}), got {subjects.shape}")
        if not np.all(np.isfinite(subjects)):
            raise ValidationError("subjects contain non-finite values")
        subjects.setflags(write=False)
        object.__setattr__(self, "subjects", subjects)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (subjects.shape[0],):
                raise ValidationError(f"labels must have shape ({subjects.shape[0]},), got {labels.shape}")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.subjects.shape[0]

    def validate(self) -> ValidityReport:
        report = ValidityReport()
        for i in range(self.n):
            for k in range(len(self.grid)):
                report.extend(self.space.validate(self.subjects[i, k]), prefix=f"subject {i}, time {k}: ")
        return report

    def replace_subjects(self, subjects: np.ndarray) -> "ObjectTrajectorySample":
        return ObjectTrajectorySample(self.space, self.grid, subjects, self.labels)


@dataclass(frozen=True, eq=False)
class CenterTrajectory:
    grid: TimeGrid
    centers: np.ndarray
    kind: CenterKind = CenterKind.MEDIAN

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.shape[0] != len(self.grid):
            raise ValidationError(f"expected {len(self.grid)} centers, got {centers.shape[0]}")
        centers.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "kind", CenterKind(self.kind))


@dataclass(frozen=True, eq=False)
class DistanceTrajectories:
    """``values[i, k]`` = distance of subject i to the center at ``grid.points[k]``."""

    grid: TimeGrid
    values: np.ndarray
    kind: DistanceKind = DistanceKind.MEDIAN_DISTANCE

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.grid):
            raise ValidationError(f"values must have shape (n, {len(self.grid)}), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("distance trajectories contain non-finite values")
        if np.any(values < 0):
            raise ValidationError("distance trajectories must be non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", DistanceKind(self.kind))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def mean_function(self) -> np.ndarray:
        return self.values.mean(axis=0)


def _solver_config(config: Optional[MedianSolverConfig]) -> MedianSolverConfig:
    return config if config is not None else MedianSolverConfig()


def compute_center_trajectory(
        sample: ObjectTrajectorySample,
        kind: Union[CenterKind, str] = CenterKind.MEDIAN,
        config: Optional[MedianSolverConfig] = None,
        parallel: bool = False,
        max_workers: int = DefaultSolver.MAX_WORKERS,
    ) -> CenterTrajectory:
    """Pointwise Fréchet median (or mean) of the subjects at every grid point.

    The sequential path warm-starts the median at t_{k+1} from the solution at
    t_k. ``parallel=True`` solves the time points independently from cold
    starts on a thread pool; both agree within solver tolerance.
    """
    kind = CenterKind(kind)
    config = _solver_config(config)
    if sample.n < 1:
        raise InsufficientSampleError("at least one subject is required")
    space = sample.space
    T = len(sample.grid)

    if sample.n == 1:
        return CenterTrajectory(sample.grid, sample.subjects[0].copy(), kind)

    solve = space.median if kind is CenterKind.MEDIAN else space.mean

    def solve_at(k, init=None):
        try:
            return solve(sample.subjects[:, k], config, init).point
        except RobustFpcaError as e:
            raise e.at_time(k)

    centers = np.empty((T,) + tuple(space.point_shape))
    if parallel:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as executor:
            futures = [executor.submit(solve_at, k) for k in range(T)]
            for k, future in enumerate(futures):
                centers[k] = future.result()
    else:
        previous = None
        for k in range(T):
            centers[k] = solve_at(k, previous if kind is CenterKind.MEDIAN else None)
            previous = centers[k]

    logging.getLogger().debug(f"{kind.value} trajectory computed over {T} time points for {sample.n} subjects")
    return CenterTrajectory(sample.grid, centers, kind)


def distance_trajectories(sample: ObjectTrajectorySample, center: CenterTrajectory) -> DistanceTrajectories:
    """Distances of every subject to the center; squared when the center is a mean (DM baseline)."""
    if center.grid != sample.grid:
        raise ValidationError("center trajectory and sample are on different grids")
    space = sample.space
    values = np.empty((sample.n, len(sample.grid)))
    for k in range(len(sample.grid)):
        values[:, k] = space.distances(sample.subjects[:, k], center.centers[k])
    if center.kind is CenterKind.MEAN:
        return DistanceTrajectories(sample.grid, values ** 2, DistanceKind.DM_SQUARED_DISTANCE)
    return DistanceTrajectories(sample.grid, values, DistanceKind.MEDIAN_DISTANCE)


def l2_norm(values: np.ndarray, grid: TimeGrid) -> Union[float, np.ndarray]:
    """Trapezoidal L2 norm along the last axis; a scalar for a single row."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != len(grid):
        raise ValidationError(f"row length {values.shape[-1]} does not match grid size {len(grid)}")
    out = grid.norm(values)
    return float(out) if np.ndim(out) == 0 else out
