"""
Spectral analysis of covariance surfaces on the quadrature grid.

The integral operator ``(C phi)(s) = int C(s, t) phi(t) dt`` is discretized
with the grid's trapezoidal weights W. Its eigenpairs come from the symmetric
matrix ``W^{1/2} C W^{1/2}``; eigenvectors are mapped back with ``W^{-1/2}`` so
the eigenfunctions are orthonormal under the quadrature inner product.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
import scipy.linalg
from sklearn.cluster import KMeans
from sklearn.metrics import adjusted_rand_score

from .config import DefaultCovariance, DefaultSolver, DefaultSpectra
from .covariance import (
    CovarianceSurface,
    CutoffSpec,
    SurfaceKind,
    classical_covariance,
    estimate_cutoff,
    pairwise_l2_distances,
    wpu_covariance,
)
from .errors import DegenerateSpectrumError, InsufficientSampleError, ValidationError
from .metric_core import MedianSolverConfig
from .trajectory import (
    CenterKind,
    CenterTrajectory,
    DistanceTrajectories,
    ObjectTrajectorySample,
    TimeGrid,
    compute_center_trajectory,
    distance_trajectories,
)


@dataclass(frozen=True, eq=False)
class EigenSystem:
    grid: TimeGrid
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    gaps: np.ndarray
    explained: np.ndarray
    total_variance: float
    kind: SurfaceKind
    mean_function: Optional[np.ndarray] = None
    clipped: int = 0
    degenerate: bool = False

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 2 or not np.all(np.isfinite(scores)):
            raise ValidationError("scores must be a finite n x J matrix")
        object.__setattr__(self, "scores", scores)


def apply_sign_convention(phi: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Flip each eigenfunction so its integral is non-negative.

    When the integral vanishes (within SIGN_TOL) the first non-zero grid value
    is made positive instead.
    """
    phi = np.array(phi, dtype=float)
    integrals = phi @ grid.quad_weights
    for j in range(phi.shape[0]):
        if abs(integrals[j]) > DefaultSpectra.SIGN_TOL:
            flip = integrals[j] < 0
        else:
            nonzero = np.flatnonzero(np.abs(phi[j]) > DefaultSpectra.SIGN_TOL)
            flip = nonzero.size > 0 and phi[j, nonzero[0]] < 0
        if flip:
            phi[j] = -phi[j]
    return phi


def select_components(ratios: np.ndarray, fve: float = DefaultSpectra.FVE) -> int:
    """Smallest J whose cumulative explained variance reaches ``fve``."""
    cumulative = np.cumsum(np.asarray(ratios, dtype=float))
    reached = np.flatnonzero(cumulative >= fve - 1e-12)
    if reached.size == 0:
        return max(1, cumulative.size)
    return int(reached[0]) + 1


def eigendecompose(
        surface: CovarianceSurface,
        J: Optional[int] = None,
        distances: Optional[DistanceTrajectories] = None,
        fve: float = DefaultSpectra.FVE,
    ) -> EigenSystem:
    """Eigenpairs of the covariance operator, descending, keeping J components.

    With ``J=None`` the smallest J reaching ``fve`` explained variance is kept.
    ``distances`` supplies the mean function used later for scores.
    """
    grid = surface.grid
    T = len(grid)
    if J is not None and not 1 <= J <= T:
        raise ValidationError(f"number of components must lie in [1, {T}], got {J}")

    operator = surface.weighted_operator()
    operator = 0.5 * (operator + operator.T)
    evals, evecs = scipy.linalg.eigh(operator)
    evals = evals[::-1]
    evecs = evecs[:, ::-1]

    scale = max(1.0, float(np.abs(surface.values).max()))
    clipped = int(np.sum(evals < 0))
    if evals[-1] < DefaultCovariance.PSD_SLACK * scale:
        logging.getLogger().warning(
            f"{surface.kind.value}: clipped {clipped} negative eigenvalues (smallest {evals[-1]:.3e})"
        )
    evals = np.clip(evals, 0.0, None)
    phis = apply_sign_convention(evecs.T / np.sqrt(grid.quad_weights), grid)

    total = float(evals.sum())
    degenerate = total <= 0.0
    if degenerate:
        logging.getLogger().warning(f"{surface.kind.value}: covariance spectrum is identically zero")
        ratios = np.zeros_like(evals)
    else:
        ratios = evals / total
    if J is None:
        J = 1 if degenerate else select_components(ratios, fve)
    if clipped > J:
        logging.getLogger().warning(f"{surface.kind.value}: {clipped} eigenvalues clipped, {J} retained")

    spacing = evals - np.append(evals[1:], 0.0)
    gaps = np.minimum.accumulate(spacing)[:J]
    mean_function = distances.mean_function() if distances is not None else None
    if mean_function is not None and distances.grid != grid:
        raise ValidationError("distance trajectories and surface are on different grids")
    return EigenSystem(
        grid=grid,
        eigenvalues=evals[:J].copy(),
        eigenfunctions=phis[:J].copy(),
        gaps=gaps,
        explained=ratios[:J].copy(),
        total_variance=total,
        kind=surface.kind,
        mean_function=mean_function,
        clipped=clipped,
        degenerate=degenerate,
    )


def fpc_scores(D: DistanceTrajectories, es: EigenSystem) -> ScoreMatrix:
    if D.grid != es.grid:
        raise ValidationError("distance trajectories and eigen system are on different grids")
    nu = es.mean_function if es.mean_function is not None else D.mean_function()
    weighted = es.eigenfunctions * es.grid.quad_weights
    return ScoreMatrix((D.values - nu) @ weighted.T)


def mercer_reconstruct(es: EigenSystem, J: Optional[int] = None) -> CovarianceSurface:
    J = es.n_components if J is None else J
    if not 0 <= J <= es.n_components:
        raise ValidationError(f"only {es.n_components} components are available, asked for {J}")
    phi = es.eigenfunctions[:J]
    C = (phi.T * es.eigenvalues[:J]) @ phi
    return CovarianceSurface(es.grid, 0.5 * (C + C.T), es.kind)


def explained_variance(es: EigenSystem) -> np.ndarray:
    if es.total_variance <= 0.0:
        raise DegenerateSpectrumError("all eigenvalues are zero, explained variance is undefined")
    return es.eigenvalues / es.total_variance


def cluster_scores(
        scores: ScoreMatrix,
        k: int = DefaultSpectra.CLUSTERS,
        restarts: int = DefaultSpectra.CLUSTER_RESTARTS,
        seed: int = 0,
        components: int = 2,
    ) -> Tuple[np.ndarray, np.ndarray]:
    """k-means on the leading FPC scores; returns labels and cluster centres."""
    X = scores.scores[:, :components]
    if X.shape[0] < k:
        raise ValidationError(f"cannot form {k} clusters from {X.shape[0]} subjects")
    model = KMeans(n_clusters=k, n_init=restarts, random_state=seed).fit(X)
    return model.labels_, model.cluster_centers_


def adjusted_rand(labels_true, labels_pred) -> float:
    return float(adjusted_rand_score(labels_true, labels_pred))


class FpcaMethod(str, Enum):
    WPU = "wpu"
    DM = "dm"
    SPATIAL_SIGN = "spatial-sign"
    CLASSICAL = "classical"


@dataclass(frozen=True, eq=False)
class FpcaFit:
    method: FpcaMethod
    center: CenterTrajectory
    distances: DistanceTrajectories
    surface: CovarianceSurface
    eigensystem: EigenSystem
    scores: ScoreMatrix
    cutoff: Optional[CutoffSpec] = None


def fit_fpca(
        sample: ObjectTrajectorySample,
        method: Union[FpcaMethod, str] = FpcaMethod.WPU,
        psi: float = DefaultCovariance.PSI,
        J: Optional[int] = None,
        fve: float = DefaultSpectra.FVE,
        config: Optional[MedianSolverConfig] = None,
        parallel: bool = False,
        max_workers: int = DefaultSolver.MAX_WORKERS,
        center: Optional[CenterTrajectory] = None,
    ) -> FpcaFit:
    """Center, distance trajectories, covariance surface and spectrum in one pass.

    ``dm`` uses squared distances to the pointwise Fréchet mean; the other
    methods use distances to the pointwise Fréchet median. A precomputed
    ``center`` of the matching kind skips the solve.
    """
    method = FpcaMethod(method)
    if sample.n < 2:
        raise InsufficientSampleError(f"at least two subjects are required, got {sample.n}", n=sample.n)
    kind = CenterKind.MEAN if method is FpcaMethod.DM else CenterKind.MEDIAN
    if center is None:
        center = compute_center_trajectory(sample, kind, config, parallel=parallel, max_workers=max_workers)
    elif center.kind is not kind:
        raise ValidationError(f"method {method.value} needs a {kind.value} center, got {center.kind.value}")
    D = distance_trajectories(sample, center)

    cutoff = None
    if method is FpcaMethod.WPU:
        pairwise = pairwise_l2_distances(D)
        cutoff = estimate_cutoff(pairwise, psi)
        surface = wpu_covariance(D, cutoff, pairwise=pairwise)
    elif method is FpcaMethod.SPATIAL_SIGN:
        cutoff = CutoffSpec.spatial_sign()
        surface = wpu_covariance(D, cutoff)
    else:
        surface = classical_covariance(D)

    es = eigendecompose(surface, J=J, distances=D, fve=fve)
    logging.getLogger().debug(
        f"{method.value}: {es.n_components} components explain {float(es.explained.sum()):.4f} of the variance"
    )
    return FpcaFit(method, center, D, surface, es, fpc_scores(D, es), cutoff)
