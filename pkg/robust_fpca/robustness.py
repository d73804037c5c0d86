"""
Influence functions, breakdown points and replication metrics for the
eigenfunction estimators.

The influence of a point-mass contamination z on the k-th eigenfunction of
the Winsorized pairwise surface is evaluated with the empirical distribution
of the sample in place of the population:

    IF_k(z) = 2 * sum_{j != k} E[zeta_j zeta_k] / (lambda_k - lambda_j) * phi_j
    zeta_j  = <V - v_z, phi_j> * xi(||V - v_z||)

with V the distance trajectories of the sample and v_z the distance
trajectory of z, both relative to the same center. IF_k(center) = 0.
"""

import concurrent.futures
import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import median_abs_deviation
from tqdm import tqdm

from .config import DefaultBreakdown, DefaultContamination, DefaultCovariance, DefaultSpectra
from .covariance import CutoffSpec, pair_weights, wpu_covariance
from .errors import ConfigError, IllConditionedError, RobustFpcaError, ValidationError
from .metric_core import MedianSolverConfig
from .simgen import ContaminationSpec, NetworkSimConfig, contaminate, derive_seed, gen_network_sample
from .spectra import EigenSystem, FpcaMethod, ScoreMatrix, apply_sign_convention, eigendecompose, fit_fpca
from .trajectory import (
    CenterKind,
    CenterTrajectory,
    DistanceTrajectories,
    ObjectTrajectorySample,
    TimeGrid,
    compute_center_trajectory,
    distance_trajectories,
)

NORMALIZATION_TOL = 1e-6
# SeedSequence path components
REFERENCE_STREAM = 0
CLEAN_STREAM = 1
CONTAMINATION_STREAM = 2


@dataclass(frozen=True, eq=False)
class InfluenceResult:
    component_index: int
    if_values: np.ndarray
    if_norm: float
    p1: float


@dataclass(frozen=True, eq=False)
class RobustnessMetrics:
    mea: float
    bias: np.ndarray
    mise: float
    replications: int
    failures: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mea <= math.pi / 2 + 1e-12:
            raise ValidationError(f"MEA {self.mea!r} outside [0, pi/2]")
        if self.mise < 0:
            raise ValidationError(f"MISE {self.mise!r} is negative")


@dataclass(frozen=True, eq=False)
class OutlierReport:
    norms: np.ndarray
    robust_z: np.ndarray
    flagged: np.ndarray
    score_radius: Optional[np.ndarray] = None

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.flagged)


def _check_ties(eigenvalues: np.ndarray) -> None:
    gaps = np.abs(eigenvalues[:, np.newaxis] - eigenvalues[np.newaxis, :])
    np.fill_diagonal(gaps, np.inf)
    if eigenvalues.size > 1 and gaps.min() <= DefaultSpectra.TIE_TOL:
        raise IllConditionedError(
            f"retained eigenvalues are tied within {DefaultSpectra.TIE_TOL}: {eigenvalues.tolist()}"
        )


def _component_range(es: EigenSystem, k: int, J: Optional[int]) -> int:
    J = es.n_components if J is None else J
    if not 1 <= J <= es.n_components:
        raise ValidationError(f"J must lie in [1, {es.n_components}], got {J}")
    if not 1 <= k <= J:
        raise ValidationError(f"component index must lie in [1, {J}], got {k}")
    return J


def influence_function(
        sample: ObjectTrajectorySample,
        center: CenterTrajectory,
        es: EigenSystem,
        z: np.ndarray,
        k: int,
        cutoff: CutoffSpec,
        J: Optional[int] = None,
    ) -> InfluenceResult:
    """Empirical influence of the object trajectory ``z`` on eigenfunction k (1-based)."""
    J = _component_range(es, k, J)
    if sample.grid != es.grid or center.grid != es.grid:
        raise ValidationError("sample, center and eigen system must share one grid")
    lam = es.eigenvalues[:J]
    _check_ties(lam)
    grid = es.grid

    z = np.asarray(z, dtype=float)
    V = distance_trajectories(sample, center).values
    v_z = distance_trajectories(sample.replace_subjects(z[np.newaxis]), center).values[0]
    if np.array_equal(z, center.centers) or not np.any(v_z):
        return InfluenceResult(k, np.zeros(len(grid)), 0.0, 1.0)

    diff = V - v_z
    norms = grid.norm(diff)
    xi = np.sqrt(pair_weights(norms, cutoff)[0])
    phi = es.eigenfunctions[:J]
    zeta = (diff @ (phi * grid.quad_weights).T) * xi[:, np.newaxis]
    cross = zeta.T @ zeta[:, k - 1] / V.shape[0]

    values = np.zeros(len(grid))
    for j in range(J):
        if j != k - 1:
            values += 2.0 * cross[j] / (lam[k - 1] - lam[j]) * phi[j]
    p1 = float(np.mean(norms <= cutoff.q_hat))
    return InfluenceResult(k, values, float(grid.norm(values)), p1)


def finite_difference_influence(
        V: DistanceTrajectories,
        v_z: np.ndarray,
        es: EigenSystem,
        k: int,
        cutoff: CutoffSpec,
        J: Optional[int] = None,
    ) -> np.ndarray:
    """Sample-augmentation approximation of the influence on eigenfunction k.

    ``es`` must be the spectrum of ``wpu_covariance(V, cutoff)``. The WPU
    surface is recomputed on the rows of V plus v_z with the cutoff held fixed;
    the change in the sign-aligned eigenfunction is divided by the weight
    1/(n+1) that v_z carries in the augmented sample.
    """
    J = _component_range(es, k, J)
    v_z = np.asarray(v_z, dtype=float).reshape(1, -1)
    augmented = DistanceTrajectories(V.grid, np.vstack([V.values, v_z]), V.kind)
    es_aug = eigendecompose(wpu_covariance(augmented, cutoff), J=J)
    before = es.eigenfunctions[k - 1]
    after = es_aug.eigenfunctions[k - 1]
    if V.grid.inner(after, before) < 0:
        after = -after
    return (after - before) * (V.n + 1)


def gross_error_sensitivity(es: EigenSystem, k: int, q: float, p1: float, J: Optional[int] = None) -> float:
    """``(p1 + q (1 - p1)) / c_k`` with ``c_k = min(lambda_k, min_{j != k} |lambda_k - lambda_j|)``."""
    J = _component_range(es, k, J)
    if not 0.0 <= p1 <= 1.0:
        raise ValidationError(f"p1 must lie in [0, 1], got {p1!r}")
    if q < 0:
        raise ValidationError(f"cutoff must be non-negative, got {q!r}")
    lam = es.eigenvalues[:J]
    others = np.delete(lam, k - 1)
    c_k = float(lam[k - 1])
    if others.size:
        c_k = min(c_k, float(np.abs(lam[k - 1] - others).min()))
    if c_k <= 0.0:
        raise IllConditionedError(f"c_k = {c_k!r} for component {k}; the bound is undefined")
    return (p1 + q * (1.0 - p1)) / c_k


def theoretical_breakdown(psi: float) -> float:
    """Upper breakdown point sqrt(1 - psi) of the psi-quantile Winsorized estimator."""
    if not 0.0 <= psi <= 1.0:
        raise ValidationError(f"psi must lie in [0, 1], got {psi!r}")
    # decimal arithmetic so that psi = 0.84 gives exactly 0.4
    return float((Decimal(1) - Decimal(repr(float(psi)))).sqrt())


def _check_estimates(estimates, reference, grid: TimeGrid) -> Tuple[np.ndarray, np.ndarray]:
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    reference = np.asarray(reference, dtype=float)
    if reference.shape != (len(grid),) or estimates.shape[1:] != reference.shape:
        raise ValidationError("estimates and reference must live on the given grid")
    if estimates.shape[0] == 0:
        raise ValidationError("no estimates to summarize")
    if abs(float(grid.norm(reference)) - 1.0) > NORMALIZATION_TOL:
        raise ValidationError(f"reference eigenfunction is not normalized (norm {float(grid.norm(reference))!r})")
    return estimates, reference


def _aligned(estimates: np.ndarray, reference: np.ndarray, grid: TimeGrid) -> np.ndarray:
    signs = np.where(grid.inner(estimates, reference) < 0, -1.0, 1.0)
    return estimates * signs[:, np.newaxis]


def mea(estimates, reference, grid: TimeGrid) -> float:
    """Mean absolute angle between the estimates and the reference eigenfunction."""
    estimates, reference = _check_estimates(estimates, reference, grid)
    cosines = np.clip(np.abs(grid.inner(estimates, reference)), -1.0, 1.0)
    return float(np.mean(np.arccos(cosines)))


def bias_and_mise(estimates, reference, grid: TimeGrid) -> Tuple[np.ndarray, float]:
    estimates, reference = _check_estimates(estimates, reference, grid)
    aligned = _aligned(estimates, reference, grid)
    bias = aligned.mean(axis=0) - reference
    mise = float(np.mean(grid.inner(aligned - reference, aligned - reference)))
    return bias, mise


def reference_eigenfunction(estimates, grid: TimeGrid) -> np.ndarray:
    """Sign-aligned Monte Carlo average of estimates, re-normalized."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    if estimates.shape[0] == 0 or estimates.shape[1] != len(grid):
        raise ValidationError("reference needs at least one estimate on the grid")
    average = _aligned(estimates, estimates[0], grid).mean(axis=0)
    norm = float(grid.norm(average))
    if norm == 0.0:
        raise ValidationError("aligned estimates average to zero")
    return apply_sign_convention((average / norm)[np.newaxis], grid)[0]


def robustness_metrics(estimates, reference, grid: TimeGrid, failures: int = 0) -> RobustnessMetrics:
    bias, mise = bias_and_mise(estimates, reference, grid)
    return RobustnessMetrics(mea(estimates, reference, grid), bias, mise, len(estimates), failures)


def detect_outliers(
        D: DistanceTrajectories,
        scores: Optional[ScoreMatrix] = None,
        threshold: float = DefaultSpectra.OUTLIER_THRESHOLD,
        components: int = 2,
    ) -> OutlierReport:
    """Flag subjects whose distance-trajectory norm is unusually large.

    The robust z-score uses the median and the normal-consistent MAD of the
    L2 norms. With FPC scores, a subject is also flagged when its robustly
    standardized score radius on the leading components exceeds ``threshold``.
    """
    norms = D.grid.norm(D.values)
    center = np.median(norms)
    spread = median_abs_deviation(norms, scale="normal")
    if spread > 0:
        robust_z = (norms - center) / spread
    else:
        robust_z = np.where(norms > center, np.inf, 0.0)
    flagged = robust_z > threshold

    radius = None
    if scores is not None:
        S = scores.scores[:, :components]
        if S.shape[0] != D.n:
            raise ValidationError(f"scores have {S.shape[0]} rows for {D.n} subjects")
        s_spread = median_abs_deviation(S, axis=0, scale="normal")
        s_spread = np.where(s_spread > 0, s_spread, 1.0)
        radius = np.sqrt(np.sum(((S - np.median(S, axis=0)) / s_spread) ** 2, axis=1))
        flagged = flagged | (radius > threshold)
    logging.getLogger().info(f"{int(flagged.sum())} of {D.n} subjects flagged as outliers")
    return OutlierReport(norms, robust_z, flagged, radius)


@dataclass(frozen=True)
class BreakdownConfig:
    network: NetworkSimConfig = field(default_factory=NetworkSimConfig)
    levels: Tuple[float, ...] = tuple(DefaultBreakdown.LEVELS)
    reps: int = DefaultBreakdown.REPS
    methods: Tuple[str, ...] = tuple(DefaultBreakdown.METHODS)
    psi: float = DefaultCovariance.PSI
    component: int = DefaultBreakdown.COMPONENT
    scheme: str = DefaultContamination.SCHEME
    shift: float = DefaultContamination.SHIFT
    scale: float = DefaultContamination.SCALE
    seed: int = DefaultBreakdown.SEED
    reference_reps: Optional[int] = None
    max_workers: int = 1
    solver: MedianSolverConfig = field(default_factory=MedianSolverConfig)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(e) for e in self.levels))
        try:
            object.__setattr__(self, "methods", tuple(FpcaMethod(m).value for m in self.methods))
        except ValueError as e:
            raise ConfigError(f"unknown method in {list(self.methods)}", key="breakdown.methods") from e
        if self.reps < 1:
            raise ValidationError(f"reps must be at least 1, got {self.reps}")
        if self.component < 1:
            raise ValidationError(f"component must be at least 1, got {self.component}")
        if self.reference_reps is not None and self.reference_reps < 1:
            raise ValidationError("reference_reps must be at least 1")
        for level in self.levels:
            self.contamination(level)

    def contamination(self, level: float) -> ContaminationSpec:
        return ContaminationSpec(fraction=level, scheme=self.scheme, shift=self.shift, scale=self.scale)


@dataclass(frozen=True)
class CellFailure:
    method: str
    level: Optional[float]
    replication: int
    message: str


@dataclass(eq=False)
class BreakdownResult:
    grid: TimeGrid
    references: Dict[str, np.ndarray]
    metrics: Dict[Tuple[str, float], RobustnessMetrics]
    failures: List[CellFailure]


def estimate_eigenfunctions(
        sample: ObjectTrajectorySample,
        methods: Sequence[str],
        psi: float,
        component: int,
        solver: Optional[MedianSolverConfig] = None,
    ) -> Dict[str, object]:
    """Eigenfunction ``component`` per method; a RobustFpcaError in place of a failed method."""
    centers: Dict[CenterKind, object] = {}
    out: Dict[str, object] = {}
    for method in methods:
        method = FpcaMethod(method)
        kind = CenterKind.MEAN if method is FpcaMethod.DM else CenterKind.MEDIAN
        try:
            if kind not in centers:
                try:
                    centers[kind] = compute_center_trajectory(sample, kind, solver)
                except RobustFpcaError as e:
                    centers[kind] = e
            center = centers[kind]
            if isinstance(center, RobustFpcaError):
                raise center
            fit = fit_fpca(sample, method, psi=psi, J=component, config=solver, center=center)
            out[method.value] = fit.eigensystem.eigenfunctions[component - 1]
        except RobustFpcaError as e:
            out[method.value] = e
    return out


def _run_cell(config: BreakdownConfig, level: Optional[float], rep: int) -> Dict[str, object]:
    net = config.network
    if level is None:
        sample = gen_network_sample(net, derive_seed(config.seed, REFERENCE_STREAM, rep))
    else:
        clean = gen_network_sample(net, derive_seed(config.seed, CLEAN_STREAM, rep))
        sample, _ = contaminate(clean, config.contamination(level),
                                derive_seed(config.seed, CONTAMINATION_STREAM, rep), network=net)
    return estimate_eigenfunctions(sample, config.methods, config.psi, config.component, config.solver)


def _run_cells(config: BreakdownConfig, cells: List[Tuple[Optional[float], int]], desc: str):
    results = [None] * len(cells)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, config.max_workers)) as executor:
        futures = {executor.submit(_run_cell, config, level, rep): i for i, (level, rep) in enumerate(cells)}
        for future in tqdm(concurrent.futures.as_completed(futures), total=len(futures), desc=desc):
            results[futures[future]] = future.result()
    return results


def breakdown_experiment(config: BreakdownConfig) -> BreakdownResult:
    """MEA, bias and MISE per method and contamination level against clean references.

    Replication r uses the same clean sample at every level (common random
    numbers); references come from a separate set of uncontaminated samples.
    Pipeline failures are recorded per cell and skipped.
    """
    grid = config.network.grid()
    failures: List[CellFailure] = []
    reference_reps = config.reference_reps or config.reps

    def collect(level, rep, outcome, sink):
        for method, value in outcome.items():
            if isinstance(value, RobustFpcaError):
                logging.getLogger().warning(f"{method} failed at contamination {level}, replication {rep}: {value}")
                failures.append(CellFailure(method, level, rep, str(value)))
            else:
                sink.setdefault(method, []).append(value)

    reference_estimates: Dict[str, List[np.ndarray]] = {}
    cells = [(None, r) for r in range(reference_reps)]
    for (_, rep), outcome in zip(cells, _run_cells(config, cells, "reference")):
        collect(None, rep, outcome, reference_estimates)
    references = {m: reference_eigenfunction(est, grid) for m, est in reference_estimates.items()}

    metrics: Dict[Tuple[str, float], RobustnessMetrics] = {}
    cells = [(level, r) for level in config.levels for r in range(config.reps)]
    outcomes = _run_cells(config, cells, "breakdown")
    for level in config.levels:
        estimates: Dict[str, List[np.ndarray]] = {}
        for (cell_level, rep), outcome in zip(cells, outcomes):
            if cell_level == level:
                collect(level, rep, outcome, estimates)
        for method in config.methods:
            if method not in references or method not in estimates:
                continue
            failed = sum(1 for f in failures if f.method == method and f.level == level)
            metrics[(method, level)] = robustness_metrics(estimates[method], references[method], grid, failed)
            logging.getLogger().info(f"{method} contamination {level}: MEA {metrics[(method, level)].mea:.4f}")
    return BreakdownResult(grid, references, metrics, failures)


def breakdown_config_from_section(section, network: NetworkSimConfig, solver: MedianSolverConfig) -> BreakdownConfig:
    return BreakdownConfig(
        network=network,
        levels=tuple(section.levels),
        reps=section.reps,
        methods=tuple(section.methods),
        psi=section.psi,
        component=section.component,
        scheme=section.scheme,
        seed=section.seed,
        reference_reps=section.reference_reps,
        max_workers=section.max_workers,
        solver=solver,
    )
