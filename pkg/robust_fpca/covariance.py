"""
Autocovariance estimators for distance trajectories.

* classical - ``(1/n) sum_i V_i(s) V_i(t) - Vbar(s) Vbar(t)``; with squared
  distances to the mean (DM input) this is the non-robust dm baseline.
* wpu - the Winsorized pairwise U-statistic
  ``2/(n(n-1)) sum_{j<k} xi^2(d_jk) (V_j(s) - V_k(s)) (V_j(t) - V_k(t))``
  with the Winsorized radius ``xi(r) = min(1, Q / r)``.
* spatial-sign - the Q = 0 member of the wpu family. ``xi^2`` is used divided
  by Q^2, i.e. every pair enters with weight ``1 / d_jk^2``; pairs whose
  distance is (numerically) zero are skipped but still counted in the divisor.

Pairs are enumerated in ``numpy.triu_indices(n, 1)`` order and accumulated in
fixed chunks of ``DefaultCovariance.PAIR_CHUNK`` pairs, chunk partial sums
added in chunk order, so a surface is bitwise reproducible.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .config import DefaultCovariance
from .errors import DegeneratePairError, InsufficientSampleError, ValidationError
from .trajectory import DistanceKind, DistanceTrajectories, TimeGrid


class SurfaceKind(str, Enum):
    CLASSICAL = "classical"
    WPU = "wpu"
    SPATIAL_SIGN = "spatial-sign"
    DM = "dm"


@dataclass(frozen=True, eq=False)
class PairwiseDistanceSet:
    """L2 distances between all subject pairs i < j, in ``triu_indices`` order."""

    n: int
    dist: np.ndarray

    def __post_init__(self):
        dist = np.asarray(self.dist, dtype=float).reshape(-1)
        expected = self.n * (self.n - 1) // 2
        if dist.size != expected:
            raise ValidationError(f"expected {expected} pairwise distances for n={self.n}, got {dist.size}")
        if not np.all(np.isfinite(dist)) or np.any(dist < 0):
            raise ValidationError("pairwise distances must be finite and non-negative")
        dist.setflags(write=False)
        object.__setattr__(self, "dist", dist)

    @property
    def size(self) -> int:
        return self.dist.size

    def pairs(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.triu_indices(self.n, 1)

    def ordered(self) -> np.ndarray:
        return np.sort(self.dist)


@dataclass(frozen=True)
class CutoffSpec:
    """Winsorization cutoff Q. ``q_hat = 0`` is the spatial-sign variant, ``inf`` disables Winsorizing."""

    psi: Optional[float]
    q_hat: float

    def __post_init__(self):
        if self.psi is not None and not 0.0 < self.psi <= 1.0:
            raise ValidationError(f"psi must lie in (0, 1], got {self.psi!r}")
        if not self.q_hat >= 0.0:
            raise ValidationError(f"cutoff must be non-negative, got {self.q_hat!r}")

    @classmethod
    def spatial_sign(cls) -> "CutoffSpec":
        return cls(psi=None, q_hat=0.0)

    @classmethod
    def unwinsorized(cls) -> "CutoffSpec":
        return cls(psi=None, q_hat=math.inf)

    @property
    def is_spatial_sign(self) -> bool:
        return self.q_hat == 0.0


@dataclass(frozen=True, eq=False)
class CovarianceSurface:
    grid: TimeGrid
    values: np.ndarray
    kind: SurfaceKind
    oracle: bool = False
    degenerate_pairs: int = 0
    degenerate: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        T = len(self.grid)
        if values.shape != (T, T):
            raise ValidationError(f"surface must be {T}x{T}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("surface contains non-finite values")
        scale = max(1.0, float(np.abs(values).max()))
        if np.abs(values - values.T).max() > DefaultCovariance.SYMMETRY_TOL * scale:
            raise ValidationError("surface is not symmetric")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", SurfaceKind(self.kind))
        min_eig = self.min_eigenvalue()
        if min_eig < DefaultCovariance.PSD_SLACK * scale:
            logging.getLogger().warning(
                f"{self.kind.value} surface is not positive semidefinite (smallest eigenvalue {min_eig:.3e})"
            )

    def weighted_operator(self) -> np.ndarray:
        """W^{1/2} C W^{1/2}: the symmetric matrix whose spectrum is the operator's."""
        root = np.sqrt(self.grid.quad_weights)
        return root[:, np.newaxis] * self.values * root[np.newaxis, :]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.weighted_operator())[0])


def _require_pairs(n: int) -> None:
    if n < 2:
        raise InsufficientSampleError(f"at least two subjects are required, got {n}", n=n)


def _chunks(N: int, chunk: int):
    for start in range(0, N, chunk):
        yield slice(start, min(start + chunk, N))


def pairwise_l2_distances(D: DistanceTrajectories, chunk: int = DefaultCovariance.PAIR_CHUNK) -> PairwiseDistanceSet:
    n = D.n
    _require_pairs(n)
    I, J = np.triu_indices(n, 1)
    dist = np.empty(I.size)
    for sl in _chunks(I.size, chunk):
        dist[sl] = D.grid.norm(D.values[I[sl]] - D.values[J[sl]])
    return PairwiseDistanceSet(n, dist)


def cutoff_rank(psi: float, N: int) -> int:
    """m(psi) = ceil(psi * N) clamped to [1, N]."""
    # round away float noise such as 0.84 * 25 = 21.000000000000004
    m = math.ceil(round(psi * N, 9))
    return min(max(m, 1), N)


def estimate_cutoff(pd: PairwiseDistanceSet, psi: float = DefaultCovariance.PSI) -> CutoffSpec:
    """Q-hat = the m(psi)-th smallest pairwise distance."""
    if not 0.0 < psi <= 1.0:
        raise ValidationError(f"psi must lie in (0, 1], got {psi!r}")
    if pd.size == 0:
        raise InsufficientSampleError("no pairwise distances to estimate a cutoff from")
    m = cutoff_rank(psi, pd.size)
    q_hat = float(np.partition(pd.dist, m - 1)[m - 1])
    logging.getLogger().debug(f"cutoff psi={psi} m={m}/{pd.size} q_hat={q_hat!r}")
    return CutoffSpec(psi=psi, q_hat=q_hat)


def winsor_radius(r: float, q: float) -> float:
    """xi(r) = 1 if r <= Q, Q / r otherwise."""
    if r < 0 or q < 0:
        raise ValidationError(f"radius and cutoff must be non-negative, got r={r!r}, Q={q!r}")
    if r == 0 and q == 0:
        raise DegeneratePairError("Winsorized radius undefined for r = Q = 0")
    if r <= q:
        return 1.0
    return q / r


def pair_weights(
        dist: np.ndarray,
        cutoff: CutoffSpec,
        degenerate_tol: float = DefaultCovariance.DEGENERATE_TOL,
    ) -> Tuple[np.ndarray, np.ndarray]:
    """Per-pair weights ``xi^2`` (``1/d^2`` for spatial sign) and the mask of skipped pairs."""
    dist = np.asarray(dist, dtype=float)
    if cutoff.is_spatial_sign:
        typical = float(np.median(dist)) if dist.size else 0.0
        degenerate = dist <= degenerate_tol * typical
        weights = np.zeros_like(dist)
        live = ~degenerate
        weights[live] = 1.0 / dist[live] ** 2
        return weights, degenerate
    xi = np.ones_like(dist)
    above = dist > cutoff.q_hat
    xi[above] = cutoff.q_hat / dist[above]
    return xi ** 2, np.zeros(dist.shape, dtype=bool)


def wpu_covariance(
        D: DistanceTrajectories,
        cutoff: CutoffSpec,
        pairwise: Optional[PairwiseDistanceSet] = None,
        oracle: bool = False,
        chunk: int = DefaultCovariance.PAIR_CHUNK,
    ) -> CovarianceSurface:
    n = D.n
    _require_pairs(n)
    pairwise = pairwise if pairwise is not None else pairwise_l2_distances(D, chunk)
    if pairwise.n != n:
        raise ValidationError(f"pairwise distances were computed for n={pairwise.n}, sample has n={n}")
    weights, skipped = pair_weights(pairwise.dist, cutoff)
    I, J = pairwise.pairs()
    T = len(D.grid)
    C = np.zeros((T, T))
    for sl in _chunks(I.size, chunk):
        diff = D.values[I[sl]] - D.values[J[sl]]
        C += (diff * weights[sl, np.newaxis]).T @ diff
    C *= 2.0 / (n * (n - 1))
    C = 0.5 * (C + C.T)

    kind = SurfaceKind.SPATIAL_SIGN if cutoff.is_spatial_sign else SurfaceKind.WPU
    skipped_count = int(skipped.sum())
    degenerate = bool(np.all(pairwise.dist == 0.0)) or skipped_count == pairwise.size
    if skipped_count:
        logging.getLogger().warning(f"{kind.value}: skipped {skipped_count} degenerate pairs of {pairwise.size}")
    if degenerate:
        logging.getLogger().warning(f"{kind.value}: all subject pairs are degenerate, surface is zero")
    return CovarianceSurface(D.grid, C, kind, oracle=oracle, degenerate_pairs=skipped_count, degenerate=degenerate)


def oracle_wpu_covariance(
        V: DistanceTrajectories,
        cutoff: CutoffSpec,
        pairwise: Optional[PairwiseDistanceSet] = None,
    ) -> CovarianceSurface:
    """Same estimator on distance trajectories built from the true (known) center."""
    return wpu_covariance(V, cutoff, pairwise=pairwise, oracle=True)


def classical_covariance(D: DistanceTrajectories) -> CovarianceSurface:
    _require_pairs(D.n)
    centered = D.values - D.values.mean(axis=0)
    C = centered.T @ centered / D.n
    C = 0.5 * (C + C.T)
    kind = SurfaceKind.DM if D.kind is DistanceKind.DM_SQUARED_DISTANCE else SurfaceKind.CLASSICAL
    degenerate = bool(np.all(centered == 0.0))
    if degenerate:
        logging.getLogger().warning(f"{kind.value}: all distance trajectories are identical, surface is zero")
    return CovarianceSurface(D.grid, C, kind, degenerate=degenerate)
