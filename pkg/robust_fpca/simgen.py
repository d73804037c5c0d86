"""
Seeded generators for time-varying community networks and spherical
trajectories, plus the contamination operators used in robustness studies.

Randomness comes from numpy's Philox bit generator seeded by
``SeedSequence([seed, stream, index])``: every subject (and every
contamination draw) has its own sub-stream, so a sample is a pure function of
(config, seed) and subjects can be generated in any order.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .config import (
    DefaultContamination,
    DefaultFormat,
    DefaultNetworkSim,
    DefaultSphereSim,
)
from .errors import ConcentrationError, ConfigError
from .metric_core import LaplacianSpace, SphereSpace, adjacency_of, graph_laplacian
from .trajectory import ObjectTrajectorySample, TimeGrid

RNG_VERSION = DefaultFormat.RNG_VERSION

STREAM_NETWORK = 1
STREAM_SPHERE = 2
STREAM_CONTAMINATION = 3

CONTAMINATION_SCHEMES = ("shift-scale", "bimodal", "zero-weight")


def make_rng(seed: int, stream: int = 0, index: int = 0) -> np.random.Generator:
    if seed is None or int(seed) < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}", key="seed")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), stream, index])))


def derive_seed(seed: int, *path: int) -> int:
    """A child seed for (seed, *path), e.g. one per replication."""
    return int(np.random.SeedSequence([int(seed), *path]).generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class NetworkSimConfig:
    """Community networks whose within-community weights carry a group-specific bump.

    Nodes are split into ``communities`` contiguous blocks that stay fixed in
    time. For group g the within-community weight at time t is
    ``base_weights[g] + amplitudes[g] * exp(-(t - group_peaks[g])**2 / (2 * bump_variance))``,
    the between-community weight is ``base_weights[g] / 4``; iid Gaussian edge noise
    with sd ``noise_sd`` is added and weights are truncated at 0.
    """

    nodes: int = DefaultNetworkSim.NODES
    communities: int = DefaultNetworkSim.COMMUNITIES
    group_peaks: Tuple[float, ...] = tuple(DefaultNetworkSim.GROUP_PEAKS)
    amplitudes: Tuple[float, ...] = tuple(DefaultNetworkSim.AMPLITUDES)
    base_weights: Tuple[float, ...] = tuple(DefaultNetworkSim.BASE_WEIGHTS)
    noise_sd: float = DefaultNetworkSim.NOISE_SD
    subjects_per_group: int = DefaultNetworkSim.SUBJECTS_PER_GROUP
    grid_points: int = DefaultNetworkSim.GRID_POINTS
    bump_variance: float = DefaultNetworkSim.BUMP_VARIANCE

    def __post_init__(self):
        object.__setattr__(self, "group_peaks", tuple(float(t) for t in self.group_peaks))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "base_weights", tuple(float(w) for w in self.base_weights))
        if self.nodes < 2:
            raise ConfigError(f"network needs at least 2 nodes, got {self.nodes}", key="network.nodes")
        if not 1 <= self.communities <= self.nodes:
            raise ConfigError(f"communities must lie in [1, {self.nodes}]", key="network.communities")
        if not self.group_peaks or any(not 0.0 < t < 1.0 for t in self.group_peaks):
            raise ConfigError("group peaks must lie in (0, 1)", key="network.group_peaks")
        if len(self.amplitudes) != len(self.group_peaks):
            raise ConfigError("one amplitude per group is required", key="network.amplitudes")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative", key="network.noise_sd")
        if len(self.base_weights) != len(self.group_peaks):
            raise ConfigError("one base weight per group is required", key="network.base_weights")
        if any(w < 0 for w in self.base_weights):
            raise ConfigError("base weights must be non-negative", key="network.base_weights")
        if self.subjects_per_group < 1:
            raise ConfigError("subjects_per_group must be positive", key="network.subjects_per_group")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be at least 2", key="network.grid_points")
        if not self.bump_variance > 0:
            raise ConfigError("bump_variance must be positive", key="network.bump_variance")

    @property
    def groups(self) -> int:
        return len(self.group_peaks)

    @property
    def subjects(self) -> int:
        return self.groups * self.subjects_per_group

    def membership(self) -> np.ndarray:
        return np.arange(self.nodes) * self.communities // self.nodes

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.grid_points)


@dataclass(frozen=True)
class ContaminationSpec:
    fraction: float = DefaultContamination.FRACTION
    scheme: str = DefaultContamination.SCHEME
    shift: float = DefaultContamination.SHIFT
    scale: float = DefaultContamination.SCALE
    bimodal_offset: float = DefaultContamination.BIMODAL_OFFSET

    def __post_init__(self):
        if not 0.0 <= self.fraction < 1.0:
            raise ConfigError(f"contamination fraction must lie in [0, 1), got {self.fraction!r}",
                              key="contamination.fraction")
        if self.scheme not in CONTAMINATION_SCHEMES:
            raise ConfigError(f"unknown contamination scheme '{self.scheme}'", key="contamination.scheme")
        if self.scale < 0:
            raise ConfigError("scale must be non-negative", key="contamination.scale")

    def outlier_count(self, n: int) -> int:
        return int(np.floor(self.fraction * n + 0.5))


@dataclass(frozen=True)
class SphereSimConfig:
    """Perturbations of a great circle on S^2.

    The base curve runs from ``start_angle`` over ``arc`` radians along the
    great circle spanned by e1 and (0, cos tilt, sin tilt). Each subject adds
    a smooth tangent field (constant, sin and cos terms in both tangent
    directions, coefficients N(0, noise_sd^2)) through the exponential map.
    """

    subjects: int = DefaultSphereSim.SUBJECTS
    grid_points: int = DefaultSphereSim.GRID_POINTS
    start_angle: float = DefaultSphereSim.START_ANGLE
    arc: float = DefaultSphereSim.ARC
    tilt: float = DefaultSphereSim.TILT
    noise_sd: float = DefaultSphereSim.NOISE_SD
    antithetic: bool = False
    margin: float = DefaultSphereSim.MARGIN
    max_retries: int = DefaultSphereSim.MAX_RETRIES

    def __post_init__(self):
        if self.subjects < 1:
            raise ConfigError("subjects must be positive", key="sphere.subjects")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be at least 2", key="sphere.grid_points")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative", key="sphere.noise_sd")
        if self.antithetic and self.subjects % 2:
            raise ConfigError("antithetic sampling needs an even number of subjects", key="sphere.antithetic")
        if not 0.0 <= self.margin < np.pi / 2:
            raise ConfigError("margin must lie in [0, pi/2)", key="sphere.margin")

    def grid(self) -> TimeGrid:
        return TimeGrid.uniform(self.grid_points)


def within_intensity(config: NetworkSimConfig, grid: TimeGrid) -> np.ndarray:
    """Noise-free within-community weight curves, one row per group."""
    peaks = np.asarray(config.group_peaks)[:, np.newaxis]
    amplitudes = np.asarray(config.amplitudes)[:, np.newaxis]
    base = np.asarray(config.base_weights)[:, np.newaxis]
    bump = np.exp(-(grid.points[np.newaxis, :] - peaks) ** 2 / (2.0 * config.bump_variance))
    return base + amplitudes * bump


def _bimodal_intensity(config: NetworkSimConfig, grid: TimeGrid, offset: float) -> np.ndarray:
    t = grid.points[np.newaxis, :]
    peaks = np.asarray(config.group_peaks)[:, np.newaxis]
    amplitudes = np.asarray(config.amplitudes)[:, np.newaxis]
    base = np.asarray(config.base_weights)[:, np.newaxis]
    bumps = (np.exp(-(t - peaks + offset) ** 2 / (2.0 * config.bump_variance))
             + np.exp(-(t - peaks - offset) ** 2 / (2.0 * config.bump_variance)))
    return base + amplitudes * bumps


def _network_adjacency(
        config: NetworkSimConfig,
        within: np.ndarray,
        between: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
    """(T, p, p) adjacency for one subject given its within-community curve and between-community weight."""
    p = config.nodes
    T = within.size
    same = config.membership()[:, np.newaxis] == config.membership()[np.newaxis, :]
    mean = np.where(same[np.newaxis], within[:, np.newaxis, np.newaxis], between)
    iu = np.triu_indices(p, 1)
    A = np.zeros((T, p, p))
    upper = mean[:, iu[0], iu[1]]
    if config.noise_sd > 0:
        upper = upper + rng.normal(0.0, config.noise_sd, size=upper.shape)
    upper = np.maximum(upper, 0.0)
    A[:, iu[0], iu[1]] = upper
    return A + np.transpose(A, (0, 2, 1))


def gen_network_sample(config: NetworkSimConfig, seed: int) -> ObjectTrajectorySample:
    grid = config.grid()
    within = within_intensity(config, grid)
    subjects = np.empty((config.subjects, len(grid), config.nodes, config.nodes))
    labels = np.repeat(np.arange(config.groups), config.subjects_per_group)
    for i, g in enumerate(labels):
        rng = make_rng(seed, STREAM_NETWORK, i)
        between = config.base_weights[g] / 4.0
        subjects[i] = graph_laplacian(_network_adjacency(config, within[g], between, rng))
    logging.getLogger().debug(
        f"generated {config.subjects} network subjects ({config.nodes} nodes, {len(grid)} times), seed {seed}"
    )
    return ObjectTrajectorySample(LaplacianSpace(config.nodes), grid, subjects, labels)


def contaminate(
        sample: ObjectTrajectorySample,
        spec: ContaminationSpec,
        seed: int,
        network: Optional[NetworkSimConfig] = None,
    ) -> Tuple[ObjectTrajectorySample, np.ndarray]:
    """Replace ``floor(fraction * n + 0.5)`` seeded-random subjects by outliers.

    * shift-scale: every connectivity weight becomes ``scale * (weight + shift)``.
    * bimodal: the within-community bump is replaced by two bumps at peak +/- offset.
    * zero-weight: between-community weights are set to zero.

    bimodal and zero-weight need the generating ``network`` config and group labels.
    """
    if not isinstance(sample.space, LaplacianSpace):
        raise ConfigError(f"contamination applies to Laplacian samples, got {sample.space!r}",
                          key="contamination.scheme")
    count = spec.outlier_count(sample.n)
    if count == 0:
        return sample, np.array([], dtype=int)
    if spec.scheme != "shift-scale":
        if network is None or sample.labels is None:
            raise ConfigError(f"scheme '{spec.scheme}' needs the network configuration and group labels",
                              key="contamination.scheme")
        if network.nodes != sample.space.dim or network.grid_points != len(sample.grid):
            raise ConfigError("network configuration does not match the sample", key="contamination.scheme")

    rng = make_rng(seed, STREAM_CONTAMINATION, 0)
    outliers = np.sort(rng.choice(sample.n, size=count, replace=False))
    subjects = np.array(sample.subjects)
    p = sample.space.dim
    off_diagonal = ~np.eye(p, dtype=bool)
    for i in outliers:
        A = adjacency_of(subjects[i])
        if spec.scheme == "shift-scale":
            A = np.where(off_diagonal, spec.scale * (A + spec.shift), 0.0)
        elif spec.scheme == "bimodal":
            g = sample.labels[i]
            bump_change = (_bimodal_intensity(network, sample.grid, spec.bimodal_offset)[g]
                           - within_intensity(network, sample.grid)[g])
            same = network.membership()[:, np.newaxis] == network.membership()[np.newaxis, :]
            A = np.maximum(A + np.where(same & off_diagonal, 1.0, 0.0) * bump_change[:, np.newaxis, np.newaxis], 0.0)
        else:
            between = network.membership()[:, np.newaxis] != network.membership()[np.newaxis, :]
            A = np.where(between, 0.0, A)
        subjects[i] = graph_laplacian(A)
    logging.getLogger().debug(f"{spec.scheme}: contaminated {count} of {sample.n} subjects")
    return sample.replace_subjects(subjects), outliers


def sphere_base_curve(config: SphereSimConfig, grid: TimeGrid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Base curve and its orthonormal tangent frame, each (T, 3)."""
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, np.cos(config.tilt), np.sin(config.tilt)])
    theta = (config.start_angle + config.arc * grid.points)[:, np.newaxis]
    base = np.cos(theta) * e1 + np.sin(theta) * e2
    along = -np.sin(theta) * e1 + np.cos(theta) * e2
    normal = np.broadcast_to(np.cross(e1, e2), base.shape)
    return base, along, normal


def _exp_rows(base: np.ndarray, V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=-1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    out = np.cos(norms) * base + np.sin(norms) * V / safe
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def _tangent_field(grid: TimeGrid, along, normal, coefficients: np.ndarray) -> np.ndarray:
    t = grid.points
    basis = np.stack([np.ones_like(t), np.sin(np.pi * t), np.cos(np.pi * t)])  # (3, T)
    a = coefficients[0] @ basis
    b = coefficients[1] @ basis
    return a[:, np.newaxis] * along + b[:, np.newaxis] * normal


def _concentrated(points: np.ndarray, margin: float) -> bool:
    """All pairwise angles below pi/2 - margin at every time point."""
    for k in range(points.shape[1]):
        X = points[:, k]
        if (X @ X.T).min() < np.sin(margin):
            return False
    return True


def gen_sphere_sample(config: SphereSimConfig, seed: int) -> ObjectTrajectorySample:
    grid = config.grid()
    base, along, normal = sphere_base_curve(config, grid)
    n = config.subjects
    for attempt in range(config.max_retries + 1):
        subjects = np.empty((n, len(grid), 3))
        if config.noise_sd == 0:
            subjects[:] = base
        else:
            draws = n // 2 if config.antithetic else n
            for i in range(draws):
                rng = make_rng(seed, STREAM_SPHERE, attempt * n + i)
                V = _tangent_field(grid, along, normal, rng.normal(0.0, config.noise_sd, size=(2, 3)))
                if config.antithetic:
                    subjects[2 * i] = _exp_rows(base, V)
                    subjects[2 * i + 1] = _exp_rows(base, -V)
                else:
                    subjects[i] = _exp_rows(base, V)
        if _concentrated(subjects, config.margin):
            return ObjectTrajectorySample(SphereSpace(3), grid, subjects)
        logging.getLogger().warning(f"sphere sample attempt {attempt} violated the concentration margin, retrying")
    raise ConcentrationError(
        f"could not generate a concentrated sphere sample in {config.max_retries + 1} attempts; lower noise_sd"
    )


def network_config_from_section(section) -> NetworkSimConfig:
    return NetworkSimConfig(
        nodes=section.nodes,
        communities=section.communities,
        group_peaks=tuple(section.group_peaks),
        amplitudes=tuple(section.amplitudes),
        base_weights=tuple(section.base_weights),
        noise_sd=section.noise_sd,
        subjects_per_group=section.subjects_per_group,
        grid_points=section.grid_points,
    )


def sphere_config_from_section(section) -> SphereSimConfig:
    return SphereSimConfig(
        subjects=section.subjects,
        grid_points=section.grid_points,
        start_angle=section.start_angle,
        arc=section.arc,
        tilt=section.tilt,
        noise_sd=section.noise_sd,
        antithetic=section.antithetic,
    )


def contamination_from_section(section) -> ContaminationSpec:
    return ContaminationSpec(
        fraction=section.fraction,
        scheme=section.scheme,
        shift=section.shift,
        scale=section.scale,
    )
