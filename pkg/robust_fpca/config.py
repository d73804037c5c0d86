"""
Package defaults and the strict YAML run configuration.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, List, Optional

from .errors import ConfigError
from .utils import get_yaml_config


class DefaultSolver:
    MAX_ITER = 200
    TOL = 1e-8
    ANCHOR_EPS = 1e-10
    PARALLEL = False
    MAX_WORKERS = 4


class DefaultCovariance:
    PSI = 0.84
    PAIR_CHUNK = 4096
    DEGENERATE_TOL = 1e-4  # relative to the median pairwise distance
    SYMMETRY_TOL = 1e-10
    PSD_SLACK = -1e-8


class DefaultSpectra:
    FVE = 0.9
    ORTHONORMAL_TOL = 1e-8
    SIGN_TOL = 1e-10
    TIE_TOL = 1e-12
    OUTLIER_THRESHOLD = 3.5
    CLUSTERS = 3
    CLUSTER_RESTARTS = 20


class DefaultNetworkSim:
    NODES = 20
    COMMUNITIES = 2
    GROUP_PEAKS = [0.3, 0.45, 0.75]
    AMPLITUDES = [0.5, 0.5, 0.5]
    BASE_WEIGHTS = [2.0, 2.0, 1.0]
    NOISE_SD = 0.1
    SUBJECTS_PER_GROUP = 100
    GRID_POINTS = 50
    BUMP_VARIANCE = 0.02


class DefaultSphereSim:
    SUBJECTS = 50
    GRID_POINTS = 50
    START_ANGLE = 0.0
    ARC = 1.0
    TILT = 0.3
    NOISE_SD = 0.05
    MARGIN = 0.1
    MAX_RETRIES = 10


class DefaultContamination:
    SCHEME = "shift-scale"
    FRACTION = 0.0
    SHIFT = 0.5
    SCALE = 5.0
    BIMODAL_OFFSET = 0.2


class DefaultBreakdown:
    LEVELS = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4]
    REPS = 20
    METHODS = ["wpu", "dm", "spatial-sign", "classical"]
    COMPONENT = 1
    SEED = 20170101


class DefaultIngest:
    BIN_MINUTES = 20
    TIMESTAMP_COLUMN = "timestamp"
    ORIGIN_COLUMN = "origin"
    DESTINATION_COLUMN = "destination"


class DefaultFormat:
    FORMAT_VERSION = 1
    FLOAT_FORMAT = "%.17g"
    RNG_VERSION = "philox4x64-seedseq/1"
    SIDECAR_EXTENSION = ".json"


class Defaults:
    PACKAGE_DESCRIPTION = "Robust functional PCA for time-varying objects in metric spaces"
    PACKAGE_URL = "https://github.com/robust-fpca/robust-fpca/blob/main/README.md"


@dataclass
class SolverSection:
    max_iter: int = DefaultSolver.MAX_ITER
    tol: float = DefaultSolver.TOL
    anchor_eps: float = DefaultSolver.ANCHOR_EPS
    parallel: bool = DefaultSolver.PARALLEL
    max_workers: int = DefaultSolver.MAX_WORKERS


@dataclass
class MedianSection:
    input: Optional[str] = None
    output: Optional[str] = None
    kind: str = "median"


@dataclass
class FpcaSection:
    input: Optional[str] = None
    output_dir: Optional[str] = None
    method: str = "wpu"
    psi: float = DefaultCovariance.PSI
    components: Optional[int] = None
    fve: float = DefaultSpectra.FVE
    outlier_threshold: float = DefaultSpectra.OUTLIER_THRESHOLD


@dataclass
class SimulateSection:
    kind: str = "network"
    output: Optional[str] = None
    seed: int = 0


@dataclass
class NetworkSection:
    nodes: int = DefaultNetworkSim.NODES
    communities: int = DefaultNetworkSim.COMMUNITIES
    group_peaks: List[float] = field(default_factory=lambda: list(DefaultNetworkSim.GROUP_PEAKS))
    amplitudes: List[float] = field(default_factory=lambda: list(DefaultNetworkSim.AMPLITUDES))
    base_weights: List[float] = field(default_factory=lambda: list(DefaultNetworkSim.BASE_WEIGHTS))
    noise_sd: float = DefaultNetworkSim.NOISE_SD
    subjects_per_group: int = DefaultNetworkSim.SUBJECTS_PER_GROUP
    grid_points: int = DefaultNetworkSim.GRID_POINTS


@dataclass
class SphereSection:
    subjects: int = DefaultSphereSim.SUBJECTS
    grid_points: int = DefaultSphereSim.GRID_POINTS
    start_angle: float = DefaultSphereSim.START_ANGLE
    arc: float = DefaultSphereSim.ARC
    tilt: float = DefaultSphereSim.TILT
    noise_sd: float = DefaultSphereSim.NOISE_SD
    antithetic: bool = False


@dataclass
class ContaminationSection:
    fraction: float = DefaultContamination.FRACTION
    scheme: str = DefaultContamination.SCHEME
    shift: float = DefaultContamination.SHIFT
    scale: float = DefaultContamination.SCALE


@dataclass
class BreakdownSection:
    output_dir: Optional[str] = None
    seed: int = DefaultBreakdown.SEED
    reps: int = DefaultBreakdown.REPS
    reference_reps: Optional[int] = None
    levels: List[float] = field(default_factory=lambda: list(DefaultBreakdown.LEVELS))
    methods: List[str] = field(default_factory=lambda: list(DefaultBreakdown.METHODS))
    psi: float = DefaultCovariance.PSI
    component: int = DefaultBreakdown.COMPONENT
    scheme: str = DefaultContamination.SCHEME
    max_workers: int = 1


@dataclass
class IngestSection:
    events: Optional[str] = None
    output: Optional[str] = None
    nodes: List[str] = field(default_factory=list)
    bin_minutes: int = DefaultIngest.BIN_MINUTES
    start_date: Optional[str] = None
    end_date: Optional[str] = None
    timestamp_column: str = DefaultIngest.TIMESTAMP_COLUMN
    origin_column: str = DefaultIngest.ORIGIN_COLUMN
    destination_column: str = DefaultIngest.DESTINATION_COLUMN


@dataclass
class RunConfig:
    format_version: int = DefaultFormat.FORMAT_VERSION
    solver: SolverSection = field(default_factory=SolverSection)
    median: MedianSection = field(default_factory=MedianSection)
    fpca: FpcaSection = field(default_factory=FpcaSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    sphere: SphereSection = field(default_factory=SphereSection)
    contamination: ContaminationSection = field(default_factory=ContaminationSection)
    breakdown: BreakdownSection = field(default_factory=BreakdownSection)
    ingest: IngestSection = field(default_factory=IngestSection)

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig) if f.name != "format_version"}


def _coerce(name: str, value: Any, default: Any) -> Any:
    # YAML reads "1" as int where a float is expected; accept that, nothing looser.
    if isinstance(default, bool) or default is None:
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, (int, float)) and not isinstance(value, (int, float)):
        raise ConfigError(f"'{name}' must be numeric, got {value!r}", key=name)
    return value


def _parse_section(name: str, raw: Any):
    section = _SECTIONS[name]()
    if raw is None:
        return section
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping", key=name)
    known = {f.name for f in fields(section)}
    for key, value in raw.items():
        dotted = f"{name}.{key}"
        if key not in known:
            raise ConfigError(f"unknown configuration key '{dotted}'", key=dotted)
        setattr(section, key, _coerce(dotted, value, getattr(section, key)))
    return section


def parse_run_config(raw: Optional[dict]) -> RunConfig:
    """Build a RunConfig from an already-loaded mapping, rejecting unknown keys."""
    raw = dict(raw or {})
    version = raw.pop("format_version", DefaultFormat.FORMAT_VERSION)
    if version != DefaultFormat.FORMAT_VERSION:
        raise ConfigError(
            f"unsupported format_version {version!r}, expected {DefaultFormat.FORMAT_VERSION}",
            key="format_version",
        )
    for key in raw:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown configuration section '{key}'", key=key)
    sections = {name: _parse_section(name, raw.get(name)) for name in _SECTIONS}
    return RunConfig(format_version=version, **sections)


def load_run_config(configuration: Optional[str]) -> RunConfig:
    if configuration is None:
        return RunConfig()
    return parse_run_config(get_yaml_config(configuration))


def apply_overrides(
        config: RunConfig,
        seed: Optional[int] = None,
        psi: Optional[float] = None,
        components: Optional[int] = None,
        method: Optional[str] = None,
    ) -> RunConfig:
    """Command-line flags win over the configuration file."""
    if seed is not None:
        config.simulate.seed = seed
        config.breakdown.seed = seed
    if psi is not None:
        config.fpca.psi = psi
        config.breakdown.psi = psi
    if components is not None:
        config.fpca.components = components
    if method is not None:
        config.fpca.method = method
    return config
