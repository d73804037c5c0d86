"""
File formats.

Trajectories (samples and center trajectories) are long-form CSV with header
``subject,time,c_1..c_m`` plus a JSON sidecar (``<file>.json``) holding the
format version, space kind and dimension, grid and labels. Laplacians are
stored as their half-vectorized upper triangle, diagonal included.

Result tables:

* eigenfunctions - ``time,phi_1..phi_J``
* scores - ``subject,score_1..score_J``
* spectrum - ``j,lambda,explained,gap``
* mean function - ``time,nu``
* outliers - ``subject,norm,robust_z,flagged[,score_radius]``
* breakdown curves - ``method,contamination,mea,mise,replications,failures``
* breakdown bias - ``method,contamination,time,bias``

Floats are written with 17 significant digits and read back with pandas'
round-trip parser, so write-then-read is exact. Every write is atomic.
"""

import logging
import platform
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .config import DefaultFormat
from .errors import DataFileError, RobustFpcaError
from .metric_core import MetricSpace, make_space
from .robustness import BreakdownResult, OutlierReport
from .spectra import EigenSystem, ScoreMatrix
from .trajectory import CenterKind, CenterTrajectory, ObjectTrajectorySample, TimeGrid
from .utils import atomic_write, file_digest, load_json_file, write_json_file

FLOAT_FORMAT = DefaultFormat.FLOAT_FORMAT


def sidecar_path(path: str) -> str:
    return f"{path}{DefaultFormat.SIDECAR_EXTENSION}"


def write_table(path: str, frame: pd.DataFrame) -> str:
    try:
        with atomic_write(path) as handle:
            frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise DataFileError(f"cannot write: {e}", path=path) from e
    logging.getLogger().debug(f"wrote {path} ({len(frame)} rows)")
    return path


def read_table(path: str, columns: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """CSV as a DataFrame; ``columns`` (if given) must match the header exactly."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except OSError as e:
        raise DataFileError(f"cannot read: {e}", path=path) from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataFileError(f"malformed CSV: {e}", path=path) from e
    if columns is not None and list(frame.columns) != list(columns):
        raise DataFileError(f"expected columns {list(columns)}, got {list(frame.columns)}", path=path, line=1)
    return frame


def _numeric(frame: pd.DataFrame, path: str) -> np.ndarray:
    values = frame.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().any(axis=1).to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise DataFileError("non-numeric or missing value", path=path, line=row + 2)
    return values.to_numpy(dtype=float)


def _coord_columns(m: int) -> List[str]:
    return [f"c_{i + 1}" for i in range(m)]


def write_trajectories(
        path: str,
        space: MetricSpace,
        grid: TimeGrid,
        points: np.ndarray,
        labels: Optional[np.ndarray] = None,
        center_kind: Optional[CenterKind] = None,
    ) -> List[str]:
    """Write ``points`` of shape (n, T, *point_shape) and its sidecar; returns both paths."""
    points = np.asarray(points, dtype=float)
    n, T = points.shape[:2]
    coords = np.array([[space.to_coords(points[i, k]) for k in range(T)] for i in range(n)])
    frame = pd.DataFrame(coords.reshape(n * T, space.coord_count), columns=_coord_columns(space.coord_count))
    frame.insert(0, "time", np.tile(grid.points, n))
    frame.insert(0, "subject", np.repeat(np.arange(n), T))
    sidecar = {
        "format_version": DefaultFormat.FORMAT_VERSION,
        "space": {"kind": space.kind.value, "dim": space.dim},
        "grid": grid.points.tolist(),
        "subjects": int(n),
        "labels": None if labels is None else [int(v) for v in labels],
        "center_kind": None if center_kind is None else CenterKind(center_kind).value,
    }
    write_table(path, frame)
    write_json_file(sidecar_path(path), sidecar)
    return [path, sidecar_path(path)]


def _read_trajectories(path: str):
    meta = load_json_file(sidecar_path(path))
    try:
        if meta.get("format_version") != DefaultFormat.FORMAT_VERSION:
            raise DataFileError(f"unsupported format_version {meta.get('format_version')!r}", path=sidecar_path(path))
        space = make_space(meta["space"]["kind"], meta["space"]["dim"])
        grid = TimeGrid(meta["grid"])
        n = int(meta["subjects"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataFileError(f"incomplete sidecar: {e}", path=sidecar_path(path)) from e
    except RobustFpcaError as e:
        if isinstance(e, DataFileError):
            raise
        raise DataFileError(f"invalid sidecar: {e}", path=sidecar_path(path)) from e

    T = len(grid)
    frame = read_table(path, ["subject", "time"] + _coord_columns(space.coord_count))
    if len(frame) != n * T:
        raise DataFileError(f"expected {n * T} rows for {n} subjects x {T} times, got {len(frame)}", path=path)
    values = _numeric(frame, path)
    subject_ids = values[:, 0]
    times = values[:, 1]
    expected_ids = np.repeat(np.arange(n), T)
    mismatch = np.flatnonzero((subject_ids != expected_ids) | (times != np.tile(grid.points, n)))
    if mismatch.size:
        raise DataFileError("subject/time does not follow the sidecar grid", path=path, line=int(mismatch[0]) + 2)
    coords = values[:, 2:].reshape(n, T, space.coord_count)
    points = np.array([[space.from_coords(coords[i, k]) for k in range(T)] for i in range(n)])
    return meta, space, grid, points.reshape((n, T) + tuple(space.point_shape))


def read_sample(path: str) -> ObjectTrajectorySample:
    meta, space, grid, points = _read_trajectories(path)
    try:
        return ObjectTrajectorySample(space, grid, points, meta.get("labels"))
    except RobustFpcaError as e:
        raise DataFileError(str(e), path=path) from e


def write_sample(path: str, sample: ObjectTrajectorySample) -> List[str]:
    return write_trajectories(path, sample.space, sample.grid, sample.subjects, sample.labels)


def write_center(path: str, space: MetricSpace, center: CenterTrajectory) -> List[str]:
    return write_trajectories(path, space, center.grid, center.centers[np.newaxis], center_kind=center.kind)


def read_center(path: str):
    """(space, CenterTrajectory) from a center trajectory file."""
    meta, space, grid, points = _read_trajectories(path)
    if points.shape[0] != 1 or meta.get("center_kind") is None:
        raise DataFileError("not a center trajectory file", path=path)
    return space, CenterTrajectory(grid, points[0], meta["center_kind"])


def write_eigenfunctions(path: str, es: EigenSystem) -> str:
    frame = pd.DataFrame(es.eigenfunctions.T, columns=[f"phi_{j + 1}" for j in range(es.n_components)])
    frame.insert(0, "time", es.grid.points)
    return write_table(path, frame)


def read_eigenfunctions(path: str):
    """(grid, (J, T) eigenfunctions)."""
    frame = read_table(path)
    if not frame.columns.size or frame.columns[0] != "time":
        raise DataFileError("first column must be 'time'", path=path, line=1)
    values = _numeric(frame, path)
    return TimeGrid(values[:, 0]), values[:, 1:].T


def write_scores(path: str, scores: ScoreMatrix) -> str:
    S = scores.scores
    frame = pd.DataFrame(S, columns=[f"score_{j + 1}" for j in range(S.shape[1])])
    frame.insert(0, "subject", np.arange(S.shape[0]))
    return write_table(path, frame)


def read_scores(path: str) -> ScoreMatrix:
    frame = read_table(path)
    return ScoreMatrix(_numeric(frame, path)[:, 1:])


def write_spectrum(path: str, es: EigenSystem) -> str:
    frame = pd.DataFrame({
        "j": np.arange(1, es.n_components + 1),
        "lambda": es.eigenvalues,
        "explained": es.explained,
        "gap": es.gaps,
    })
    return write_table(path, frame)


def write_mean_function(path: str, grid: TimeGrid, nu: np.ndarray) -> str:
    return write_table(path, pd.DataFrame({"time": grid.points, "nu": np.asarray(nu, dtype=float)}))


def write_outliers(path: str, report: OutlierReport) -> str:
    frame = pd.DataFrame({
        "subject": np.arange(report.norms.size),
        "norm": report.norms,
        "robust_z": report.robust_z,
        "flagged": report.flagged.astype(int),
    })
    if report.score_radius is not None:
        frame["score_radius"] = report.score_radius
    return write_table(path, frame)


def write_curves(path: str, result: BreakdownResult) -> str:
    rows = [
        {
            "method": method,
            "contamination": level,
            "mea": m.mea,
            "mise": m.mise,
            "replications": m.replications,
            "failures": m.failures,
        }
        for (method, level), m in result.metrics.items()
    ]
    columns = ["method", "contamination", "mea", "mise", "replications", "failures"]
    return write_table(path, pd.DataFrame(rows, columns=columns))


def write_bias(path: str, result: BreakdownResult) -> str:
    frames = [
        pd.DataFrame({"method": method, "contamination": level, "time": result.grid.points, "bias": m.bias})
        for (method, level), m in result.metrics.items()
    ]
    columns = ["method", "contamination", "time", "bias"]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    return write_table(path, frame[columns])


@dataclass
class RunReport:
    """Everything needed to audit and rerun a command."""

    command: str
    config: dict
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)
    format_version: int = DefaultFormat.FORMAT_VERSION
    rng_version: str = DefaultFormat.RNG_VERSION
    exit_code: int = 0

    def add_input(self, path: str) -> None:
        self.inputs[path] = file_digest(path)

    def add_outputs(self, paths: Sequence[str]) -> None:
        for path in paths:
            self.outputs[path] = file_digest(path)

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["python"] = platform.python_version()
        return payload


def write_run_report(path: str, report: RunReport) -> str:
    return write_json_file(path, report.to_dict())
