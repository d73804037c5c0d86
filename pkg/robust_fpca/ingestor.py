import os
import time
import logging

import numpy as np
import pandas as pd

from event_records.event_reader import EventRecordReader

from .config import RunConfig
from .errors import ConfigError, DataFileError, RobustFpcaError
from .log import find_accumulating_handler
from .metric_core import MedianSolverConfig
from .robustness import breakdown_config_from_section, breakdown_experiment, detect_outliers, theoretical_breakdown
from .serialization import (
    RunReport,
    read_sample,
    sidecar_path,
    write_bias,
    write_center,
    write_curves,
    write_eigenfunctions,
    write_mean_function,
    write_outliers,
    write_run_report,
    write_sample,
    write_scores,
    write_spectrum,
    write_table,
)
from .simgen import (
    contaminate,
    contamination_from_section,
    gen_network_sample,
    gen_sphere_sample,
    network_config_from_section,
    sphere_config_from_section,
)
from .spectra import FpcaMethod, fit_fpca
from .trajectory import CenterKind, compute_center_trajectory
from .utils import create_folder

REPORT_SUFFIX = ".report.json"


def solver_config(config: RunConfig) -> MedianSolverConfig:
    return MedianSolverConfig(
        max_iter=config.solver.max_iter,
        tol=config.solver.tol,
        anchor_eps=config.solver.anchor_eps,
    )


def _required(value, key):
    if value is None or value == "" or value == []:
        raise ConfigError(f"'{key}' is required", key=key)
    return value


def _start(command: str, config: RunConfig) -> RunReport:
    handler = find_accumulating_handler()
    if handler is not None:
        handler.clear()
    return RunReport(command, config.to_dict())


def _finish(report: RunReport, report_path, start_time: float, ret: int) -> None:
    end_time = time.time()
    report.timings["total"] = round(end_time - start_time, 6)
    report.exit_code = ret
    handler = find_accumulating_handler()
    if handler is not None:
        report.warnings = list(handler.log_records)
    if report_path is not None:
        try:
            write_run_report(report_path, report)
        except DataFileError as e:
            logging.getLogger().error(f"Error: {e}")
    logging.getLogger().info(f"time: {end_time - start_time:.2f}s")


def _fail(e: Exception) -> int:
    if isinstance(e, RobustFpcaError):
        logging.getLogger().error(f"Error: {e}")
        return e.exit_code
    if isinstance(e, OSError):
        logging.getLogger().error(f"Error: {e}")
        return DataFileError.exit_code
    logging.getLogger().exception(f"Error: {e}")
    return 1


def _add_sample_input(report: RunReport, path: str) -> None:
    report.add_input(path)
    report.add_input(sidecar_path(path))


def run_median(config: RunConfig, start_time: float) -> int:
    """Pointwise Fréchet median (or mean) trajectory of a sample file."""
    ret = 0
    report = _start("median", config)
    report_path = None
    try:
        section = config.median
        input_file = _required(section.input, "median.input")
        output = _required(section.output, "median.output")
        report_path = output + REPORT_SUFFIX
        try:
            kind = CenterKind(section.kind)
        except ValueError as e:
            raise ConfigError(f"unknown center kind '{section.kind}'", key="median.kind") from e

        sample = read_sample(input_file)
        _add_sample_input(report, input_file)
        solve_start = time.time()
        center = compute_center_trajectory(
            sample,
            kind,
            solver_config(config),
            parallel=config.solver.parallel,
            max_workers=config.solver.max_workers,
        )
        report.timings["solve"] = round(time.time() - solve_start, 6)
        report.add_outputs(write_center(output, sample.space, center))
        report.metadata.update({"subjects": sample.n, "space": sample.space.kind.value, "center_kind": kind.value})
        logging.getLogger().info(f"Wrote {kind.value} trajectory of {sample.n} subjects to {output}")
    except Exception as e:
        ret = _fail(e)
    finally:
        _finish(report, report_path, start_time, ret)
    return ret


def run_fpca(config: RunConfig, start_time: float) -> int:
    """Full pipeline: center, distance trajectories, covariance, spectrum, scores, outliers."""
    ret = 0
    report = _start("fpca", config)
    report_path = None
    try:
        section = config.fpca
        input_file = _required(section.input, "fpca.input")
        output_dir = _required(section.output_dir, "fpca.output_dir")
        create_folder(output_dir)
        report_path = os.path.join(output_dir, "report.json")
        try:
            method = FpcaMethod(section.method)
        except ValueError as e:
            raise ConfigError(f"unknown method '{section.method}'", key="fpca.method") from e

        sample = read_sample(input_file)
        _add_sample_input(report, input_file)
        fit_start = time.time()
        fit = fit_fpca(
            sample,
            method,
            psi=section.psi,
            J=section.components,
            fve=section.fve,
            config=solver_config(config),
            parallel=config.solver.parallel,
            max_workers=config.solver.max_workers,
        )
        report.timings["fit"] = round(time.time() - fit_start, 6)
        es = fit.eigensystem
        outliers = detect_outliers(fit.distances, fit.scores, section.outlier_threshold)

        outputs = [
            write_eigenfunctions(os.path.join(output_dir, "eigenfunctions.csv"), es),
            write_scores(os.path.join(output_dir, "scores.csv"), fit.scores),
            write_spectrum(os.path.join(output_dir, "spectrum.csv"), es),
            write_mean_function(os.path.join(output_dir, "mean.csv"), es.grid, es.mean_function),
            write_outliers(os.path.join(output_dir, "outliers.csv"), outliers),
        ]
        outputs += write_center(os.path.join(output_dir, "center.csv"), sample.space, fit.center)
        report.add_outputs(outputs)
        report.metadata.update({
            "method": method.value,
            "subjects": sample.n,
            "components": es.n_components,
            "explained": float(es.explained.sum()),
            "clipped_eigenvalues": es.clipped,
            "degenerate_pairs": fit.surface.degenerate_pairs,
            "degenerate": bool(es.degenerate or fit.surface.degenerate),
            "outliers": outliers.indices.tolist(),
        })
        if fit.cutoff is not None and method is FpcaMethod.WPU:
            report.metadata.update({
                "psi": section.psi,
                "q_hat": fit.cutoff.q_hat,
                "theoretical_breakdown": theoretical_breakdown(section.psi),
            })
        logging.getLogger().info(
            f"{method.value}: {es.n_components} components, {len(outliers.indices)} outliers, results in {output_dir}"
        )
    except Exception as e:
        ret = _fail(e)
    finally:
        _finish(report, report_path, start_time, ret)
    return ret


def run_simulate(config: RunConfig, start_time: float) -> int:
    """Generate a seeded network or sphere sample, optionally contaminated."""
    ret = 0
    report = _start("simulate", config)
    report_path = None
    try:
        section = config.simulate
        output = _required(section.output, "simulate.output")
        report_path = output + REPORT_SUFFIX
        report.metadata.update({"seed": section.seed, "kind": section.kind})

        if section.kind == "network":
            network = network_config_from_section(config.network)
            sample = gen_network_sample(network, section.seed)
            spec = contamination_from_section(config.contamination)
            sample, outliers = contaminate(sample, spec, section.seed, network=network)
            report.metadata.update({
                "contamination": spec.scheme if outliers.size else None,
                "contamination_order": "shift-then-scale",
                "outliers": outliers.tolist(),
            })
        elif section.kind == "sphere":
            sample = gen_sphere_sample(sphere_config_from_section(config.sphere), section.seed)
        else:
            raise ConfigError(f"unknown simulation kind '{section.kind}'", key="simulate.kind")

        report.add_outputs(write_sample(output, sample))
        logging.getLogger().info(f"Wrote {sample.n} simulated {section.kind} subjects to {output}")
    except Exception as e:
        ret = _fail(e)
    finally:
        _finish(report, report_path, start_time, ret)
    return ret


def run_breakdown(config: RunConfig, start_time: float) -> int:
    """Monte Carlo robustness curves over a grid of contamination levels."""
    ret = 0
    report = _start("breakdown", config)
    report_path = None
    try:
        section = config.breakdown
        output_dir = _required(section.output_dir, "breakdown.output_dir")
        create_folder(output_dir)
        report_path = os.path.join(output_dir, "report.json")
        experiment = breakdown_config_from_section(
            section, network_config_from_section(config.network), solver_config(config)
        )
        result = breakdown_experiment(experiment)

        references = pd.DataFrame({"time": result.grid.points})
        for method in experiment.methods:
            if method in result.references:
                references[method] = result.references[method]
        outputs = [
            write_curves(os.path.join(output_dir, "curves.csv"), result),
            write_bias(os.path.join(output_dir, "bias.csv"), result),
            write_table(os.path.join(output_dir, "references.csv"), references),
        ]
        report.add_outputs(outputs)
        report.metadata.update({
            "seed": experiment.seed,
            "contamination_order": "shift-then-scale",
            "theoretical_breakdown": theoretical_breakdown(experiment.psi),
            "failures": [vars(f) for f in result.failures],
        })
        logging.getLogger().info(
            f"breakdown: {len(result.metrics)} cells, {len(result.failures)} failures, results in {output_dir}"
        )
    except Exception as e:
        ret = _fail(e)
    finally:
        _finish(report, report_path, start_time, ret)
    return ret


def run_ingest(config: RunConfig, start_time: float) -> int:
    """Bin event records into one Laplacian trajectory per day."""
    ret = 0
    report = _start("ingest", config)
    report_path = None
    try:
        section = config.ingest
        events = _required(section.events, "ingest.events")
        output = _required(section.output, "ingest.output")
        report_path = output + REPORT_SUFFIX
        loader = EventRecordReader(
            events=events,
            nodes=_required(section.nodes, "ingest.nodes"),
            bin_minutes=section.bin_minutes,
            start_date=section.start_date,
            end_date=section.end_date,
            timestamp_column=section.timestamp_column,
            origin_column=section.origin_column,
            destination_column=section.destination_column,
        )
        sample = loader.load_sample()
        report.add_input(events)
        report.add_outputs(write_sample(output, sample))
        report.metadata.update(loader.summary())
        report.metadata["events"] = int(np.sum(np.diagonal(sample.subjects, axis1=-2, axis2=-1)) / 2)
        logging.getLogger().info(f"Successfully ingested {events} into {output}")
    except Exception as e:
        ret = _fail(e)
    finally:
        _finish(report, report_path, start_time, ret)
    return ret
