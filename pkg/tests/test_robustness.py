import math

import numpy as np
import pytest

from robust_fpca.covariance import (
    CovarianceSurface,
    SurfaceKind,
    estimate_cutoff,
    pairwise_l2_distances,
    wpu_covariance,
)
from robust_fpca.errors import IllConditionedError, ValidationError
from robust_fpca.robustness import (
    BreakdownConfig,
    RobustnessMetrics,
    bias_and_mise,
    breakdown_experiment,
    detect_outliers,
    finite_difference_influence,
    gross_error_sensitivity,
    influence_function,
    mea,
    reference_eigenfunction,
    robustness_metrics,
    theoretical_breakdown,
)
from robust_fpca.metric_core import MedianSolverConfig
from robust_fpca.simgen import NetworkSimConfig
from robust_fpca.spectra import ScoreMatrix, eigendecompose
from robust_fpca.trajectory import CenterTrajectory, DistanceTrajectories, distance_trajectories

PATIENT = MedianSolverConfig(max_iter=5000)


def zero_center(sample):
    return CenterTrajectory(sample.grid, np.zeros((len(sample.grid), 1)))


def wpu_setup(sample, psi=0.84):
    center = zero_center(sample)
    V = distance_trajectories(sample, center)
    cutoff = estimate_cutoff(pairwise_l2_distances(V), psi)
    es = eigendecompose(wpu_covariance(V, cutoff), J=3, distances=V)
    return center, V, cutoff, es


def test_influence_matches_finite_difference(low_rank_sample, basis):
    sample = low_rank_sample(400, scales=(1.0, 0.6, 0.3), level=10.0)
    center, V, cutoff, es = wpu_setup(sample)
    z = (10.0 + np.array([1.0, -0.5, 0.25]) @ basis)[:, np.newaxis]
    for k in (1, 2, 3):
        result = influence_function(sample, center, es, z, k, cutoff)
        approx = finite_difference_influence(V, z[:, 0], es, k, cutoff)
        error = float(sample.grid.norm(result.if_values - approx))
        assert error <= 0.1 * result.if_norm, f"component {k}: error {error} vs norm {result.if_norm}"


def test_influence_is_orthogonal_to_its_eigenfunction(low_rank_sample, basis):
    sample = low_rank_sample(60, scales=(1.0, 0.6, 0.3), level=10.0)
    center, _, cutoff, es = wpu_setup(sample)
    z = (10.0 + np.array([-1.5, 0.5, 2.0]) @ basis)[:, np.newaxis]
    for k in (1, 2, 3):
        result = influence_function(sample, center, es, z, k, cutoff)
        assert abs(sample.grid.inner(result.if_values, es.eigenfunctions[k - 1])) < 1e-10
        assert 0.0 <= result.p1 <= 1.0


def test_influence_of_the_center_is_zero(low_rank_sample):
    sample = low_rank_sample(20, scales=(1.0, 0.6, 0.3), level=10.0)
    center, _, cutoff, es = wpu_setup(sample)
    result = influence_function(sample, center, es, center.centers, 1, cutoff)
    assert np.array_equal(result.if_values, np.zeros(len(sample.grid)))
    assert result.if_norm == 0.0 and result.p1 == 1.0


def test_influence_stays_within_gross_error_sensitivity(low_rank_sample, basis):
    sample = low_rank_sample(80, scales=(0.03, 0.02, 0.01), level=10.0)
    center, _, cutoff, es = wpu_setup(sample)
    for scale in (0.1, 1.0, 100.0):
        z = (10.0 + scale * np.array([1.0, 1.0, 1.0]) @ basis)[:, np.newaxis]
        result = influence_function(sample, center, es, z, 1, cutoff)
        bound = gross_error_sensitivity(es, 1, cutoff.q_hat, result.p1)
        assert result.if_norm <= bound, f"|IF| {result.if_norm} exceeds bound {bound}"


def test_influence_rejects_tied_eigenvalues(grid, basis, low_rank_sample):
    sample = low_rank_sample(10)
    C = basis.T @ basis
    es = eigendecompose(CovarianceSurface(grid, 0.5 * (C + C.T), SurfaceKind.WPU), J=3)
    center, _, cutoff, _ = wpu_setup(sample)
    with pytest.raises(IllConditionedError):
        influence_function(sample, center, es, sample.subjects[0], 1, cutoff)


def test_gross_error_sensitivity_example(grid, basis):
    C = (basis.T * np.array([4.0, 2.0, 1.0])) @ basis
    es = eigendecompose(CovarianceSurface(grid, 0.5 * (C + C.T), SurfaceKind.WPU), J=3)
    assert math.isclose(gross_error_sensitivity(es, 2, q=3.0, p1=0.5), 2.0, rel_tol=1e-9)
    assert math.isclose(gross_error_sensitivity(es, 1, q=0.0, p1=1.0), 0.5, rel_tol=1e-9)
    with pytest.raises(ValidationError):
        gross_error_sensitivity(es, 4, q=1.0, p1=0.5)
    with pytest.raises(ValidationError):
        gross_error_sensitivity(es, 1, q=1.0, p1=1.5)


def test_theoretical_breakdown():
    assert theoretical_breakdown(0.84) == 0.4
    assert theoretical_breakdown(1.0) == 0.0
    assert theoretical_breakdown(0.0) == 1.0
    assert math.isclose(theoretical_breakdown(0.5), math.sqrt(0.5))
    with pytest.raises(ValidationError):
        theoretical_breakdown(1.5)


def test_mea_and_mise_examples(grid, basis):
    phi = basis[0]
    assert mea([phi, -phi], phi, grid) == pytest.approx(0.0, abs=1e-7)
    theta = 0.3
    rotated = np.cos(theta) * basis[0] + np.sin(theta) * basis[1]
    assert mea([rotated], phi, grid) == pytest.approx(theta, abs=1e-10)
    assert mea([phi, rotated], phi, grid) == pytest.approx(theta / 2, abs=1e-7)

    bias, mise = bias_and_mise([phi, -phi], phi, grid)
    assert np.allclose(bias, 0.0) and mise == pytest.approx(0.0, abs=1e-20)
    _, mise = bias_and_mise([rotated], phi, grid)
    assert mise == pytest.approx(2.0 - 2.0 * np.cos(theta), rel=1e-9)


def test_metrics_reject_unnormalized_reference(grid, basis):
    with pytest.raises(ValidationError):
        mea([basis[0]], 2.0 * basis[0], grid)
    with pytest.raises(ValidationError):
        RobustnessMetrics(mea=2.0, bias=np.zeros(len(grid)), mise=0.0, replications=1)


def test_reference_eigenfunction_aligns_signs(grid, basis):
    reference = reference_eigenfunction([basis[0], -basis[0], basis[0]], grid)
    assert np.allclose(reference, basis[0], atol=1e-12)
    metrics = robustness_metrics([basis[0], -basis[0]], reference, grid, failures=1)
    assert metrics.replications == 2 and metrics.failures == 1
    assert metrics.mea == pytest.approx(0.0, abs=1e-7)


def test_detect_outliers(grid, rng):
    values = 1.0 + np.abs(rng.normal(0.0, 0.05, size=(30, len(grid))))
    values[7] = 10.0
    D = DistanceTrajectories(grid, values)
    report = detect_outliers(D)
    assert report.indices.tolist() == [7]
    assert report.robust_z[7] > 3.5

    scores = ScoreMatrix(rng.normal(size=(30, 2)))
    with_scores = detect_outliers(D, scores)
    assert 7 in with_scores.indices
    assert with_scores.score_radius.shape == (30,)
    with pytest.raises(ValidationError):
        detect_outliers(D, ScoreMatrix(np.zeros((5, 2))))


def test_detect_outliers_constant_norms(grid):
    D = DistanceTrajectories(grid, np.ones((10, len(grid))))
    assert detect_outliers(D).indices.size == 0


def tiny_breakdown(**overrides):
    options = dict(
        network=NetworkSimConfig(nodes=6, subjects_per_group=5, grid_points=8),
        levels=(0.0, 0.2),
        reps=2,
        methods=("wpu", "dm"),
        reference_reps=2,
        seed=11,
        solver=PATIENT,
    )
    options.update(overrides)
    return BreakdownConfig(**options)


def test_breakdown_experiment_is_deterministic():
    first = breakdown_experiment(tiny_breakdown())
    second = breakdown_experiment(tiny_breakdown(max_workers=3))
    assert set(first.metrics) == {(m, e) for m in ("wpu", "dm") for e in (0.0, 0.2)}
    for key, metrics in first.metrics.items():
        assert metrics.mea == second.metrics[key].mea, f"{key} differs between runs"
        assert np.array_equal(metrics.bias, second.metrics[key].bias)
        assert 0.0 <= metrics.mea <= math.pi / 2
        assert metrics.replications == 2
    assert not first.failures


def test_breakdown_config_validation():
    with pytest.raises(ValidationError):
        tiny_breakdown(reps=0)
    with pytest.raises(ValidationError):
        tiny_breakdown(methods=("pca",))
    with pytest.raises(ValidationError):
        tiny_breakdown(levels=(1.0,))


@pytest.mark.slow
def test_winsorized_estimator_resists_light_contamination():
    config = BreakdownConfig(
        network=NetworkSimConfig(nodes=10, subjects_per_group=30, grid_points=20),
        levels=(0.0, 0.05),
        reps=5,
        methods=("wpu", "dm"),
        seed=5,
        solver=PATIENT,
    )
    result = breakdown_experiment(config)
    assert result.metrics[("wpu", 0.05)].mea < result.metrics[("dm", 0.05)].mea
    assert result.metrics[("wpu", 0.0)].mea < 0.5


@pytest.mark.slow
def test_shift_scale_breakdown_curve():
    config = BreakdownConfig(
        network=NetworkSimConfig(subjects_per_group=100, grid_points=20),
        levels=(0.0, 0.05, 0.1, 0.2, 0.3, 0.35, 0.4),
        reps=3,
        methods=("wpu", "dm"),
        seed=2017,
        solver=PATIENT,
    )
    result = breakdown_experiment(config)
    assert not result.failures
    wpu = {level: result.metrics[("wpu", level)].mea for level in config.levels}
    dm_light = result.metrics[("dm", 0.05)].mea
    assert dm_light > wpu[0.2], f"dm at 5% ({dm_light:.3f}) should be worse than wpu at 20% ({wpu[0.2]:.3f})"
    assert wpu[0.35] < math.pi / 4, f"wpu broke down at 35%: {wpu}"
    assert all(m < math.pi / 4 for m in wpu.values()), wpu
    # flattening towards the breakdown point: the last step grows slower than the average up to 30%
    assert (wpu[0.4] - wpu[0.3]) / 0.1 < (wpu[0.3] - wpu[0.0]) / 0.3, wpu
