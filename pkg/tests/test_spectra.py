import numpy as np
import pytest

from robust_fpca.covariance import CovarianceSurface, SurfaceKind, classical_covariance
from robust_fpca.errors import DegenerateSpectrumError, InsufficientSampleError, ValidationError
from robust_fpca.metric_core import MedianSolverConfig
from robust_fpca.simgen import NetworkSimConfig, gen_network_sample
from robust_fpca.spectra import (
    FpcaMethod,
    ScoreMatrix,
    adjusted_rand,
    apply_sign_convention,
    cluster_scores,
    eigendecompose,
    explained_variance,
    fit_fpca,
    fpc_scores,
    mercer_reconstruct,
    select_components,
)
from robust_fpca.trajectory import CenterKind, DistanceKind, DistanceTrajectories, TimeGrid


def surface_from(grid, basis, eigenvalues):
    C = (basis.T * np.asarray(eigenvalues)) @ basis
    return CovarianceSurface(grid, 0.5 * (C + C.T), SurfaceKind.CLASSICAL)


def test_recovers_fourier_eigenpairs(grid, basis):
    es = eigendecompose(surface_from(grid, basis, [4.0, 2.0, 1.0]), J=3)
    assert np.allclose(es.eigenvalues, [4.0, 2.0, 1.0], atol=1e-10)
    for j in range(3):
        overlap = grid.inner(es.eigenfunctions[j], basis[j])
        assert abs(abs(overlap) - 1.0) < 1e-8, f"eigenfunction {j} not recovered"
    assert np.allclose(grid.inner(es.eigenfunctions[:, np.newaxis], es.eigenfunctions[np.newaxis]), np.eye(3),
                       atol=1e-10), "eigenfunctions are quadrature orthonormal"
    assert np.allclose(es.gaps, [2.0, 1.0, 1.0], atol=1e-10)


def test_default_component_count_reaches_fve(grid, basis):
    es = eigendecompose(surface_from(grid, basis, [4.0, 2.0, 1.0]))
    assert es.n_components == 3
    assert np.allclose(explained_variance(es), [4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0])
    assert eigendecompose(surface_from(grid, basis, [4.0, 2.0, 1.0]), fve=0.8).n_components == 2


def test_eigenfunctions_follow_sign_convention(grid, basis):
    es = eigendecompose(surface_from(grid, basis, [4.0, 2.0, 1.0]), J=3)
    assert np.array_equal(apply_sign_convention(es.eigenfunctions, grid), es.eigenfunctions)
    assert grid.inner(es.eigenfunctions[0], np.ones(len(grid))) > 0


def test_sign_convention_rules(grid):
    T = len(grid)
    flipped = apply_sign_convention(-np.ones((1, T)), grid)
    assert np.all(flipped > 0)
    odd = np.zeros((1, T))
    odd[0, 1], odd[0, -2] = -1.0, 1.0
    result = apply_sign_convention(odd, grid)
    assert result[0, 1] == 1.0 and result[0, -2] == -1.0, "first non-zero value is made positive"


def test_mercer_reconstruction(grid, basis):
    surface = surface_from(grid, basis, [4.0, 2.0, 1.0])
    es = eigendecompose(surface, J=3)
    assert np.allclose(mercer_reconstruct(es).values, surface.values, atol=1e-10)
    residual = surface.values - mercer_reconstruct(es, 2).values
    assert np.allclose(residual, np.outer(basis[2], basis[2]), atol=1e-8)
    assert np.array_equal(mercer_reconstruct(es, 0).values, np.zeros_like(surface.values))
    with pytest.raises(ValidationError):
        mercer_reconstruct(es, 4)


def test_zero_surface_is_degenerate(grid, warnings_handler):
    surface = CovarianceSurface(grid, np.zeros((len(grid), len(grid))), SurfaceKind.WPU)
    es = eigendecompose(surface)
    assert es.degenerate and es.n_components == 1
    with pytest.raises(DegenerateSpectrumError):
        explained_variance(es)
    assert any("identically zero" in w for w in warnings_handler.log_records)


def test_clipping_more_than_retained_is_a_warning(grid, basis, warnings_handler):
    es = eigendecompose(surface_from(grid, basis, [4.0, -1.0, -0.5]), J=1)
    assert np.allclose(es.eigenvalues, [4.0], atol=1e-10)
    assert any("eigenvalues clipped, 1 retained" in w for w in warnings_handler.log_records)


def test_component_count_out_of_range(grid, basis):
    surface = surface_from(grid, basis, [4.0, 2.0, 1.0])
    with pytest.raises(ValidationError):
        eigendecompose(surface, J=0)
    with pytest.raises(ValidationError):
        eigendecompose(surface, J=len(grid) + 1)


def test_select_components():
    assert select_components([0.5, 0.3, 0.2], 0.9) == 3
    assert select_components([0.5, 0.3, 0.2], 0.8) == 2
    assert select_components([0.95, 0.05], 0.9) == 1


def test_scores_are_centered(random_distances):
    D = random_distances(40)
    es = eigendecompose(classical_covariance(D), J=3, distances=D)
    scores = fpc_scores(D, es).scores
    assert scores.shape == (40, 3)
    assert np.allclose(scores.mean(axis=0), 0.0, atol=1e-12)


def test_scores_reject_grid_mismatch(random_distances, grid, basis):
    es = eigendecompose(surface_from(grid, basis, [4.0, 2.0, 1.0]), J=2)
    other = TimeGrid.uniform(len(grid) + 2)
    with pytest.raises(ValidationError):
        fpc_scores(DistanceTrajectories(other, np.ones((3, len(other)))), es)


def test_fit_fpca_methods(low_rank_sample):
    sample = low_rank_sample(30)
    for method in FpcaMethod:
        fit = fit_fpca(sample, method, J=3)
        assert fit.eigensystem.n_components == 3
        assert fit.scores.scores.shape == (30, 3)
        if method is FpcaMethod.DM:
            assert fit.center.kind is CenterKind.MEAN
            assert fit.distances.kind is DistanceKind.DM_SQUARED_DISTANCE
        else:
            assert fit.center.kind is CenterKind.MEDIAN
    assert fit_fpca(sample, "wpu", psi=0.5).cutoff.psi == 0.5
    assert fit_fpca(sample, "spatial-sign").cutoff.is_spatial_sign


def test_fit_fpca_needs_two_subjects(low_rank_sample):
    with pytest.raises(InsufficientSampleError):
        fit_fpca(low_rank_sample(1))


def test_fit_fpca_rejects_wrong_center_kind(low_rank_sample):
    sample = low_rank_sample(10)
    median_fit = fit_fpca(sample, "wpu", J=2)
    with pytest.raises(ValidationError):
        fit_fpca(sample, "dm", center=median_fit.center)
    again = fit_fpca(sample, "wpu", J=2, center=median_fit.center)
    assert np.array_equal(again.surface.values, median_fit.surface.values)


def test_cluster_scores_recovers_separated_groups():
    local = np.random.default_rng(3)
    centers = np.array([[-10.0, 0.0], [0.0, 10.0], [10.0, 0.0]])
    truth = np.repeat(np.arange(3), 20)
    scores = ScoreMatrix(centers[truth] + local.normal(0.0, 0.5, size=(60, 2)))
    labels, fitted = cluster_scores(scores, k=3, seed=1)
    assert adjusted_rand(truth, labels) == 1.0
    assert fitted.shape == (3, 2)
    with pytest.raises(ValidationError):
        cluster_scores(ScoreMatrix(np.zeros((2, 2))), k=3)


@pytest.mark.slow
def test_network_groups_are_recovered_from_two_scores():
    config = NetworkSimConfig(grid_points=20)
    solver = MedianSolverConfig(max_iter=5000)
    aris = []
    for seed in range(20):
        sample = gen_network_sample(config, seed=seed)
        fit = fit_fpca(sample, "wpu", J=2, config=solver)
        labels, _ = cluster_scores(fit.scores, k=3, seed=seed)
        aris.append(adjusted_rand(sample.labels, labels))
        centres = np.stack([fit.scores.scores[sample.labels == g, :2].mean(axis=0) for g in range(3)])
        gap = {(a, b): np.linalg.norm(centres[a] - centres[b]) for a, b in [(0, 1), (1, 2), (0, 2)]}
        # groups 0 and 1 have the closest peak times
        assert gap[(0, 1)] < gap[(1, 2)] and gap[(0, 1)] < gap[(0, 2)], f"seed {seed}: {gap}"
    assert np.mean(aris) >= 0.8, aris
