"""Robust functional PCA for time-varying objects in metric spaces."""

from .metric_core import frechet_mean, frechet_median, make_space
from .trajectory import TimeGrid, ObjectTrajectorySample, compute_center_trajectory, distance_trajectories
from .covariance import classical_covariance, estimate_cutoff, pairwise_l2_distances, wpu_covariance
from .spectra import eigendecompose, fit_fpca, fpc_scores
