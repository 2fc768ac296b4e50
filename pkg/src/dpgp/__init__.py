"""Differentially private sparse variational Gaussian-process regression."""

from dpgp.data import RegressionDataset, load_csv, synth_gp_draw, synth_sinc
from dpgp.hyperparams import candidate_grid, select_hyperparameters, solve_budget
from dpgp.inference import NoiseModel, VariationalPosterior, dp_gp_inference, exact_posterior
from dpgp.kernels import InducingSet, KernelSpec, gram_matrices
from dpgp.mechanisms import PrivacyBudget, calibrate_analytic_gaussian
from dpgp.prediction import predict
from dpgp.sensitivity import kernel_norm_bound

__all__ = [
    "InducingSet",
    "KernelSpec",
    "NoiseModel",
    "PrivacyBudget",
    "RegressionDataset",
    "VariationalPosterior",
    "calibrate_analytic_gaussian",
    "candidate_grid",
    "dp_gp_inference",
    "exact_posterior",
    "gram_matrices",
    "kernel_norm_bound",
    "load_csv",
    "predict",
    "select_hyperparameters",
    "solve_budget",
    "synth_gp_draw",
    "synth_sinc",
]
