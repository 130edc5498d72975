"""Second-order Gaussian knockoffs.

Fits a mean/covariance model to a completed matrix, solves for the
decorrelation diagonal ``s`` (equicorrelated, or blockwise with a global
feasibility rescale), and samples knockoff rows from the conditional
Gaussian. The joint covariance of ``[W, W~]`` then matches
``[[S, S - diag(s)], [S - diag(s), S]]`` up to sampling error.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import SolverError

logger = logging.getLogger(__name__)

EIG_TOL = 1e-8
VARIANCE_FLOOR = 1e-12


@dataclass
class GaussianModel:
    mu: np.ndarray
    sigma: np.ndarray
    chol: np.ndarray


@dataclass
class KnockoffPlan:
    """Everything needed to sample knockoffs for matrices of one model:
    the fitted Gaussian, the ``s`` diagonal, the conditional-mean map
    ``sigma^{-1} diag(s)`` and a square root of the conditional covariance."""

    model: GaussianModel
    s: np.ndarray
    cond_mean_map: np.ndarray
    cond_cov_chol: np.ndarray


def shrinkage_weight(Z):
    """Analytic off-diagonal shrinkage intensity toward the diagonal target
    (ratio of summed sampling variances of the off-diagonal covariances to
    their summed squares), clipped to [0, 1]. ``Z`` must be centered."""
    n = Z.shape[0]
    S = Z.T @ Z / (n - 1)
    # sum_k (z_ki z_kj - mean_k)^2 = sum_k (z_ki z_kj)^2 - n mean_k^2 with mean_k = (n-1)/n S_ij
    V = n / (n - 1) ** 3 * ((Z**2).T @ (Z**2) - (n - 1) ** 2 / n * S**2)
    off = ~np.eye(S.shape[0], dtype=bool)
    denom = (S[off] ** 2).sum()
    if denom <= 0:
        return 1.0
    lam = V[off].sum() / denom
    return float(np.clip(lam, 0.0, 1.0))


def fit_gaussian(Wk, shrink=None):
    """Column means plus a diagonally shrunk covariance with its Cholesky.

    ``shrink`` in [0, 1] interpolates between the empirical covariance and
    its diagonal; by default 0.01 when n > 4p, else the analytic weight.
    Constant columns get a variance floor and raise the shrink floor.
    """
    n, p = Wk.shape
    if n < 2:
        raise SolverError("need at least two rows to fit a Gaussian model")
    mu = Wk.mean(axis=0)
    Z = Wk - mu
    emp = Z.T @ Z / (n - 1)
    var = np.diag(emp).copy()
    degenerate = var < VARIANCE_FLOOR * max(var.max(), 1.0)
    if degenerate.any():
        logger.warning("%d constant column(s); flooring variances and raising shrink", int(degenerate.sum()))
        var[degenerate] = VARIANCE_FLOOR * max(var.max(), 1.0)
    if shrink is None:
        shrink = 0.01 if n > 4 * p else shrinkage_weight(Z)
    if degenerate.any():
        shrink = max(shrink, 0.1)
    sigma = (1.0 - shrink) * emp + shrink * np.diag(np.diag(emp))
    np.fill_diagonal(sigma, var)
    sigma = 0.5 * (sigma + sigma.T)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        sigma = sigma + 10 * EIG_TOL * np.mean(var) * np.eye(p)
        chol = np.linalg.cholesky(sigma)
    return GaussianModel(mu=mu, sigma=sigma, chol=chol)


def _to_correlation(sigma):
    sd = np.sqrt(np.diag(sigma))
    return sigma / np.outer(sd, sd), sd


def solve_s_equi(sigma):
    """Equicorrelated ``s``: min(2 * lambda_min(corr), 1) on the correlation
    scale, rescaled by the variances."""
    corr, sd = _to_correlation(sigma)
    lam_min = float(np.linalg.eigvalsh(corr)[0])
    if lam_min <= 0:
        raise SolverError(f"covariance is not positive definite (lambda_min {lam_min:.3e})")
    s_corr = min(2.0 * lam_min, 1.0)
    return s_corr * sd**2


def _schur_min_eig(sigma, s):
    """Minimum eigenvalue of 2 diag(s) - diag(s) sigma^{-1} diag(s)."""
    SinvS = np.linalg.solve(sigma, np.diag(s))
    C = 2.0 * np.diag(s) - np.diag(s) @ SinvS
    return float(np.linalg.eigvalsh(0.5 * (C + C.T))[0])


def solve_s_block(sigma, block_size=10):
    """Blockwise equicorrelated ``s``.

    Solves the equicorrelated problem on each contiguous diagonal block of
    the correlation matrix, then rescales the stacked vector by the largest
    gamma in (0, 1] keeping the full conditional covariance PSD (bisection,
    30 rounds, eigenvalue tolerance EIG_TOL).
    """
    p = sigma.shape[0]
    corr, sd = _to_correlation(sigma)
    s_corr = np.empty(p)
    for start in range(0, p, block_size):
        stop = min(start + block_size, p)
        block = corr[start:stop, start:stop]
        lam_min = float(np.linalg.eigvalsh(block)[0])
        if lam_min <= 0:
            raise SolverError(f"correlation block [{start}:{stop}] is not positive definite")
        s_corr[start:stop] = min(2.0 * lam_min, 1.0)
    s = s_corr * sd**2
    if _schur_min_eig(sigma, s) >= -EIG_TOL:
        return s
    lo, hi = 0.0, 1.0
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if _schur_min_eig(sigma, mid * s) >= -EIG_TOL:
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise SolverError("no feasible rescaling of blockwise s")
    return lo * s


def build_plan(model, method="equi", block_size=10):
    """Knockoff plan for a fitted model; ``method`` picks the s solver."""
    if method == "equi":
        s = solve_s_equi(model.sigma)
    elif method == "block":
        s = solve_s_block(model.sigma, block_size=block_size)
    else:
        raise SolverError(f"unknown s solver {method!r}")
    return plan_from_s(model, s)


def plan_from_s(model, s):
    s = np.asarray(s, dtype=float)
    sigma = model.sigma
    cond_mean_map = np.linalg.solve(sigma, np.diag(s))
    C = 2.0 * np.diag(s) - np.diag(s) @ cond_mean_map
    C = 0.5 * (C + C.T)
    try:
        chol = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(C)
        if vals.min() < -EIG_TOL:
            raise SolverError(
                f"conditional covariance is not PSD (min eigenvalue {vals.min():.3e})"
            )
        chol = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return KnockoffPlan(model=model, s=s, cond_mean_map=cond_mean_map, cond_cov_chol=chol)


def sample_knockoffs(Wk, plan, rng):
    """Row-wise conditional Gaussian knockoff sample for ``Wk``."""
    if Wk.shape[1] != plan.s.shape[0]:
        raise SolverError(
            f"plan dimension {plan.s.shape[0]} does not match matrix with {Wk.shape[1]} columns"
        )
    centered = Wk - plan.model.mu
    cond_mean = Wk - centered @ plan.cond_mean_map
    noise = rng.standard_normal(Wk.shape) @ plan.cond_cov_chol.T
    return cond_mean + noise
