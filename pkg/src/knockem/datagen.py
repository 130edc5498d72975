"""Synthetic benchmark data: correlated Gaussian features, sparse logistic
outcomes, additive Gaussian measurement error, and calibrated MAR missingness.

All draws go through :mod:`knockem.rng` substreams so that a scenario is a
pure function of ``(config, replicate)`` and each component (features, errors,
mask, outcome) can be regenerated independently.
"""

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .exceptions import ConfigError, DataError

_PATTERN = np.array([3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0])


@dataclass(frozen=True)
class ArSpec:
    """First-order autoregressive covariance: entry (i, j) = sigma2 * rho^|i-j|."""

    sigma2: float
    rho: float
    p: int

    def validate(self):
        if self.sigma2 <= 0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")
        if not 0 <= self.rho < 1:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.p < 1:
            raise ConfigError(f"p must be >= 1, got {self.p}")


@dataclass(frozen=True)
class BetaSpec:
    """Sparse signed coefficient vector tiled in blocks of 7 with 3 nonzeros."""

    p: int
    s: int
    amplitude: float

    def validate(self):
        if self.s % 3 != 0:
            raise ConfigError(f"sparsity {self.s} must be divisible by 3")
        if 7 * self.s // 3 > self.p:
            raise ConfigError(
                f"pattern needs 7*s/3 = {7 * self.s // 3} slots but p = {self.p}"
            )


@dataclass(frozen=True)
class MissingSpec:
    """Which columns go missing, how often, and what drives the mechanism.

    ``depends_on`` selects the basis of the missingness logits: "W" uses the
    error-prone matrix (the mechanism the analysis assumes), "X" the error-free
    one (the stress-test variant).
    """

    pi_mis: float = 2.0 / 15.0
    p_mis: float = 0.15
    depends_on: str = "W"
    eta_range: float = 2.0

    def validate(self):
        if not 0 <= self.pi_mis <= 1:
            raise ConfigError(f"pi_mis must lie in [0, 1], got {self.pi_mis}")
        if self.pi_mis > 0 and not 0 < self.p_mis < 1:
            raise ConfigError(f"p_mis must lie in (0, 1), got {self.p_mis}")
        if self.depends_on not in ("W", "X"):
            raise ConfigError(f"depends_on must be 'W' or 'X', got {self.depends_on}")


@dataclass
class SimulatedDataset:
    """One synthetic dataset: truth plus everything the analyst would see."""

    X: np.ndarray
    W: np.ndarray
    R: np.ndarray
    Y: np.ndarray
    truth: np.ndarray  # sorted indices with beta_j != 0
    sigma_eps: np.ndarray
    beta: np.ndarray = field(repr=False, default=None)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]


def ar_cov(spec):
    """Dense AR covariance matrix for ``spec``."""
    spec.validate()
    idx = np.arange(spec.p)
    return spec.sigma2 * spec.rho ** np.abs(idx[:, None] - idx[None, :])


def make_beta(spec, rng, signs=None):
    """Tiled sparse coefficient vector with i.i.d. sign flips.

    ``signs`` overrides the Rademacher draw (used by tests and by the
    paired-dataset generator, which shares signs between datasets).
    """
    spec.validate()
    reps = spec.s // 3
    beta = np.zeros(spec.p)
    beta[: 7 * reps] = np.tile(_PATTERN, reps) * spec.amplitude
    if signs is None:
        signs = rng.choice([-1.0, 1.0], size=spec.p)
    return beta * signs


def sample_logistic_outcome(X, beta, beta0, rng):
    """Binary outcome with logit(P(Y=1)) = beta0 + X @ beta."""
    if X.shape[1] != beta.shape[0]:
        raise ConfigError(
            f"X has {X.shape[1]} columns but beta has {beta.shape[0]} entries"
        )
    prob = _sigmoid(beta0 + X @ beta)
    return (rng.random(X.shape[0]) < prob).astype(np.int8)


def add_measurement_error(X, sigma_eps, rng):
    """X plus rows of i.i.d. N(0, sigma_eps) noise.

    A zero covariance returns X unchanged (exactly). Uses an eigenvalue
    square root so PSD-singular matrices are accepted.
    """
    p = X.shape[1]
    sigma_eps = np.asarray(sigma_eps, dtype=float)
    if sigma_eps.shape != (p, p):
        raise ConfigError(f"sigma_eps must be {p}x{p}, got {sigma_eps.shape}")
    if not np.allclose(sigma_eps, sigma_eps.T, atol=1e-10):
        raise DataError("sigma_eps is not symmetric")
    if not sigma_eps.any():
        return X.copy()
    vals, vecs = np.linalg.eigh(sigma_eps)
    if vals.min() < -1e-8 * max(vals.max(), 1.0):
        raise DataError(f"sigma_eps is not PSD (min eigenvalue {vals.min():.3e})")
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return X + rng.standard_normal(X.shape) @ root.T


def _sigmoid(t):
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def calibrate_intercept(shift, target_observed, tol=1e-4):
    """Intercept c with mean(sigmoid(c + shift)) = target_observed by bisection.

    Exact for the realized sample; monotone in c, so plain bisection on a
    wide bracket suffices.
    """
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        m = _sigmoid(mid + shift).mean()
        if abs(m - target_observed) < tol:
            return mid
        if m < target_observed:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def sample_mar_mask(basis, spec, truth, rng, columns=None):
    """Missingness indicators (1 = observed) under a logistic MAR mechanism.

    Columns carrying missingness split between nulls and signals in
    proportion ``pi_mis``; each such column j gets slopes eta_j ~
    U[-eta_range, eta_range] on the other columns of ``basis`` and an
    intercept calibrated so its expected missing rate is ``p_mis``.
    ``columns`` pins the (null, signal) column sets instead of redrawing.
    """
    spec.validate()
    n, p = basis.shape
    R = np.ones((n, p), dtype=np.int8)
    if spec.pi_mis == 0:
        return R
    truth = np.asarray(sorted(truth), dtype=int)
    nulls = np.setdiff1d(np.arange(p), truth)
    if columns is None:
        n0 = int(round(spec.pi_mis * nulls.size))
        n1 = int(round(spec.pi_mis * truth.size))
        mis0 = rng.choice(nulls, size=n0, replace=False)
        mis1 = rng.choice(truth, size=n1, replace=False)
    else:
        mis0, mis1 = (np.asarray(c, dtype=int) for c in columns)
    for j in np.concatenate([mis0, mis1]):
        others = np.delete(basis, j, axis=1)
        eta = rng.uniform(-spec.eta_range, spec.eta_range, size=p - 1)
        shift = others @ eta
        eta0 = calibrate_intercept(shift, 1.0 - spec.p_mis)
        prob_obs = _sigmoid(eta0 + shift)
        R[:, j] = (rng.random(n) < prob_obs).astype(np.int8)
    return R


def generate_scenario(config, replicate=0):
    """Dataset (or pair, in the paired setting) for one replicate of ``config``.

    ``config`` is any object exposing the simulation fields (see
    :class:`knockem.harness.SimConfig`). Substreams are derived from
    ``config.seed`` and ``replicate`` so replicates are independent and
    individually reproducible.
    """
    config.validate()
    if config.setting == "simul":
        return _generate_pair(config, replicate)
    return _generate_single(config, replicate)


def _streams(config, replicate, dataset=0):
    base = (replicate, dataset)
    return {
        role: rngmod.substream(config.seed, *base, role)
        for role in (
            rngmod.FEATURES,
            rngmod.ERRORS,
            rngmod.MASK,
            rngmod.OUTCOME,
            rngmod.BETA,
        )
    }


def _generate_single(config, replicate, dataset=0, beta=None):
    streams = _streams(config, replicate, dataset)
    sig_x = ar_cov(ArSpec(config.sigma2_x, config.rho_x, config.p))
    chol_x = np.linalg.cholesky(sig_x)
    X = streams[rngmod.FEATURES].standard_normal((config.n, config.p)) @ chol_x.T

    if beta is None:
        beta = make_beta(
            BetaSpec(config.p, config.s, config.a_beta), streams[rngmod.BETA]
        )
    truth = np.flatnonzero(beta)

    Y = sample_logistic_outcome(X, beta, config.beta0, streams[rngmod.OUTCOME])

    if config.sigma2_eps > 0:
        sigma_eps = ar_cov(ArSpec(config.sigma2_eps, config.rho_eps, config.p))
    else:
        sigma_eps = np.zeros((config.p, config.p))
    W = add_measurement_error(X, sigma_eps, streams[rngmod.ERRORS])

    basis = W if config.mis_basis == "W" else X
    spec = MissingSpec(config.pi_mis, config.p_mis, config.mis_basis)
    R = sample_mar_mask(basis, spec, truth, streams[rngmod.MASK])

    return SimulatedDataset(X=X, W=W, R=R, Y=Y, truth=truth, sigma_eps=sigma_eps, beta=beta)


def _generate_pair(config, replicate):
    """Two independent datasets sharing the tiled signals.

    Each dataset adds two private signals of magnitudes 0.5 and 1 with
    their own sign flips; the shared block keeps identical signed values.
    """
    head = 7 * (config.s // 3)
    if head + 4 > config.p:
        raise ConfigError(f"paired setting needs p >= {head + 4}, got {config.p}")
    sign_rng = rngmod.substream(config.seed, replicate, 2, rngmod.BETA)
    eps = sign_rng.choice([-1.0, 1.0], size=config.p)
    eps1 = sign_rng.choice([-1.0, 1.0], size=2)
    eps2 = sign_rng.choice([-1.0, 1.0], size=2)
    omega = np.array([0.5, 1.0])

    base = np.zeros(config.p)
    base[:head] = np.tile(_PATTERN, config.s // 3)
    beta1 = base.copy()
    beta1[head : head + 2] = omega * eps1
    beta2 = base.copy()
    beta2[head + 2 : head + 4] = omega * eps2
    beta1 = beta1 * eps * config.a_beta
    beta2 = beta2 * eps * config.a_beta

    d1 = _generate_single(config, replicate, dataset=0, beta=beta1)
    d2 = _generate_single(config, replicate, dataset=1, beta=beta2)
    return d1, d2
