"""Completion of incomplete feature matrices.

Simple column fills (half-minimum, mean) and chained-equation multiple
imputation with three per-column engines: stochastic linear regression,
predictive mean matching, and regression trees. Masked cells are the only
cells ever rewritten; observed values pass through untouched.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from .exceptions import ConfigError, DataError

logger = logging.getLogger(__name__)

SIMPLE_METHODS = ("half_min", "mean")
CHAINED_METHODS = ("chained_default", "chained_cart", "chained_pmm")

MIN_OBSERVED_FOR_FIT = 10
PMM_DONORS = 5
CART_MAX_DEPTH = 8
CART_MIN_LEAF = 10


@dataclass
class ObservedData:
    """What the analyst sees: outcome, masked feature matrix, mask, and
    (optionally) a known measurement-error covariance.

    ``W`` may hold anything at masked positions; consumers must go through
    the mask. :func:`ObservedData.masked` NaNs them out as a tripwire.
    """

    y: np.ndarray
    W: np.ndarray
    R: np.ndarray
    sigma_eps: np.ndarray = None

    @staticmethod
    def masked(y, W, R, sigma_eps=None):
        Wm = np.array(W, dtype=float)
        Wm[np.asarray(R) == 0] = np.nan
        return ObservedData(y=np.asarray(y), W=Wm, R=np.asarray(R), sigma_eps=sigma_eps)

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def p(self):
        return self.W.shape[1]


@dataclass
class ImputeConfig:
    method: str = "chained_default"
    k: int = 5
    include_outcome: bool = True
    sweeps: int = 10
    init: str = "draw"  # "draw" resamples the observed marginal; "mean" mean-fills

    def validate(self):
        if self.method not in SIMPLE_METHODS + CHAINED_METHODS:
            raise ConfigError(f"unknown imputation method {self.method!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.sweeps < 1:
            raise ConfigError(f"sweeps must be >= 1, got {self.sweeps}")
        if self.init not in ("draw", "mean"):
            raise ConfigError(f"init must be 'draw' or 'mean', got {self.init}")


@dataclass
class CompletedSet:
    """K completed copies of one incomplete matrix, plus the original mask."""

    matrices: list
    R: np.ndarray

    @property
    def k(self):
        return len(self.matrices)


def _observed_column(data, j):
    obs = data.W[data.R[:, j] == 1, j]
    if obs.size == 0:
        raise DataError(f"column {j} has no observed values")
    if not np.isfinite(obs).all():
        raise DataError(f"column {j} contains non-finite observed values")
    return obs


def impute_simple(data, method):
    """Single completion filling each masked cell from its column:
    half the observed minimum ("half_min") or the observed mean ("mean")."""
    if method not in SIMPLE_METHODS:
        raise ConfigError(f"impute_simple expects one of {SIMPLE_METHODS}, got {method!r}")
    W = np.array(data.W, dtype=float)
    for j in range(data.p):
        mis = data.R[:, j] == 0
        if not mis.any():
            continue
        obs = _observed_column(data, j)
        fill = 0.5 * obs.min() if method == "half_min" else obs.mean()
        W[mis, j] = fill
    return CompletedSet(matrices=[W], R=data.R)


class _LinearEngine:
    """Least-squares fit with intercept; predicts with additive Gaussian
    noise at the residual standard deviation."""

    stochastic = True

    def __init__(self, X, y):
        A = np.column_stack([np.ones(len(y)), X])
        coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
        self.coef = coef
        resid = y - A @ coef
        dof = max(len(y) - A.shape[1], 1)
        self.sd = float(np.sqrt(resid @ resid / dof))
        self._yhat_train = A @ coef
        self._y_train = y
        if self.sd <= 1e-10 * max(1.0, float(np.abs(y).max())):
            logger.warning("degenerate fit (zero residual variance); predictions are deterministic")
            self.sd = 0.0
            self.stochastic = False

    def mean(self, X):
        return np.column_stack([np.ones(X.shape[0]), X]) @ self.coef

    def predict(self, X, rng):
        mu = self.mean(X)
        if not self.stochastic:
            return mu
        return mu + rng.normal(0.0, self.sd, size=mu.shape)


class _PmmEngine(_LinearEngine):
    """Predictive mean matching: each masked cell takes the observed value of
    one of the PMM_DONORS donors closest in fitted mean, chosen uniformly."""

    def predict(self, X, rng):
        mu = self.mean(X)
        out = np.empty_like(mu)
        d = min(PMM_DONORS, self._yhat_train.size)
        for i, m in enumerate(mu):
            nearest = np.argsort(np.abs(self._yhat_train - m))[:d]
            out[i] = self._y_train[nearest[rng.integers(d)]]
        return out


class _CartEngine:
    """Depth-limited regression tree; predicts by drawing uniformly from the
    observed training values in the matching leaf."""

    def __init__(self, X, y, rng):
        self.tree = DecisionTreeRegressor(
            max_depth=CART_MAX_DEPTH,
            min_samples_leaf=CART_MIN_LEAF,
            random_state=int(rng.integers(2**31 - 1)),
        )
        self.tree.fit(X, y)
        self._leaf_values = {}
        for leaf, val in zip(self.tree.apply(X), y):
            self._leaf_values.setdefault(leaf, []).append(val)

    def predict(self, X, rng):
        leaves = self.tree.apply(X)
        out = np.empty(X.shape[0])
        for i, leaf in enumerate(leaves):
            vals = self._leaf_values[leaf]
            out[i] = vals[rng.integers(len(vals))]
        return out


def _fit_engine(method, X, y, rng):
    if method == "chained_default":
        return _LinearEngine(X, y)
    if method == "chained_pmm":
        return _PmmEngine(X, y)
    return _CartEngine(X, y, rng)


def engine_predict(model, X, rng):
    """Stochastic prediction from a fitted per-column engine."""
    return model.predict(np.atleast_2d(X), rng)


def impute_chained(data, cfg, rng):
    """K independent chained-equation completions.

    Masked cells start from draws of the column's observed empirical
    distribution (or its mean, with ``init='mean'``); sweeps then revisit
    missing-bearing columns in order of increasing missing fraction,
    refitting the engine on observed rows and redrawing the masked cells.
    Columns with fewer than MIN_OBSERVED_FOR_FIT observed rows fall back to
    mean fill and are skipped by the sweeps.
    """
    cfg.validate()
    if cfg.method in SIMPLE_METHODS:
        return impute_simple(data, cfg.method)

    R = data.R
    mis_frac = (R == 0).mean(axis=0)
    candidates = np.flatnonzero(mis_frac > 0)
    thin = [j for j in candidates if (R[:, j] == 1).sum() < MIN_OBSERVED_FOR_FIT]
    for j in thin:
        logger.warning(
            "column %d has %d observed rows (< %d); falling back to mean imputation",
            j, int((R[:, j] == 1).sum()), MIN_OBSERVED_FOR_FIT,
        )
    sweep_cols = sorted(set(candidates) - set(thin), key=lambda j: (mis_frac[j], j))

    chains = rng.spawn(cfg.k)
    matrices = []
    for chain in chains:
        Wk = _initialize(data, cfg, thin, chain)
        for _ in range(cfg.sweeps):
            for j in sweep_cols:
                obs = R[:, j] == 1
                preds = np.delete(Wk, j, axis=1)
                if cfg.include_outcome:
                    preds = np.column_stack([preds, data.y.astype(float)])
                model = _fit_engine(cfg.method, preds[obs], Wk[obs, j], chain)
                Wk[~obs, j] = model.predict(preds[~obs], chain)
        if not np.isfinite(Wk).all():
            raise DataError("imputation produced non-finite values")
        matrices.append(Wk)
    return CompletedSet(matrices=matrices, R=R)


def _initialize(data, cfg, thin_cols, rng):
    W = np.array(data.W, dtype=float)
    for j in range(data.p):
        mis = data.R[:, j] == 0
        if not mis.any():
            continue
        obs = _observed_column(data, j)
        if j in thin_cols or cfg.init == "mean":
            W[mis, j] = obs.mean()
        else:
            W[mis, j] = rng.choice(obs, size=int(mis.sum()), replace=True)
    return W
