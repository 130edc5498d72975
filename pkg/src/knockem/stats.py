"""Feature statistics on an augmented original/knockoff design.

Six statistics produce per-feature pairs (Z, Z~): absolute lasso
coefficients at a cross-validated penalty, lasso path entry order, random
forest impurity importance, the Dantzig-type selector, its
matrix-uncertainty variant whose constraint slack absorbs measurement
error, and an l1-constrained least-squares fit with the error covariance
subtracted from the Gram term.

Originals and knockoffs are presented to every solver in a seeded random
interleaving; the permutation is inverted before statistics are reported,
so solver column-order bias cannot leak into the original/knockoff
comparison.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor

from . import _dantzig, _lasso
from . import rng as rngmod
from .exceptions import ConfigError, SolverError

GAUSSIAN = "gaussian"
BINOMIAL = "binomial"

CV_FOLDS = 10
RF_TREES = 500
RF_MIN_LEAF = 5
GMUS_FP_TOL = 1e-6
GMUS_FP_MAX = 50
PGD_MAX_ITER = 2000
CORRECTED_D_GRID = 20

# CV grid plateau exit: once this many points passed the fold's running
# minimum with clearly rising loss, stop descending (tuning-only shortcut).
_EXIT_PATIENCE = 10
_EXIT_RATIO = 1.1


@dataclass
class AugmentedDesign:
    """Interleaved [originals | knockoffs] matrix with its outcome.

    ``perm`` maps interleaved position -> stacked index (originals 0..p-1,
    knockoffs p..2p-1): ``columns[:, k] = stacked[:, perm[k]]``.
    """

    columns: np.ndarray
    y: np.ndarray
    family: str
    perm: np.ndarray
    label: str = None
    prelim_seed: int = 0
    _quad: dict = field(default=None, repr=False)

    @property
    def p(self):
        return self.columns.shape[1] // 2

    @property
    def n(self):
        return self.columns.shape[0]


@dataclass
class StatPair:
    """Nonnegative per-feature statistics for originals (z) and knockoffs
    (z_tilde), plus the tuning choices that produced them."""

    z: np.ndarray
    z_tilde: np.ndarray
    statistic: str
    tuning: dict


def augment(W, W_tilde, y, family, rng, label=None):
    """Build an AugmentedDesign with a seeded random column interleaving."""
    if W.shape != W_tilde.shape:
        raise ConfigError("original and knockoff matrices must have equal shape")
    if family not in (GAUSSIAN, BINOMIAL):
        raise ConfigError(f"unknown family {family!r}")
    stacked = np.column_stack([W, W_tilde])
    perm = rng.permutation(stacked.shape[1])
    return AugmentedDesign(
        columns=np.ascontiguousarray(stacked[:, perm]),
        y=np.asarray(y, dtype=float),
        family=family,
        perm=perm,
        label=label,
        prelim_seed=int(rng.integers(2**63 - 1)),
    )


def _split_pair(design, values):
    """Undo the interleaving: design-order values -> (originals, knockoffs)."""
    stacked = np.empty_like(values)
    stacked[design.perm] = values
    p = design.p
    return stacked[:p], stacked[p:]


def _finish(design, values, statistic, tuning):
    z, zt = _split_pair(design, np.abs(values))
    if not (np.isfinite(z).all() and np.isfinite(zt).all()):
        raise SolverError(f"{statistic} produced non-finite statistics")
    return StatPair(z=z, z_tilde=zt, statistic=statistic, tuning=tuning)


def _fold_ids(n, folds, rng):
    ids = np.empty(n, dtype=int)
    order = rng.permutation(n)
    for f, chunk in enumerate(np.array_split(order, folds)):
        ids[chunk] = f
    return ids


# ---------------------------------------------------------------------------
# lasso
# ---------------------------------------------------------------------------

def lasso_fit(design, lam):
    """Penalized GLM coefficients (design column order, original scale)."""
    B, _, _ = _lasso.fit_path(design.columns, design.y, design.family, [lam])
    return B[0]


def _cv_lasso(design, cv_folds, rng):
    """Cross-validated deviance over the standard penalty grid.

    Returns (lambda_star, beta_star, intercept_star) from a final
    full-data path fit at the chosen penalty.
    """
    X, y = design.columns, design.y
    Xs, _, _ = _lasso.standardize(X)
    grid = _lasso.default_grid(Xs, y, design.family)
    ids = _fold_ids(X.shape[0], cv_folds, rng)
    dev = np.zeros(grid.size)
    for f in range(cv_folds):
        tr = ids != f
        B, b0, _ = _lasso.fit_path(X[tr], y[tr], design.family, grid)
        eta = X[~tr] @ B.T + b0
        for g in range(grid.size):
            dev[g] += _lasso.deviance(y[~tr], eta[:, g], design.family)
    best = int(np.argmin(dev))
    B, b0, _ = _lasso.fit_path(X, y, design.family, grid[: best + 1])
    return grid[best], B[best], b0[best]


def stat_lasso_coef(design, cv_folds=CV_FOLDS, rng=None):
    """|coefficient| at the cross-validated penalty."""
    rng = rng if rng is not None else np.random.default_rng(0)
    lam, beta, _ = _cv_lasso(design, cv_folds, rng)
    return _finish(
        design, beta, "lasso",
        {"lambda": float(lam), "interleave": design.label},
    )


def stat_lasso_order(design):
    """Largest grid penalty at which each column is active (0 if never)."""
    X, y = design.columns, design.y
    Xs, _, _ = _lasso.standardize(X)
    grid = _lasso.default_grid(Xs, y, design.family)
    B, _, _ = _lasso.fit_path(X, y, design.family, grid)
    active = np.abs(B) > 1e-9
    entry = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        hits = np.flatnonzero(active[:, j])
        if hits.size:
            entry[j] = grid[hits[0]]
    return _finish(design, entry, "lasso_order", {"grid_top": float(grid[0]), "interleave": design.label})


# ---------------------------------------------------------------------------
# random forest
# ---------------------------------------------------------------------------

def stat_rf(design, trees=RF_TREES, mtry=None, rng=None):
    """Mean-decrease-in-impurity importances from a bagged forest."""
    rng = rng if rng is not None else np.random.default_rng(0)
    X, y = design.columns, design.y
    if mtry is None:
        mtry = max(1, int(np.sqrt(X.shape[1])))
    seed = int(rng.integers(2**31 - 1))
    if np.unique(y).size < 2:
        imp = np.zeros(X.shape[1])
    elif design.family == BINOMIAL:
        forest = RandomForestClassifier(
            n_estimators=trees, max_features=mtry, min_samples_leaf=RF_MIN_LEAF,
            criterion="gini", random_state=seed,
        ).fit(X, y.astype(int))
        imp = forest.feature_importances_
    else:
        forest = RandomForestRegressor(
            n_estimators=trees, max_features=mtry, min_samples_leaf=RF_MIN_LEAF,
            criterion="squared_error", random_state=seed,
        ).fit(X, y)
        imp = forest.feature_importances_
    return _finish(design, imp, "rf", {"trees": trees, "mtry": mtry, "interleave": design.label})


# ---------------------------------------------------------------------------
# quadratic core shared by the selector-type statistics
# ---------------------------------------------------------------------------

def _working_data(design):
    """Centered working design/response for the quadratic programs.

    Gaussian: centered columns and outcome. Binomial: one working-response
    linearization around a cross-validated preliminary lasso fit, computed
    once per design and cached. Returns dict with A, z, G = A'A/n, c = A'z/n.
    """
    if design._quad is not None:
        return design._quad
    X, y = design.columns, design.y
    n = X.shape[0]
    if design.family == GAUSSIAN:
        z = y - y.mean()
    else:
        prelim_rng = rngmod.substream(design.prelim_seed, 101)
        _, beta, b0 = _cv_lasso(design, CV_FOLDS, prelim_rng)
        eta = b0 + X @ beta
        mu = np.clip(_lasso._sigmoid(eta), _lasso.MU_EPS, 1 - _lasso.MU_EPS)
        z = eta + (y - mu) / (mu * (1.0 - mu))
        z = z - z.mean()
    A = X - X.mean(axis=0)
    design._quad = {
        "A": A,
        "z": z,
        "G": A.T @ A / n,
        "c": A.T @ z / n,
    }
    return design._quad


def _selector_grid(c):
    top = np.max(np.abs(c))
    if top <= 0:
        top = 1e-3
    return top * np.logspace(0.0, np.log10(_lasso.GRID_MIN_RATIO), _lasso.GRID_SIZE)


def _gmus_fixed_point(G, c, lam, delta, rows, t0=0.0, trace=None):
    """Iterate t -> ||b(lam + delta * t)||_1 to its fixed point."""
    t = t0
    b = None
    for _ in range(GMUS_FP_MAX):
        b, rows = _dantzig.solve(G, c, lam + delta * t, rows)
        t_new = float(np.abs(b).sum())
        if trace is not None:
            trace.append(t_new)
        if abs(t_new - t) < GMUS_FP_TOL:
            return b, rows, t_new, True
        t = t_new
    return b, rows, t, False


def _cv_selector(design, delta, cv_folds, rng):
    """Cross-validated penalty for the Dantzig-type programs.

    ``delta`` = 0 is the plain selector; positive values add the
    norm-proportional slack and run the fixed point at every grid
    point (warm-started down the grid).
    """
    quad = _working_data(design)
    grid = _selector_grid(quad["c"])
    A, z = quad["A"], quad["z"]
    n = A.shape[0]
    ids = _fold_ids(n, cv_folds, rng)
    dev = np.zeros(grid.size)
    counts = np.zeros(grid.size)
    for f in range(cv_folds):
        tr = ids != f
        At, zt = A[tr], z[tr]
        Gf = At.T @ At / At.shape[0]
        cf = At.T @ zt / At.shape[0]
        Ah, zh = A[~tr], z[~tr]
        rows = None
        t_warm = 0.0
        best = np.inf
        best_at = 0
        last = np.inf
        for g, lam in enumerate(grid):
            if delta > 0:
                b, rows, t_warm, ok = _gmus_fixed_point(Gf, cf, lam, delta, rows, t_warm)
                if not ok:
                    b, rows, t_warm, _ = _gmus_fixed_point(Gf, cf, lam, delta, None, 0.0)
            else:
                b, rows = _dantzig.solve(Gf, cf, lam, rows)
            r = zh - Ah @ b
            last = float(r @ r)
            dev[g] += last
            counts[g] += 1
            if last < best:
                best, best_at = last, g
            if g - best_at >= _EXIT_PATIENCE and last > _EXIT_RATIO * best:
                dev[g + 1 :] += last  # plateau fill; cannot win the argmin
                counts[g + 1 :] += 1
                break
    return grid[int(np.argmin(dev))]


def stat_gds(design, lambda_grid=None, cv_folds=CV_FOLDS, rng=None):
    """Dantzig-type selector: minimal l1 norm subject to a sup-norm score
    bound at a cross-validated level."""
    rng = rng if rng is not None else np.random.default_rng(0)
    quad = _working_data(design)
    if lambda_grid is not None:
        lam = float(np.min(lambda_grid))
    else:
        lam = float(_cv_selector(design, 0.0, cv_folds, rng))
    b, _ = _dantzig.solve(quad["G"], quad["c"], lam)
    return _finish(design, b, "gds", {"lambda": lam, "interleave": design.label})


def default_gmus_delta(sigma_eps, p2, n):
    """Norm-slack rate: largest per-column error SD times sqrt(2 log(2p)/n)."""
    max_sd = float(np.sqrt(np.clip(np.max(np.diag(sigma_eps)), 0.0, None)))
    return max_sd * np.sqrt(2.0 * np.log(p2) / n)


def stat_gmus(design, sigma_eps, delta=None, lambda_grid=None, cv_folds=CV_FOLDS, rng=None):
    """Matrix-uncertainty selector: the score bound relaxes with the
    solution's own l1 norm, absorbing additive measurement error.

    The final fit runs the fixed point from t = 0 and checks its iterate
    trace: the even/odd subsequences must be monotone (they bracket the
    fixed point) and the sequence must converge.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sigma_eps = _as_sigma(sigma_eps)
    quad = _working_data(design)
    if delta is None:
        delta = default_gmus_delta(sigma_eps, design.columns.shape[1], design.n)
    if delta < 0:
        raise ConfigError(f"delta must be nonnegative, got {delta}")
    if lambda_grid is not None:
        lam = float(np.min(lambda_grid))
    else:
        lam = float(_cv_selector(design, delta, cv_folds, rng))
    trace = []
    b, _, t_star, ok = _gmus_fixed_point(quad["G"], quad["c"], lam, delta, None, 0.0, trace)
    if not ok:
        raise SolverError(
            f"matrix-uncertainty fixed point did not converge in {GMUS_FP_MAX} iterations",
            diagnostics={"trace": trace, "lambda": lam, "delta": delta},
        )
    _check_fp_trace(trace)
    return _finish(
        design, b, "gmus",
        {"lambda": lam, "delta": float(delta), "fp_iterations": len(trace),
         "interleave": design.label},
    )


def _check_fp_trace(trace, tol=1e-9):
    evens = trace[0::2]
    odds = trace[1::2]
    for seq, name in ((evens, "even"), (odds, "odd")):
        diffs = np.diff(seq)
        if diffs.size and (np.abs(diffs) > tol).any():
            signs = np.sign(diffs[np.abs(diffs) > tol])
            if np.unique(signs).size > 1:
                raise SolverError(f"fixed-point {name} iterates are not monotone")
    if trace and not np.isfinite(trace).all():
        raise SolverError("fixed-point iterates diverged")


def _as_sigma(sigma_eps):
    sig = getattr(sigma_eps, "sigma_eps", sigma_eps)
    return np.asarray(sig, dtype=float)


# ---------------------------------------------------------------------------
# corrected lasso
# ---------------------------------------------------------------------------

@njit(cache=True)
def _project_l1(v, d):
    """Euclidean projection onto the l1 ball of radius d (sort-based)."""
    if d <= 0.0:
        return np.zeros_like(v)
    a = np.abs(v)
    if a.sum() <= d:
        return v.copy()
    u = np.sort(a)[::-1]
    css = 0.0
    rho = -1
    theta = 0.0
    for j in range(u.shape[0]):
        css += u[j]
        t = (css - d) / (j + 1)
        if u[j] > t:
            rho = j
            theta = t
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        s = a[i] - theta
        if s <= 0.0:
            out[i] = 0.0
        elif v[i] >= 0.0:
            out[i] = s
        else:
            out[i] = -s
    return out


@njit(cache=True)
def _pgd_l1(Q, bvec, d, beta0, lipschitz, max_iter, tol):
    """Projected gradient on f(b) = b'Qb - 2 bvec'b over the l1 ball.

    Backtracks from an optimistic step toward the 1/L safe step, keeping
    the objective monotone. Returns (beta, objective, converged, ok)
    where ok=False flags a non-finite objective (radius rejected).
    """
    beta = _project_l1(beta0, d)
    q = Q @ beta
    f = beta @ q - 2.0 * (bvec @ beta)
    step0 = 4.0 / lipschitz
    for _ in range(max_iter):
        g = 2.0 * (q - bvec)
        step = step0
        cand = _project_l1(beta - step * g, d)
        qc = Q @ cand
        fc = cand @ qc - 2.0 * (bvec @ cand)
        while fc > f - 1e-12 and step > 0.9 / lipschitz:
            step *= 0.5
            cand = _project_l1(beta - step * g, d)
            qc = Q @ cand
            fc = cand @ qc - 2.0 * (bvec @ cand)
        if not np.isfinite(fc):
            return beta, f, False, False
        move = np.max(np.abs(cand - beta))
        beta = cand
        q = qc
        f = fc
        if move < tol * (1.0 + np.max(np.abs(beta))):
            return beta, f, True, True
    return beta, f, False, True


def augmented_error_cov(design, sigma_eps):
    """Error covariance lifted to design-column order.

    It sits on original-feature coordinates only; knockoff columns are
    sampled, not measured, so their block is zero.
    """
    sigma_eps = _as_sigma(sigma_eps)
    p = design.p
    sig_aug = np.zeros((2 * p, 2 * p))
    orig_pos = np.flatnonzero(design.perm < p)
    orig_idx = design.perm[orig_pos]
    sig_aug[np.ix_(orig_pos, orig_pos)] = sigma_eps[np.ix_(orig_idx, orig_idx)]
    return sig_aug


def corrected_loss_parts(design, sigma_eps):
    """Q = A'A/n - Sigma_aug and b = A'z/n for the corrected quadratic loss."""
    quad = _working_data(design)
    Q = quad["G"] - augmented_error_cov(design, sigma_eps)
    return Q, quad["c"], quad["A"], quad["z"]


def corrected_objective(Q, bvec, beta):
    return float(beta @ Q @ beta - 2.0 * bvec @ beta)


def stat_corrected_lasso(design, sigma_eps, d_grid=None, cv_folds=CV_FOLDS, rng=None):
    """l1-ball-constrained corrected least squares by projected gradient.

    The radius grid spans the cross-validated lasso solution's norm; the
    radius is chosen by cross-validating the corrected loss on held-out
    rows. Radii whose solve goes non-finite are rejected.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    sig_aug = augmented_error_cov(design, sigma_eps)
    Q, bvec, A, z = corrected_loss_parts(design, sigma_eps)
    n = A.shape[0]
    if d_grid is None:
        _, beta_ref, _ = _cv_lasso(design, cv_folds, rng)
        ref = max(float(np.abs(beta_ref).sum()), 1e-3)
        d_grid = ref * np.geomspace(0.1, 2.0, CORRECTED_D_GRID)
    d_grid = np.sort(np.asarray(d_grid, dtype=float))

    ids = _fold_ids(n, cv_folds, rng)
    scores = np.zeros(d_grid.size)
    usable = np.ones(d_grid.size, dtype=bool)
    for f in range(cv_folds):
        tr = ids != f
        At, zt = A[tr], z[tr]
        Qf = At.T @ At / At.shape[0] - sig_aug
        bf = At.T @ zt / At.shape[0]
        lipf = 2.0 * max(np.max(np.abs(np.linalg.eigvalsh(Qf))), 1e-12)
        Ah, zh = A[~tr], z[~tr]
        Qh = Ah.T @ Ah / Ah.shape[0] - sig_aug
        bh = Ah.T @ zh / Ah.shape[0]
        beta = np.zeros(A.shape[1])
        for g, d in enumerate(d_grid):
            beta, _, _, ok = _pgd_l1(Qf, bf, d, beta, lipf, PGD_MAX_ITER, 1e-9)
            if not ok:
                usable[g] = False
                continue
            scores[g] += corrected_objective(Qh, bh, beta)
    if not usable.any():
        raise SolverError("all corrected-lasso radii rejected")
    scores[~usable] = np.inf
    d_star = float(d_grid[int(np.argmin(scores))])
    lip = 2.0 * max(np.max(np.abs(np.linalg.eigvalsh(Q))), 1e-12)
    beta, fval, _, ok = _pgd_l1(Q, bvec, d_star, np.zeros(A.shape[1]), lip, PGD_MAX_ITER, 1e-9)
    if not ok or not np.isfinite(fval):
        raise SolverError("corrected-lasso solve diverged at the selected radius")
    return _finish(
        design, beta, "corrected_lasso",
        {"d": d_star, "interleave": design.label},
    )
