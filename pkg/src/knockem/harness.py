"""Replication engine and file-based screening.

``run_replicates`` drives the synthetic benchmarks: generate, impute,
construct knockoffs, compute statistics, filter, and score against the
generating truth, aggregating false-discovery proportion and power over
replicates. ``screen`` / ``screen_files`` run the same pipeline on user
data, with optional stability selection.
"""

import csv
import json
import logging
import time
import traceback
from dataclasses import dataclass, field, asdict

import numpy as np

from . import datagen, filter as kfilter, impute as imputemod, knockoff, stats
from . import rng as rngmod
from .errorcov import read_qc_csv, qc_cov, qc_paired_cov
from .exceptions import ConfigError, DataError
from .impute import ImputeConfig, ObservedData

logger = logging.getLogger(__name__)

STATISTICS = ("lasso", "lasso_order", "rf", "gds", "gmus", "corrected_lasso")
CORRECTION_AWARE = ("gmus", "corrected_lasso")
SETTINGS = (1, 2, 3, "simul")

MISSING_DROP_FRACTION = 0.2
IQR_FACTOR = 3.0


@dataclass
class SimConfig:
    """One synthetic benchmark configuration."""

    setting: object
    n: int
    p: int
    seed: int
    replicates: int = 50
    sigma2_x: float = 1.0
    rho_x: float = 0.5
    a_beta: float = 1.0
    beta0: float = -1.0
    sigma2_eps: float = 0.0
    rho_eps: float = 0.3
    pi_mis: float = 2.0 / 15.0
    p_mis: float = 0.15
    mis_basis: str = "W"
    s: int = None
    impute: ImputeConfig = field(default_factory=ImputeConfig)
    statistics: tuple = ("lasso",)
    q: float = 0.2
    c: int = 1
    knockoff_method: str = "equi"
    pool_gaussian: bool = False
    order_mode: str = None

    def __post_init__(self):
        if self.s is None:
            self.s = self.p // 4
        if isinstance(self.impute, dict):
            self.impute = ImputeConfig(**self.impute)
        if isinstance(self.statistics, str):
            self.statistics = (self.statistics,)
        self.statistics = tuple(self.statistics)
        if isinstance(self.setting, str) and self.setting.isdigit():
            self.setting = int(self.setting)

    def validate(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"setting must be one of {SETTINGS}, got {self.setting!r}")
        if self.setting == 1 and self.sigma2_eps != 0:
            raise ConfigError("setting 1 has no measurement error; sigma2_eps must be 0")
        if self.setting == 2 and self.pi_mis != 0:
            raise ConfigError("setting 2 has no missing data; pi_mis must be 0")
        if self.mis_basis not in ("W", "X"):
            raise ConfigError(f"mis_basis must be 'W' or 'X', got {self.mis_basis!r}")
        for stat in self.statistics:
            if stat not in STATISTICS:
                raise ConfigError(f"unknown statistic {stat!r}")
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if self.c not in (0, 1):
            raise ConfigError(f"c must be 0 or 1, got {self.c}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.seed is None:
            raise ConfigError("seed is required")
        self.impute.validate()
        datagen.BetaSpec(self.p, self.s, self.a_beta).validate()
        datagen.ArSpec(self.sigma2_x, self.rho_x, self.p).validate()
        if self.sigma2_eps > 0:
            datagen.ArSpec(self.sigma2_eps, self.rho_eps, self.p).validate()

    @staticmethod
    def from_dict(d):
        d = dict(d)
        if "impute" in d and isinstance(d["impute"], dict):
            d["impute"] = ImputeConfig(**d["impute"])
        return SimConfig(**d)

    @staticmethod
    def from_json(path):
        with open(path, encoding="utf-8") as fh:
            return SimConfig.from_dict(json.load(fh))

    def to_dict(self):
        d = asdict(self)
        d["statistics"] = list(self.statistics)
        return d


@dataclass
class RunSummary:
    statistic: str
    mean_fdp: float
    se_fdp: float
    mean_power: float
    se_power: float
    mean_selected: float
    replicates: int
    aborts: int
    wall_time: float = 0.0  # reported on stdout only; kept out of files

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "mean_fdp": self.mean_fdp,
            "se_fdp": self.se_fdp,
            "mean_power": self.mean_power,
            "se_power": self.se_power,
            "mean_selected": self.mean_selected,
            "replicates": self.replicates,
            "aborts": self.aborts,
        }


def fdp_power(selected, truth, p):
    """(false discovery proportion, power) of a selection against truth."""
    selected = set(int(j) for j in selected)
    truth = set(int(j) for j in truth)
    if not selected <= set(range(p)) or not truth <= set(range(p)):
        raise ConfigError("index sets exceed dimension")
    fdp = len(selected - truth) / max(1, len(selected))
    power = len(selected & truth) / len(truth) if truth else float("nan")
    return fdp, power


def _fit_and_sample(config, matrices, rep, ds, k, Wk):
    if config.pool_gaussian:
        model = knockoff.fit_gaussian(np.vstack(matrices))
    else:
        model = knockoff.fit_gaussian(Wk)
    plan = knockoff.build_plan(model, method=config.knockoff_method)
    rng = rngmod.substream(config.seed, rep, ds, rngmod.KNOCKOFF, k)
    return knockoff.sample_knockoffs(Wk, plan, rng)


def _compute_stat(name, design, sigma_eps, rng):
    if name == "lasso":
        return stats.stat_lasso_coef(design, rng=rng)
    if name == "lasso_order":
        return stats.stat_lasso_order(design)
    if name == "rf":
        return stats.stat_rf(design, rng=rng)
    if name == "gds":
        return stats.stat_gds(design, rng=rng)
    if name in CORRECTION_AWARE and sigma_eps is None:
        raise ConfigError(f"statistic {name!r} needs a measurement-error covariance")
    if name == "gmus":
        return stats.stat_gmus(design, sigma_eps, rng=rng)
    if name == "corrected_lasso":
        return stats.stat_corrected_lasso(design, sigma_eps, rng=rng)
    raise ConfigError(f"unknown statistic {name!r}")


def _replicate_pairs(config, dataset, rep, ds):
    """Per-imputation statistic pairs for one dataset of one replicate."""
    obs = ObservedData.masked(dataset.Y, dataset.W, dataset.R, dataset.sigma_eps)
    imp_rng = rngmod.substream(config.seed, rep, ds, rngmod.IMPUTE)
    completed = imputemod.impute_chained(obs, config.impute, imp_rng)
    pairs = {stat: [] for stat in config.statistics}
    for k, Wk in enumerate(completed.matrices):
        W_tilde = _fit_and_sample(config, completed.matrices, rep, ds, k, Wk)
        design = stats.augment(
            Wk, W_tilde, obs.y, stats.BINOMIAL,
            rngmod.substream(config.seed, rep, ds, rngmod.INTERLEAVE, k),
            label=f"rep={rep} ds={ds} k={k}",
        )
        for si, stat in enumerate(config.statistics):
            stat_rng = rngmod.substream(config.seed, rep, ds, rngmod.STAT, k, si)
            pairs[stat].append(_compute_stat(stat, design, obs.sigma_eps, stat_rng))
    return pairs


def run_one_replicate(config, rep):
    """One replicate end to end: {statistic: (fdp, power, n_selected)}."""
    scenario = datagen.generate_scenario(config, rep)
    if config.setting == "simul":
        datasets = list(scenario)
        truth = np.intersect1d(datasets[0].truth, datasets[1].truth)
    else:
        datasets = [scenario]
        truth = scenario.truth
    all_pairs = [_replicate_pairs(config, d, rep, ds) for ds, d in enumerate(datasets)]
    out = {}
    for stat in config.statistics:
        k_count = len(all_pairs[0][stat])
        rows = [[all_pairs[ds][stat][k] for ds in range(len(datasets))]
                for k in range(k_count)]
        tensor = kfilter.StatTensor.from_pairs(rows)
        report = kfilter.select(
            tensor, config.q, mode=config.order_mode, c=config.c, statistic=stat,
        )
        fdp, power = fdp_power(report.selected, truth, config.p)
        out[stat] = (fdp, power, int(report.selected.size))
    return out


def run_replicates(config, progress=False):
    """All replicates of a configuration, aggregated per statistic.

    A failed replicate is logged, dropped, and counted in ``aborts``;
    aggregation runs in replicate order so results do not depend on
    scheduling.
    """
    config.validate()
    t0 = time.perf_counter()
    results = {}
    aborts = 0
    for rep in range(config.replicates):
        try:
            res = run_one_replicate(config, rep)
        except Exception:
            logger.warning("replicate %d aborted:\n%s", rep, traceback.format_exc())
            aborts += 1
            continue
        results[rep] = res
        if progress:
            frag = ", ".join(
                f"{s}: fdp={v[0]:.2f} power={_fmt(v[1])}" for s, v in res.items()
            )
            print(f"  replicate {rep + 1}/{config.replicates}  {frag}", flush=True)
    wall = time.perf_counter() - t0
    summaries = {}
    done = sorted(results)
    for stat in config.statistics:
        fdps = np.array([results[r][stat][0] for r in done])
        powers = np.array([results[r][stat][1] for r in done])
        sizes = np.array([results[r][stat][2] for r in done])
        summaries[stat] = RunSummary(
            statistic=stat,
            mean_fdp=_mean(fdps),
            se_fdp=_se(fdps),
            mean_power=_mean(powers),
            se_power=_se(powers),
            mean_selected=_mean(sizes.astype(float)),
            replicates=len(done),
            aborts=aborts,
            wall_time=wall,
        )
    return summaries


def _mean(x):
    x = x[~np.isnan(x)]
    return float(x.mean()) if x.size else float("nan")


def _se(x):
    x = x[~np.isnan(x)]
    if x.size < 2:
        return float("nan")
    return float(x.std(ddof=1) / np.sqrt(x.size))


def _fmt(v):
    return "NA" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.2f}"


def render_summaries(config, summaries):
    """Aligned text table, one line per statistic."""
    lines = [
        f"setting={config.setting} n={config.n} p={config.p} "
        f"sigma2_eps={config.sigma2_eps} pi_mis={config.pi_mis} p_mis={config.p_mis} "
        f"impute={config.impute.method} include_outcome={config.impute.include_outcome} "
        f"q={config.q} c={config.c} replicates={config.replicates} seed={config.seed}",
        f"{'statistic':<16}{'FDP':>8}{'(se)':>8}{'power':>8}{'(se)':>8}{'|S|':>7}{'reps':>6}{'aborts':>7}",
    ]
    wall = None
    for stat, s in summaries.items():
        wall = s.wall_time
        lines.append(
            f"{stat:<16}{_fmt(s.mean_fdp):>8}{_fmt(s.se_fdp):>8}"
            f"{_fmt(s.mean_power):>8}{_fmt(s.se_power):>8}"
            f"{s.mean_selected:>7.1f}{s.replicates:>6}{s.aborts:>7}"
        )
    if wall is not None:
        lines.append(f"wall time: {wall:.1f} s")
    return "\n".join(lines)


def write_summary_json(path, config, summaries):
    payload = {
        "config": config.to_dict(),
        "summaries": {stat: s.to_dict() for stat, s in summaries.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_summary_csv(path, config, summaries):
    """One row for the configuration, one column group per statistic."""
    fields = ["setting", "n", "p", "p_mis", "pi_mis", "sigma2_eps", "a_beta",
              "impute_method", "include_outcome", "q", "c", "replicates", "seed"]
    row = [config.setting, config.n, config.p, config.p_mis, config.pi_mis,
           config.sigma2_eps, config.a_beta, config.impute.method,
           int(config.impute.include_outcome), config.q, config.c,
           config.replicates, config.seed]
    for stat, s in summaries.items():
        for suffix, val in (("fdp", s.mean_fdp), ("fdp_se", s.se_fdp),
                            ("power", s.mean_power), ("power_se", s.se_power)):
            fields.append(f"{stat}_{suffix}")
            row.append("NA" if np.isnan(val) else repr(round(val, 10)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        writer.writerow(row)


# ---------------------------------------------------------------------------
# file-based screening
# ---------------------------------------------------------------------------

@dataclass
class ScreenOptions:
    statistic: str = "lasso"
    q: float = 0.1
    c: int = 1
    impute: ImputeConfig = field(default_factory=lambda: ImputeConfig(method="chained_pmm"))
    knockoff_method: str = "equi"
    seed: int = 0
    stability: int = 0
    log_transform: bool = False
    truncate: bool = True
    order_mode: str = None

    def validate(self):
        if self.statistic not in STATISTICS:
            raise ConfigError(f"unknown statistic {self.statistic!r}")
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if self.c not in (0, 1):
            raise ConfigError(f"c must be 0 or 1, got {self.c}")
        if self.stability < 0:
            raise ConfigError("stability repetitions must be >= 0")
        self.impute.validate()


def preprocess(W, R, log_transform=False, truncate=True, feature_names=None):
    """Drop overly missing features, optionally log, truncate outliers.

    Features missing in more than MISSING_DROP_FRACTION of rows are
    removed (named in the log). Observed values are then optionally
    log-transformed and clipped to [Q1 - 3 IQR, Q3 + 3 IQR] computed per
    feature on observed values.
    """
    W = np.array(W, dtype=float)
    R = np.asarray(R)
    frac = (R == 0).mean(axis=0)
    keep = np.flatnonzero(frac <= MISSING_DROP_FRACTION)
    dropped = np.flatnonzero(frac > MISSING_DROP_FRACTION)
    if dropped.size:
        names = [feature_names[j] if feature_names else str(j) for j in dropped]
        logger.warning(
            "dropping %d feature(s) with more than %.0f%% missing: %s",
            dropped.size, 100 * MISSING_DROP_FRACTION, ", ".join(names),
        )
    W, R = W[:, keep], R[:, keep]
    if log_transform:
        obs_vals = W[R == 1]
        if (obs_vals <= 0).any():
            raise DataError("log transform requires positive observed values")
        W = np.where(R == 1, np.log(np.where(R == 1, W, 1.0)), W)
    if truncate:
        for j in range(W.shape[1]):
            obs = R[:, j] == 1
            vals = W[obs, j]
            q1, q3 = np.percentile(vals, [25, 75])
            iqr = q3 - q1
            W[obs, j] = np.clip(vals, q1 - IQR_FACTOR * iqr, q3 + IQR_FACTOR * iqr)
    return W, R, keep


def _family_for(y):
    return stats.BINOMIAL if set(np.unique(y)) <= {0.0, 1.0} else stats.GAUSSIAN


def _screen_once(outcomes, W, R, sigma_eps, opts, root):
    """One pass of the screening pipeline; ``root`` isolates RNG streams."""
    pairs = []
    for m, y in enumerate(outcomes):
        obs = ObservedData(y=y, W=W, R=R, sigma_eps=sigma_eps)
        imp_rng = rngmod.substream(opts.seed, root, m, rngmod.IMPUTE)
        completed = imputemod.impute_chained(obs, opts.impute, imp_rng)
        column = []
        for k, Wk in enumerate(completed.matrices):
            model = knockoff.fit_gaussian(Wk)
            plan = knockoff.build_plan(model, method=opts.knockoff_method)
            W_tilde = knockoff.sample_knockoffs(
                Wk, plan, rngmod.substream(opts.seed, root, m, rngmod.KNOCKOFF, k)
            )
            design = stats.augment(
                Wk, W_tilde, y, _family_for(y),
                rngmod.substream(opts.seed, root, m, rngmod.INTERLEAVE, k),
                label=f"screen root={root} m={m} k={k}",
            )
            stat_rng = rngmod.substream(opts.seed, root, m, rngmod.STAT, k)
            column.append(_compute_stat(opts.statistic, design, sigma_eps, stat_rng))
        pairs.append(column)
    k_count = len(pairs[0])
    rows = [[pairs[m][k] for m in range(len(outcomes))] for k in range(k_count)]
    tensor = kfilter.StatTensor.from_pairs(rows)
    return kfilter.select(
        tensor, opts.q, mode=opts.order_mode, c=opts.c, statistic=opts.statistic,
        tuning=[p.tuning for row in rows for p in row],
    )


def screen(outcomes, W, R, sigma_eps=None, opts=None):
    """In-memory screening; returns (SelectionReport, StabilityReport or None).

    ``outcomes`` is one outcome vector or a list of them (union-null
    selection across several outcomes).
    """
    opts = opts or ScreenOptions()
    opts.validate()
    if isinstance(outcomes, np.ndarray) and outcomes.ndim == 1:
        outcomes = [outcomes]
    outcomes = [np.asarray(y, dtype=float) for y in outcomes]
    if opts.statistic in CORRECTION_AWARE and sigma_eps is None:
        raise ConfigError(
            f"statistic {opts.statistic!r} needs an error covariance; provide QC data"
        )
    report = _screen_once(outcomes, W, R, sigma_eps, opts, root=0)
    stability = None
    if opts.stability > 0:
        def pipeline_run(root):
            return _screen_once(outcomes, W, R, sigma_eps, opts, root).selected

        counts = np.zeros(W.shape[1])
        for r in range(opts.stability):
            for j in pipeline_run(r + 1):
                counts[int(j)] += 1
        stability = kfilter.StabilityReport(
            frequencies=counts / opts.stability, repetitions=opts.stability
        )
    return report, stability


def read_data_csv(path, outcome_cols):
    """Data CSV: header row, named outcome column(s), NA marks missing
    feature cells. Rows with a missing outcome are dropped (logged)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path} has no data rows")
    missing_cols = [c for c in outcome_cols if c not in header]
    if missing_cols:
        raise DataError(f"outcome column(s) {missing_cols} not found in {path}")
    out_idx = [header.index(c) for c in outcome_cols]
    feat_idx = [i for i in range(len(header)) if i not in out_idx]
    ys, W, R, dropped = [[] for _ in out_idx], [], [], 0
    for row in rows:
        if any(row[i].strip() in ("NA", "") for i in out_idx):
            dropped += 1
            continue
        for slot, i in zip(ys, out_idx):
            slot.append(float(row[i]))
        vals, mask = [], []
        for i in feat_idx:
            tok = row[i].strip()
            if tok in ("NA", ""):
                vals.append(np.nan)
                mask.append(0)
            else:
                vals.append(float(tok))
                mask.append(1)
        W.append(vals)
        R.append(mask)
    if dropped:
        logger.warning("dropped %d row(s) with missing outcome", dropped)
    if not W:
        raise DataError("all rows had a missing outcome")
    return (
        [np.asarray(y) for y in ys],
        np.asarray(W, dtype=float),
        np.asarray(R, dtype=np.int8),
        [header[i] for i in feat_idx],
    )


def write_dataset_csv(path, outcomes, names, W, R, feature_names=None):
    """Write outcome column(s) plus features with NA at masked cells.

    Floats are written with ``repr`` so reading the file back reproduces
    the array bit for bit.
    """
    n, p = W.shape
    feature_names = feature_names or [f"x{j}" for j in range(p)]
    outcomes = [np.asarray(y) for y in (outcomes if isinstance(outcomes, list) else [outcomes])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + list(feature_names))
        for i in range(n):
            row = [repr(float(y[i])) for y in outcomes]
            for j in range(p):
                row.append(repr(float(W[i, j])) if R[i, j] == 1 else "NA")
            writer.writerow(row)


def screen_files(data_csv, outcome_cols, qc_csv=None, qc_paired=False,
                 qc_diagonal=False, opts=None):
    """CSV-driven screening: read, preprocess, estimate the error
    covariance from QC replicates when given, run the pipeline."""
    opts = opts or ScreenOptions()
    opts.validate()
    outcomes, W, R, feature_names = read_data_csv(data_csv, outcome_cols)
    W, R, keep = preprocess(
        W, R, log_transform=opts.log_transform, truncate=opts.truncate,
        feature_names=feature_names,
    )
    kept_names = [feature_names[j] for j in keep]
    sigma_eps = None
    if qc_csv is not None:
        qc = read_qc_csv(qc_csv)
        missing = [n for n in kept_names if n not in qc.feature_names]
        if missing:
            raise DataError(f"QC file lacks feature(s): {missing[:5]}...")
        cols = [qc.feature_names.index(n) for n in kept_names]
        sub = type(qc)(values=qc.values[:, cols],
                       feature_names=kept_names,
                       batch=qc.batch)
        est = qc_paired_cov(sub, diagonal=qc_diagonal) if qc_paired else qc_cov(sub, diagonal=qc_diagonal)
        sigma_eps = est.sigma_eps
    report, stability = screen(outcomes, W, R, sigma_eps, opts)
    return report, stability, kept_names
