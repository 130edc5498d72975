"""From statistic tensors to selections.

Per-feature p-values aggregate original-vs-knockoff comparisons across
imputations (and, for several outcomes, across experiments through the
sign of the product of differences); features are ranked by a magnitude
key and a sequential threshold scan along that ranking caps the
estimated false discovery proportion at the target level.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError

MAXMAX = "maxmax"
MAXPROD = "maxprod"
SUMPROD = "sumprod"

PVALUE_THRESHOLD = 0.5


@dataclass
class StatTensor:
    """Statistics indexed (imputation k, outcome m, feature j)."""

    z: np.ndarray
    z_tilde: np.ndarray

    def __post_init__(self):
        self.z = np.atleast_3d(np.asarray(self.z, dtype=float))
        self.z_tilde = np.atleast_3d(np.asarray(self.z_tilde, dtype=float))
        if self.z.shape != self.z_tilde.shape:
            raise ConfigError("z and z_tilde shapes differ")
        if not (np.isfinite(self.z).all() and np.isfinite(self.z_tilde).all()):
            raise ConfigError("statistic tensor has non-finite entries")

    @staticmethod
    def from_pairs(pairs):
        """Stack StatPairs: a flat list gives one outcome; a list of lists
        is indexed [imputation][outcome]."""
        if not pairs:
            raise ConfigError("no statistic pairs given")
        if not isinstance(pairs[0], (list, tuple)):
            pairs = [[p] for p in pairs]
        z = np.stack([[p.z for p in row] for row in pairs])
        zt = np.stack([[p.z_tilde for p in row] for row in pairs])
        return StatTensor(z=z, z_tilde=zt)

    @property
    def k(self):
        return self.z.shape[0]

    @property
    def m(self):
        return self.z.shape[1]

    @property
    def p(self):
        return self.z.shape[2]


@dataclass
class SelectionReport:
    p_values: np.ndarray
    order: np.ndarray
    k_hat_0: int
    k_hat_1: int
    selected_0: np.ndarray
    selected_1: np.ndarray
    fdp_estimate_0: float
    fdp_estimate_1: float
    q: float
    c: int
    statistic: str = None
    tuning: list = field(default_factory=list)

    @property
    def selected(self):
        return self.selected_1 if self.c == 1 else self.selected_0

    def to_dict(self):
        rank = np.empty(self.order.size, dtype=int)
        rank[self.order] = np.arange(1, self.order.size + 1)
        return {
            "q": self.q,
            "c": self.c,
            "statistic": self.statistic,
            "k_hat_0": int(self.k_hat_0),
            "k_hat_1": int(self.k_hat_1),
            "fdp_estimate_0": self.fdp_estimate_0,
            "fdp_estimate_1": self.fdp_estimate_1,
            "selected_0": [int(j) for j in self.selected_0],
            "selected_1": [int(j) for j in self.selected_1],
            "tuning": self.tuning,
            "features": [
                {
                    "index": int(j),
                    "p_value": float(self.p_values[j]),
                    "order_rank": int(rank[j]),
                    "selected_0": bool(j in set(self.selected_0.tolist())),
                    "selected_1": bool(j in set(self.selected_1.tolist())),
                }
                for j in range(self.p_values.size)
            ],
        }


@dataclass
class StabilityReport:
    frequencies: np.ndarray
    repetitions: int

    def to_dict(self):
        return {
            "repetitions": self.repetitions,
            "frequencies": [float(f) for f in self.frequencies],
        }


def pvalues(t):
    """Aggregated per-feature p-values.

    One outcome: fraction (with add-one smoothing) of imputations where
    the knockoff beats the original. Several outcomes: same, counting
    imputations whose product of differences is non-positive, which is the
    union-null comparison.
    """
    if t.m == 1:
        worse = (t.z[:, 0, :] <= t.z_tilde[:, 0, :]).sum(axis=0)
    else:
        prod = np.prod(t.z - t.z_tilde, axis=1)
        worse = (prod <= 0).sum(axis=0)
    return (1.0 + worse) / (1.0 + t.k)


def order_features(t, mode=None):
    """Feature indices sorted by decreasing magnitude key; ties keep
    ascending index order."""
    if mode is None:
        mode = MAXMAX if t.m == 1 else MAXPROD
    if mode == MAXMAX:
        if t.m != 1:
            raise ConfigError("maxmax ordering applies to a single outcome")
        key = np.maximum(np.abs(t.z), np.abs(t.z_tilde)).max(axis=(0, 1))
    elif mode in (MAXPROD, SUMPROD):
        if t.m < 2:
            raise ConfigError(f"{mode} ordering needs at least two outcomes")
        prod = np.prod(np.abs(t.z - t.z_tilde), axis=1)
        key = prod.max(axis=0) if mode == MAXPROD else prod.sum(axis=0)
    else:
        raise ConfigError(f"unknown ordering mode {mode!r}")
    return np.argsort(-key, kind="stable")


def seqstep(p_ordered, q, c):
    """Largest prefix of the ordered p-values whose estimated FDP is <= q.

    Returns (k_hat, fdp_curve) where the curve holds the running ratio
    (c + #{p > 1/2}) / (#{p <= 1/2} v 1) at every prefix length.
    """
    p_ordered = np.asarray(p_ordered, dtype=float)
    if not 0 < q < 1:
        raise ConfigError(f"q must lie in (0, 1), got {q}")
    if c not in (0, 1):
        raise ConfigError(f"offset c must be 0 or 1, got {c}")
    above = np.cumsum(p_ordered > PVALUE_THRESHOLD)
    below = np.cumsum(p_ordered <= PVALUE_THRESHOLD)
    curve = (c + above) / np.maximum(below, 1)
    hits = np.flatnonzero(curve <= q)
    k_hat = int(hits[-1] + 1) if hits.size else 0
    return k_hat, curve


def select(t, q, mode=None, c=1, statistic=None, tuning=None):
    """Full selection: p-values, ordering, and both offset variants of the
    sequential scan. Selected features are the below-threshold p-values in
    the qualifying prefix."""
    pv = pvalues(t)
    order = order_features(t, mode)
    p_ordered = pv[order]
    out = {}
    for offset in (0, 1):
        k_hat, curve = seqstep(p_ordered, q, offset)
        sel = order[:k_hat][p_ordered[:k_hat] <= PVALUE_THRESHOLD]
        fdp = float(curve[k_hat - 1]) if k_hat > 0 else 0.0
        out[offset] = (k_hat, np.sort(sel), fdp)
    return SelectionReport(
        p_values=pv,
        order=order,
        k_hat_0=out[0][0],
        k_hat_1=out[1][0],
        selected_0=out[0][1],
        selected_1=out[1][1],
        fdp_estimate_0=out[0][2],
        fdp_estimate_1=out[1][2],
        q=q,
        c=c,
        statistic=statistic,
        tuning=tuning or [],
    )


def stability_select(pipeline, p, repetitions, rng):
    """Selection frequency over repeated runs of a stochastic pipeline.

    ``pipeline`` is called with one fresh generator per repetition and
    returns the selected index set for that run.
    """
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")
    counts = np.zeros(p)
    for child in rng.spawn(repetitions):
        for j in pipeline(child):
            counts[int(j)] += 1
    return StabilityReport(frequencies=counts / repetitions, repetitions=repetitions)


def write_report_json(path, report, stability=None, extra=None):
    payload = report.to_dict()
    if stability is not None:
        payload["stability"] = stability.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path, report, stability=None, feature_names=None):
    """One row per feature: index, p, order rank, both selection flags, and
    the stability frequency ("NA" when no stability run was requested)."""
    rank = np.empty(report.order.size, dtype=int)
    rank[report.order] = np.arange(1, report.order.size + 1)
    sel0 = set(report.selected_0.tolist())
    sel1 = set(report.selected_1.tolist())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["index", "p_value", "order_rank", "selected_0", "selected_1", "frequency"]
        if feature_names is not None:
            header.insert(1, "feature")
        writer.writerow(header)
        for j in range(report.p_values.size):
            row = [
                j,
                repr(float(report.p_values[j])),
                int(rank[j]),
                int(j in sel0),
                int(j in sel1),
                "NA" if stability is None else repr(float(stability.frequencies[j])),
            ]
            if feature_names is not None:
                row.insert(1, feature_names[j])
            writer.writerow(row)
