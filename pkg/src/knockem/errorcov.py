"""Measurement-error covariance from quality-control replicates.

Pooled QC samples measured repeatedly estimate the error covariance
directly; batch-paired QC samples estimate it from within-batch
differences, which cancels additive batch effects. Rank-deficient
estimates are repaired on the correlation scale with an eigenvalue floor
that preserves the variances.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-4


@dataclass
class ErrorCov:
    sigma_eps: np.ndarray


@dataclass
class QcSamples:
    """QC measurement matrix (samples x features), optionally with batch
    labels; paired use requires exactly two samples per batch."""

    values: np.ndarray
    feature_names: list = None
    batch: np.ndarray = None


def read_qc_csv(path):
    """QC CSV: header of feature names, optional ``batch``/``pair`` columns,
    "NA" for missing. Rows containing any NA are dropped (count logged)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    meta_cols = [i for i, name in enumerate(header) if name in ("batch", "pair")]
    feat_cols = [i for i in range(len(header)) if i not in meta_cols]
    batch_col = next((i for i in meta_cols if header[i] == "batch"), None)
    values, batches, dropped = [], [], 0
    for row in rows:
        if any(row[i].strip() in ("NA", "") for i in feat_cols):
            dropped += 1
            continue
        values.append([float(row[i]) for i in feat_cols])
        if batch_col is not None:
            batches.append(row[batch_col])
    if dropped:
        logger.warning("dropped %d QC rows containing NA", dropped)
    if not values:
        raise DataError("no complete QC rows")
    return QcSamples(
        values=np.asarray(values, dtype=float),
        feature_names=[header[i] for i in feat_cols],
        batch=np.asarray(batches) if batch_col is not None else None,
    )


def psd_repair(m, floor=EIG_FLOOR):
    """Floor the correlation spectrum at ``floor``, keeping variances.

    Already-compliant matrices return unchanged. The shifted correlation
    is renormalized to unit diagonal, so the output's diagonal matches the
    input's exactly; zero-variance coordinates get zero error variance
    with a warning.
    """
    m = np.asarray(m, dtype=float)
    if not np.allclose(m, m.T, atol=1e-10):
        raise DataError("matrix to repair is not symmetric")
    m = 0.5 * (m + m.T)
    var = np.diag(m).copy()
    dead = var <= 0
    if dead.any():
        logger.warning("%d zero-variance coordinate(s); their error variance is set to 0", int(dead.sum()))
    live = ~dead
    out = np.zeros_like(m)
    if live.any():
        sub = m[np.ix_(live, live)]
        sd = np.sqrt(np.diag(sub))
        corr = sub / np.outer(sd, sd)
        lam_min = float(np.linalg.eigvalsh(corr)[0])
        if lam_min < floor:
            a = (floor - lam_min) / (1.0 - floor)
            corr = (corr + a * np.eye(corr.shape[0])) / (1.0 + a)
        out[np.ix_(live, live)] = corr * np.outer(sd, sd)
    return out


def qc_cov(qc, floor=EIG_FLOOR, diagonal=False):
    """Sample covariance of the QC rows, PSD-repaired.

    ``diagonal`` keeps only the variances, the recommended fallback when
    there are fewer QC samples than features.
    """
    q, p = qc.values.shape
    if q < 2:
        raise DataError(f"need at least 2 QC samples, got {q}")
    if q - 1 < p:
        logger.warning(
            "QC covariance has rank <= %d < %d features; consider diagonal=True", q - 1, p
        )
    cov = np.cov(qc.values, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    if diagonal:
        cov = np.diag(np.diag(cov))
    return ErrorCov(sigma_eps=psd_repair(cov, floor=floor))


def qc_paired_cov(qc, floor=EIG_FLOOR, diagonal=False):
    """Half the covariance of within-batch differences, PSD-repaired.

    Differencing the two samples of a batch removes any additive batch
    shift; halving recovers the per-measurement error covariance.
    """
    if qc.batch is None:
        raise DataError("paired estimation needs batch labels")
    groups = {}
    for i, b in enumerate(qc.batch):
        groups.setdefault(b, []).append(i)
    diffs = []
    for b, idx in groups.items():
        if len(idx) != 2:
            raise DataError(f"batch {b!r} has {len(idx)} QC samples; paired mode needs exactly 2")
        diffs.append(qc.values[idx[0]] - qc.values[idx[1]])
    if len(diffs) < 2:
        raise DataError(f"need at least 2 batches for a paired estimate, got {len(diffs)}")
    if len(diffs) - 1 < qc.values.shape[1]:
        logger.warning(
            "paired QC covariance has rank <= %d < %d features; consider diagonal=True",
            len(diffs) - 1, qc.values.shape[1],
        )
    cov = 0.5 * np.atleast_2d(np.cov(np.asarray(diffs), rowvar=False, ddof=1))
    if diagonal:
        cov = np.diag(np.diag(cov))
    return ErrorCov(sigma_eps=psd_repair(cov, floor=floor))
