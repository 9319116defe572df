"""Heatmap and score evaluation metrics with GT=0 / GT>0 split aggregation."""

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from . import _accel
from .autograd import ShapeError

KLD_EPS = 1e-7


class UndefinedMetricError(ValueError):
    pass


@dataclass
class SampleMetrics:
    """Per-sample partial metrics. Distribution metrics are None on GT=0
    samples or when undefined (zero-variance CC, no fixation pixels)."""
    mse: float
    gt_zero: bool
    kld: float = None
    cc: float = None
    sim: float = None
    auc_judd: float = None


@dataclass
class EvalReport:
    count_all: int
    count_gt0: int
    count_gt_pos: int
    mse_all: float
    mse_gt0: float
    kld: float
    cc: float
    sim: float
    auc_judd: float
    plcc: float
    srcc: float

    def to_dict(self):
        return asdict(self)


def normalize_map(x):
    """Scale to unit sum; an all-zero map stays all-zero."""
    s = x.sum()
    return x / s if s > 0 else np.zeros_like(x)


def pearson(a, b):
    """Pearson correlation, or None when either input has zero variance."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    da = a - a.mean()
    db = b - b.mean()
    den = np.sqrt((da * da).sum() * (db * db).sum())
    if den == 0.0:
        return None
    return float(np.clip((da * db).sum() / den, -1.0, 1.0))


def kld(p, g, eps=KLD_EPS):
    ph, gh = normalize_map(p), normalize_map(g)
    return float(np.sum(gh * np.log(eps + gh / (eps + ph))))


def sim(p, g):
    return float(np.sum(np.minimum(normalize_map(p), normalize_map(g))))


def auc_judd(p, g, fix_thresh=0.5):
    """ROC area of P ranking fixation pixels (G >= threshold) above the rest;
    None when there are no fixations."""
    fix = (g >= fix_thresh).ravel()
    if not fix.any():
        return None
    return float(_accel.auc_judd(np.ascontiguousarray(p, dtype=np.float64).ravel(), fix))


def heatmap_metrics(p, g, fix_thresh=0.5):
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and ground truth {g.shape} differ")
    mse = float(np.mean((p - g) ** 2))
    if not g.any():
        return SampleMetrics(mse, True)
    return SampleMetrics(mse, False, kld(p, g), pearson(p, g), sim(p, g), auc_judd(p, g, fix_thresh))


def score_metrics(preds, gts):
    """Return (plcc, srcc); srcc uses average ranks for ties."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape or preds.ndim != 1:
        raise ShapeError(f"score lists differ in shape: {preds.shape} vs {gts.shape}")
    if preds.size < 2:
        raise UndefinedMetricError("score correlations need at least two samples")
    plcc = pearson(preds, gts)
    if plcc is None:
        raise UndefinedMetricError("score correlation undefined: a score list has zero variance")
    srcc = pearson(rankdata(preds), rankdata(gts))
    return plcc, srcc


def _mean(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    total = 0.0
    for v in vals:  # fixed summation order
        total += v
    return total / len(vals)


def dataset_report(per_sample, preds=None, gts=None):
    """Aggregate per-sample metrics (in sample order) and score lists."""
    if not per_sample:
        raise UndefinedMetricError("cannot report on an empty dataset")
    zero = [m for m in per_sample if m.gt_zero]
    pos = [m for m in per_sample if not m.gt_zero]
    plcc = srcc = None
    if preds is not None:
        try:
            plcc, srcc = score_metrics(preds, gts)
        except UndefinedMetricError:
            pass
    return EvalReport(
        count_all=len(per_sample), count_gt0=len(zero), count_gt_pos=len(pos),
        mse_all=_mean([m.mse for m in per_sample]),
        mse_gt0=_mean([m.mse for m in zero]),
        kld=_mean([m.kld for m in pos]), cc=_mean([m.cc for m in pos]),
        sim=_mean([m.sim for m in pos]), auc_judd=_mean([m.auc_judd for m in pos]),
        plcc=plcc, srcc=srcc)
