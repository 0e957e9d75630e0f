"""Training losses and evaluation metrics for similarity regression."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DomainError, UndefinedMetricError

PEARSON_EPS = 1e-8


@dataclass
class PredictionSet:
    y_pred: np.ndarray
    y_true: np.ndarray

    def __post_init__(self):
        self.y_pred = np.asarray(self.y_pred, dtype=np.float64).reshape(-1)
        self.y_true = np.asarray(self.y_true, dtype=np.float64).reshape(-1)
        if self.y_pred.shape != self.y_true.shape:
            raise DomainError(
                f"prediction/truth length mismatch: {self.y_pred.size} vs {self.y_true.size}"
            )

    @property
    def n(self) -> int:
        return int(self.y_pred.size)


@dataclass
class BinaryEval:
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    no_positive_truth: bool = False

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


# ------------------------------------------------------------------- losses

def _pred_tensor(y_pred) -> Tensor:
    t = ad.as_tensor(y_pred)
    return t.reshape(-1) if t.ndim != 1 else t


def pearson_loss(y_pred, y_true) -> Tensor:
    """Negative Pearson correlation with population moments.

    Each standard deviation is floored at ``PEARSON_EPS`` so a collapsed
    (constant) prediction yields a finite loss and gradient.
    """
    yp = _pred_tensor(y_pred)
    yt = np.asarray(y_true, dtype=np.float64).reshape(-1)
    if yp.size != yt.size:
        raise DomainError(f"length mismatch: {yp.size} predictions vs {yt.size} targets")
    if yp.size < 2:
        raise DomainError("pearson_loss needs at least two examples")
    pc = yp - ad.mean(yp)
    tc = yt - yt.mean()
    cov = ad.mean(pc * tc)
    sd_p = ad.sqrt(ad.clamp_min(ad.mean(pc * pc), PEARSON_EPS**2))
    sd_t = max(math.sqrt(float(np.mean(tc * tc))), PEARSON_EPS)
    return -(cov / (sd_p * sd_t))


def mse_loss(y_pred, y_true) -> Tensor:
    yp = _pred_tensor(y_pred)
    yt = np.asarray(y_true, dtype=np.float64).reshape(-1)
    if yp.size != yt.size:
        raise DomainError(f"length mismatch: {yp.size} predictions vs {yt.size} targets")
    if yp.size == 0:
        raise DomainError("mse_loss of empty input")
    d = yp - yt
    return ad.mean(d * d)


def combined_loss(y_pred, y_true, lambda_mse: float = 0.0) -> Tensor:
    if lambda_mse < 0:
        raise ConfigError(f"lambda_mse must be >= 0, got {lambda_mse}")
    loss = pearson_loss(y_pred, y_true)
    if lambda_mse:
        loss = loss + lambda_mse * mse_loss(y_pred, y_true)
    return loss


# ------------------------------------------------------------------ metrics

def pearson_metric(p: PredictionSet) -> float:
    if p.n < 2:
        raise DomainError("pearson needs at least two examples")
    if np.ptp(p.y_pred) == 0.0 or np.ptp(p.y_true) == 0.0:
        raise UndefinedMetricError("pearson undefined: zero variance")
    pc = p.y_pred - p.y_pred.mean()
    tc = p.y_true - p.y_true.mean()
    sp = float(np.dot(pc, pc))
    st = float(np.dot(tc, tc))
    if sp <= 0.0 or st <= 0.0:
        raise UndefinedMetricError("pearson undefined: zero variance")
    return float(np.dot(pc, tc) / math.sqrt(sp * st))


def mse_metric(p: PredictionSet) -> float:
    if p.n == 0:
        raise DomainError("mse of empty input")
    d = p.y_pred - p.y_true
    return float(np.mean(d * d))


def confusion(p: PredictionSet, threshold: float = 0.5, threshold_true: float | None = None) -> BinaryEval:
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must be in [0,1], got {threshold}")
    tt = threshold if threshold_true is None else threshold_true
    pred = p.y_pred >= threshold
    true = p.y_true >= tt
    return BinaryEval(
        threshold=threshold,
        tp=int(np.sum(pred & true)),
        fp=int(np.sum(pred & ~true)),
        tn=int(np.sum(~pred & ~true)),
        fn=int(np.sum(~pred & true)),
        no_positive_truth=not bool(np.any(true)),
    )


def f1_score(p: PredictionSet, threshold: float = 0.5, threshold_true: float | None = None):
    """F1 after binarizing both vectors (>= threshold is positive).

    Returns ``(f1, BinaryEval)``; F1 is 0 when there are no true positives.
    """
    cm = confusion(p, threshold, threshold_true)
    if cm.tp == 0:
        return 0.0, cm
    precision = cm.tp / (cm.tp + cm.fp)
    recall = cm.tp / (cm.tp + cm.fn)
    return 2.0 * precision * recall / (precision + recall), cm


def auc(p: PredictionSet, threshold_true: float = 0.5) -> float:
    """ROC AUC as the Mann-Whitney statistic; tied pairs count one half."""
    pos = p.y_true >= threshold_true
    n_pos = int(pos.sum())
    n_neg = p.n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auc undefined: ground truth has a single class")
    ranks = rankdata(p.y_pred, method="average")
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


# ------------------------------------------------------------------- report

@dataclass
class MetricReport:
    n: int
    threshold: float
    pearson: float | None = None
    mse: float | None = None
    f1: float | None = None
    auc: float | None = None
    undefined: dict[str, bool] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = [
            ("pearson", self.pearson),
            ("mse", self.mse),
            ("f1", self.f1),
            ("auc", self.auc),
            ("threshold", self.threshold),
            ("n", self.n),
        ]
        rows += [(f"{k}_undefined", v) for k, v in sorted(self.undefined.items())]
        return "\n".join(f"{k}={'undefined' if v is None else v}" for k, v in rows)


def metric_report(p: PredictionSet, threshold: float = 0.5) -> MetricReport:
    """All four metrics; undefined ones are None with their flag set."""
    rep = MetricReport(n=p.n, threshold=threshold)
    for key in ("pearson", "auc"):
        rep.undefined[key] = False
    try:
        rep.pearson = pearson_metric(p)
    except (UndefinedMetricError, DomainError):
        rep.undefined["pearson"] = True
    rep.mse = mse_metric(p) if p.n else None
    f1, cm = f1_score(p, threshold)
    rep.f1 = f1
    if cm.no_positive_truth:
        rep.warnings.append("f1: ground truth has no positives")
    try:
        rep.auc = auc(p, threshold)
    except UndefinedMetricError:
        rep.undefined["auc"] = True
    return rep
