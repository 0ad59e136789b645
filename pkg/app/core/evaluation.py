"""
Evaluation - confusion counts, ROC/AUC, one-vs-rest averaging, EER threshold, regression errors
"""
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.errors import LengthMismatch, MissingClass, SingleClass, UndefinedRate, ZeroVariance
from app.models.records import CLASS_VALUES
from app.utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix2:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix2") -> "ConfusionMatrix2":
        return ConfusionMatrix2(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)


def confusion_binary(predicted, truth) -> ConfusionMatrix2:
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise LengthMismatch(len(predicted), len(truth))
    return ConfusionMatrix2(
        tp=int(np.sum(predicted & truth)),
        fp=int(np.sum(predicted & ~truth)),
        fn=int(np.sum(~predicted & truth)),
        tn=int(np.sum(~predicted & ~truth)),
    )


def _ratio(num: int, den: int, name: str, strict: bool) -> Optional[float]:
    if den == 0:
        if strict:
            raise UndefinedRate(f"{name} undefined: zero denominator")
        return None
    return num / den


@dataclass(frozen=True)
class BinaryRates:
    """`precision` is 1 - FPR; `precision_ppv` is TP / (TP + FP). None marks an undefined rate."""

    tpr: Optional[float]
    fpr: Optional[float]
    precision: Optional[float]
    precision_ppv: Optional[float]

    @property
    def specificity_like(self) -> Optional[float]:
        return self.precision


def binary_rates(cm: ConfusionMatrix2, strict: bool = False) -> BinaryRates:
    tpr = _ratio(cm.tp, cm.tp + cm.fn, "TPR", strict)
    fpr = _ratio(cm.fp, cm.fp + cm.tn, "FPR", strict)
    ppv = _ratio(cm.tp, cm.tp + cm.fp, "PPV", strict)
    return BinaryRates(tpr=tpr, fpr=fpr, precision=None if fpr is None else 1.0 - fpr, precision_ppv=ppv)


@dataclass(frozen=True)
class RocCurve:
    """Points ordered by decreasing threshold; the first is (0, 0) at +inf, the last (1, 1)"""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def __len__(self) -> int:
        return len(self.fpr)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"fpr": self.fpr, "tpr": self.tpr, "threshold": self.thresholds})


def roc_curve(scores, truth) -> RocCurve:
    """One point per distinct score, swept from the highest; a sample is positive when score >= threshold"""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape:
        raise LengthMismatch(len(scores), len(truth))
    positives = int(truth.sum())
    negatives = len(truth) - positives
    if positives == 0 or negatives == 0:
        raise SingleClass("ROC needs at least one positive and one negative")

    order = np.argsort(-scores, kind="mergesort")
    s, t = scores[order], truth[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(t)[ends]
    fp = (ends + 1) - tp
    return RocCurve(
        fpr=np.r_[0.0, fp / negatives],
        tpr=np.r_[0.0, tp / positives],
        thresholds=np.r_[np.inf, s[ends]],
    )


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve"""
    area = 0.0
    for i in range(1, len(curve)):
        area += (curve.fpr[i] - curve.fpr[i - 1]) * (curve.tpr[i] + curve.tpr[i - 1]) / 2.0
    return area


@dataclass(frozen=True)
class EerPoint:
    threshold: float
    fpr: float
    tpr: float
    vertex: int  # curve point closest to the crossing

    def vertex_threshold(self, curve: RocCurve) -> float:
        return float(curve.thresholds[self.vertex])


def eer_threshold(curve: RocCurve) -> EerPoint:
    """
    Operating point where TPR = 1 - FPR

    TPR + FPR - 1 never decreases along the curve, so the crossing is found
    between the last negative and the first non-negative point and linearly
    interpolated there.
    """
    g = curve.tpr + curve.fpr - 1.0
    i = int(np.argmax(g >= 0.0))
    if g[i] == 0.0 or i == 0:
        return EerPoint(float(curve.thresholds[i]), float(curve.fpr[i]), float(curve.tpr[i]), i)
    lam = -g[i - 1] / (g[i] - g[i - 1])
    fpr = curve.fpr[i - 1] + lam * (curve.fpr[i] - curve.fpr[i - 1])
    tpr = curve.tpr[i - 1] + lam * (curve.tpr[i] - curve.tpr[i - 1])
    lo_thr, hi_thr = curve.thresholds[i], curve.thresholds[i - 1]
    threshold = lo_thr if math.isinf(hi_thr) else hi_thr + lam * (lo_thr - hi_thr)
    # the +inf start point is never an operating point
    vertex = i - 1 if i > 1 and abs(g[i - 1]) <= abs(g[i]) else i
    return EerPoint(float(threshold), float(fpr), float(tpr), vertex)


def _flags_at_vertex(scores: np.ndarray, curve: RocCurve, vertex: int) -> np.ndarray:
    return scores >= curve.thresholds[vertex]


@dataclass
class ClassResult:
    label: float
    support: int
    auc: Optional[float] = None
    tpr: Optional[float] = None
    fpr: Optional[float] = None
    precision: Optional[float] = None
    precision_ppv: Optional[float] = None
    threshold: Optional[float] = None  # score cut that yields `confusion`
    crossing_threshold: Optional[float] = None  # interpolated TPR = 1 - FPR crossing
    confusion: Optional[ConfusionMatrix2] = None
    curve: Optional[RocCurve] = None

    @property
    def missing(self) -> bool:
        return self.curve is None


@dataclass
class AggregateRow:
    name: str
    auc: Optional[float]
    false_alarm_rate: Optional[float]
    precision: Optional[float]
    precision_ppv: Optional[float] = None
    tpr: Optional[float] = None


@dataclass
class RegressionMetrics:
    mse: float
    rmse: float
    r: Optional[float]
    clamped: bool = False


@dataclass
class EvalReport:
    classes: List[ClassResult]
    micro: AggregateRow
    macro: AggregateRow
    weighted: AggregateRow
    micro_curve: RocCurve
    regression: Optional[RegressionMetrics] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def headline_auc(self) -> Optional[float]:
        return self.micro.auc


def _mean(values: Sequence[Optional[float]], weights: Optional[Sequence[float]] = None) -> Optional[float]:
    if weights is None:
        weights = [1.0] * len(values)
    pairs = [(v, w) for v, w in zip(values, weights) if v is not None]
    total = sum(w for _, w in pairs)
    if not pairs or total == 0:
        return None
    return sum(v * w for v, w in pairs) / total


def one_vs_rest_report(per_class_scores, truth_classes, strict: bool = False) -> EvalReport:
    """
    Binarize the three risk classes, evaluate each at its EER operating point and aggregate

    macro: unweighted mean over classes present in the truth; weighted: truth
    frequency weights; micro: counts and scores pooled over the binarized
    problems. A class without instances is left out of the aggregates.
    """
    scores = np.asarray(per_class_scores, dtype=np.float64)
    truth = np.asarray(truth_classes, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != len(CLASS_VALUES):
        raise ValueError(f"expected an (n, {len(CLASS_VALUES)}) score matrix, got {scores.shape}")
    if scores.shape[0] != len(truth):
        raise LengthMismatch(scores.shape[0], len(truth))

    warnings = []
    results = []
    pooled_cm = ConfusionMatrix2(0, 0, 0, 0)
    pooled_scores, pooled_truth = [], []
    for k, c in enumerate(CLASS_VALUES):
        flags = truth == c
        result = ClassResult(label=c, support=int(flags.sum()))
        results.append(result)
        if result.support == 0 or result.support == len(truth):
            if strict:
                raise MissingClass(c)
            msg = f"class {c} has {'no' if result.support == 0 else 'only'} instances; left out of the aggregates"
            logger.warning(msg)
            warnings.append(msg)
            continue
        curve = roc_curve(scores[:, k], flags)
        eer = eer_threshold(curve)
        cm = confusion_binary(_flags_at_vertex(scores[:, k], curve, eer.vertex), flags)
        rates = binary_rates(cm)
        result.auc = auc(curve)
        result.curve = curve
        result.threshold = eer.vertex_threshold(curve)
        result.crossing_threshold = eer.threshold
        result.confusion = cm
        result.tpr, result.fpr = rates.tpr, rates.fpr
        result.precision, result.precision_ppv = rates.precision, rates.precision_ppv
        pooled_cm = pooled_cm + cm
        pooled_scores.append(scores[:, k])
        pooled_truth.append(flags)

    present = [r for r in results if not r.missing]
    if not present:
        raise SingleClass("no class has both positive and negative instances")
    micro_curve = roc_curve(np.concatenate(pooled_scores), np.concatenate(pooled_truth))
    micro_rates = binary_rates(pooled_cm)
    micro = AggregateRow(
        name="micro",
        auc=auc(micro_curve),
        false_alarm_rate=micro_rates.fpr,
        precision=micro_rates.precision_ppv,
        precision_ppv=micro_rates.precision_ppv,
        tpr=micro_rates.tpr,
    )

    def aggregate(name: str, weights=None) -> AggregateRow:
        return AggregateRow(
            name=name,
            auc=_mean([r.auc for r in present], weights),
            false_alarm_rate=_mean([r.fpr for r in present], weights),
            precision=_mean([r.precision for r in present], weights),
            precision_ppv=_mean([r.precision_ppv for r in present], weights),
            tpr=_mean([r.tpr for r in present], weights),
        )

    report = EvalReport(
        classes=results,
        micro=micro,
        macro=aggregate("macro"),
        weighted=aggregate("weighted", [r.support / len(truth) for r in present]),
        micro_curve=micro_curve,
        warnings=warnings,
    )
    logger.info(f"One-vs-rest report: micro AUC {micro.auc:.5f}, macro AUC {report.macro.auc:.5f}")
    return report


def regression_metrics(predicted, observed, strict: bool = False) -> RegressionMetrics:
    """MSE, its root, and R = sqrt(1 - SSE/SST) with the radicand clamped at 0"""
    predicted = np.asarray(predicted, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if predicted.shape != observed.shape:
        raise LengthMismatch(len(predicted), len(observed))
    if len(observed) == 0:
        raise ValueError("regression metrics need at least one sample")
    diff = predicted - observed
    sse = float(np.sum(diff * diff))
    mse = sse / len(observed)
    centered = observed - observed.mean()
    sst = float(np.sum(centered * centered))
    if sst == 0.0:
        if strict:
            raise ZeroVariance("observed values are constant; R is undefined")
        logger.warning("Observed values are constant; R is undefined")
        return RegressionMetrics(mse=mse, rmse=math.sqrt(mse), r=None)
    radicand = 1.0 - sse / sst
    clamped = radicand < 0.0
    if clamped:
        logger.warning(f"SSE exceeds SST (radicand {radicand:.6f}); R clamped to 0")
    return RegressionMetrics(mse=mse, rmse=math.sqrt(mse), r=math.sqrt(max(radicand, 0.0)), clamped=clamped)


def evaluate_model(model, dataset) -> EvalReport:
    """Class scores and risk predictions of any trained model against a labeled dataset"""
    report = one_vs_rest_report(model.class_score_matrix(dataset), dataset.labels)
    report.regression = regression_metrics(model.predict_scores(dataset), dataset.labels)
    return report


REPORT_COLUMNS = (
    "row", "support", "auc", "false_alarm_rate", "precision", "precision_ppv", "specificity_like", "tpr", "threshold",
)


def _nan(value: Optional[float]) -> float:
    return float("nan") if value is None else float(value)


def report_frame(report: EvalReport) -> pd.DataFrame:
    """Per-class rows followed by micro, macro and weighted rows"""
    rows = []
    for r in report.classes:
        rows.append({
            "row": str(r.label),
            "support": r.support,
            "auc": _nan(r.auc),
            "false_alarm_rate": _nan(r.fpr),
            "precision": _nan(r.precision),
            "precision_ppv": _nan(r.precision_ppv),
            "specificity_like": _nan(r.precision),
            "tpr": _nan(r.tpr),
            "threshold": _nan(r.threshold),
        })
    total = sum(r.support for r in report.classes)
    for agg in (report.micro, report.macro, report.weighted):
        fpr = agg.false_alarm_rate
        rows.append({
            "row": agg.name,
            "support": total,
            "auc": _nan(agg.auc),
            "false_alarm_rate": _nan(fpr),
            "precision": _nan(agg.precision),
            "precision_ppv": _nan(agg.precision_ppv),
            "specificity_like": _nan(None if fpr is None else 1.0 - fpr),
            "tpr": _nan(agg.tpr),
            "threshold": float("nan"),
        })
    return pd.DataFrame(rows, columns=list(REPORT_COLUMNS))


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def report_dict(report: EvalReport) -> Dict:
    classes = {}
    for r in report.classes:
        classes[str(r.label)] = {
            "support": r.support,
            "auc": r.auc,
            "tpr": r.tpr,
            "false_alarm_rate": r.fpr,
            "precision": r.precision,
            "precision_ppv": r.precision_ppv,
            "specificity_like": r.precision,
            "threshold": _clean(r.threshold),
            "crossing_threshold": _clean(r.crossing_threshold),
            "confusion": asdict(r.confusion) if r.confusion else None,
        }
    out = {
        "classes": classes,
        "micro": asdict(report.micro),
        "macro": asdict(report.macro),
        "weighted": asdict(report.weighted),
        "warnings": list(report.warnings),
    }
    if report.regression is not None:
        out["regression"] = asdict(report.regression)
    return out


def report_json(report: EvalReport) -> str:
    return json.dumps(report_dict(report), indent=2, sort_keys=True) + "\n"


SUMMARY_COLUMNS = ("model", "auc", "false_alarm_rate", "precision", "mse", "rmse", "r")


def summary_row(report: EvalReport, name: str) -> Dict:
    """Headline numbers of one model: micro AUC, false-alarm rate and precision plus regression errors"""
    reg = report.regression
    return {
        "model": name,
        "auc": _nan(report.micro.auc),
        "false_alarm_rate": _nan(report.micro.false_alarm_rate),
        "precision": _nan(report.micro.precision),
        "mse": _nan(reg.mse if reg else None),
        "rmse": _nan(reg.rmse if reg else None),
        "r": _nan(reg.r if reg else None),
    }


def comparison_table(rows: Sequence[Dict]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=list(SUMMARY_COLUMNS))
