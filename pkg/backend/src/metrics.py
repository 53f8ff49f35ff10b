"""Evaluation metrics and report artifacts."""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence
import logging

import numpy as np
import pandas as pd
from sklearn import metrics as skm

from src.errors import DegenerateClassError, EmptyDatasetError, InvalidParameterError, ShapeError

logger = logging.getLogger("src.metrics")

CONFUSION_CSV = "confusion.csv"
CLASS_REPORT_CSV = "class_report.csv"
ROC_CSV = "roc.csv"
REPORT_TXT = "report.txt"


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class and columns = predicted class."""
    counts: np.ndarray
    class_names: List[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])


@dataclass
class ClassReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: float
    macro: Dict[str, float]
    weighted: Dict[str, float]
    # classes whose precision or recall had a zero denominator
    undefined: List[str] = field(default_factory=list)
    class_names: List[str] = field(default_factory=list)


@dataclass
class RocCurve:
    class_index: int
    class_name: str
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


@dataclass
class EvaluationReport:
    confusion: ConfusionMatrix
    report: ClassReport
    roc: List[RocCurve]
    skipped_roc: List[str] = field(default_factory=list)


def _default_names(k: int) -> List[str]:
    return [f"g{i}" for i in range(k)]


def confusion_matrix(
    y_true: Sequence[int], y_pred: Sequence[int], K: int = 4,
    class_names: Optional[List[str]] = None,
) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"y_true has {y_true.size} labels, y_pred has {y_pred.size}")
    for name, labels in (("y_true", y_true), ("y_pred", y_pred)):
        if labels.size and (labels.min() < 0 or labels.max() >= K):
            raise InvalidParameterError(f"{name} contains labels outside [0, {K})")
    names = class_names or _default_names(K)
    if y_true.size == 0:
        return ConfusionMatrix(np.zeros((K, K), dtype=np.int64), names)
    counts = skm.confusion_matrix(y_true, y_pred, labels=list(range(K))).astype(np.int64)
    return ConfusionMatrix(counts, names)


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def class_report(cm: ConfusionMatrix) -> ClassReport:
    """Per-class precision/recall/F1 with macro and support-weighted averages."""
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise EmptyDatasetError("Confusion matrix has no samples")
    diag = np.diag(counts)
    col_sums = counts.sum(axis=0)
    row_sums = counts.sum(axis=1)

    precision = _ratio(diag, col_sums)
    recall = _ratio(diag, row_sums)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    support = row_sums.astype(np.int64)
    weights = row_sums / total

    undefined = [cm.class_names[k] for k in range(cm.num_classes)
                 if col_sums[k] == 0 or row_sums[k] == 0]
    if undefined:
        logger.debug(f"Zero denominators for classes {undefined}; reported as 0")

    return ClassReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=float(diag.sum() / total),
        macro={"precision": float(precision.mean()), "recall": float(recall.mean()),
               "f1": float(f1.mean())},
        weighted={"precision": float(weights @ precision), "recall": float(weights @ recall),
                  "f1": float(weights @ f1)},
        undefined=undefined,
        class_names=list(cm.class_names),
    )


def roc_curve(scores: Sequence[float], y_true: Sequence[int], k: int,
              class_name: Optional[str] = None) -> RocCurve:
    """One-vs-rest ROC for class ``k``; tied scores form a single point."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    positive = np.asarray(y_true).ravel() == k
    if scores.shape != positive.shape:
        raise ShapeError(f"{scores.size} scores for {positive.size} labels")
    n_pos = int(positive.sum())
    if n_pos == 0 or n_pos == positive.size:
        raise DegenerateClassError(
            f"Class {class_name or k} has {n_pos} positives and {positive.size - n_pos} negatives"
        )
    fpr, tpr, thresholds = skm.roc_curve(positive, scores, drop_intermediate=False)
    return RocCurve(
        class_index=k,
        class_name=class_name or f"g{k}",
        fpr=fpr,
        tpr=tpr,
        thresholds=thresholds,
        auc=float(skm.auc(fpr, tpr)),
    )


def auc_concordance(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """P(score_pos > score_neg) + 0.5 * P(tie), by counting every pair."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise DegenerateClassError("Concordance needs at least one positive and one negative")
    greater = np.count_nonzero(pos[:, None] > neg[None, :])
    ties = np.count_nonzero(pos[:, None] == neg[None, :])
    return (greater + 0.5 * ties) / (pos.size * neg.size)


def evaluate_predictions(
    y_true: Sequence[int], probs: np.ndarray, class_names: Optional[List[str]] = None
) -> EvaluationReport:
    """Confusion matrix, class report and per-class ROC from probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[1]
    names = class_names or _default_names(k)
    y_true = np.asarray(y_true, dtype=np.int64)
    cm = confusion_matrix(y_true, np.argmax(probs, axis=1), K=k, class_names=names)
    report = class_report(cm)

    curves, skipped = [], []
    for idx in range(k):
        try:
            curves.append(roc_curve(probs[:, idx], y_true, idx, names[idx]))
        except DegenerateClassError as e:
            logger.warning(f"Skipping ROC for {names[idx]}: {e}")
            skipped.append(names[idx])
    return EvaluationReport(confusion=cm, report=report, roc=curves, skipped_roc=skipped)


def render_report(report: ClassReport, cm: ConfusionMatrix, rocs: Sequence[RocCurve] = ()) -> str:
    """Fixed-width text table, two decimals."""
    auc_by_class = {c.class_name: c.auc for c in rocs}
    width = max([12] + [len(n) for n in report.class_names])
    header = f"{'class':<{width}} {'precision':>9} {'recall':>9} {'f1-score':>9} {'support':>9} {'auc':>9}"
    lines = [header, "-" * len(header)]
    for k, name in enumerate(report.class_names):
        auc = auc_by_class.get(name)
        auc_text = f"{auc:.2f}" if auc is not None else "-"
        lines.append(
            f"{name:<{width}} {report.precision[k]:>9.2f} {report.recall[k]:>9.2f} "
            f"{report.f1[k]:>9.2f} {int(report.support[k]):>9d} {auc_text:>9}"
        )
    total = int(report.support.sum())
    lines.append("")
    lines.append(f"{'accuracy':<{width}} {'':>9} {'':>9} {report.accuracy:>9.2f} {total:>9d}")
    for label, avg in (("macro avg", report.macro), ("weighted avg", report.weighted)):
        lines.append(
            f"{label:<{width}} {avg['precision']:>9.2f} {avg['recall']:>9.2f} "
            f"{avg['f1']:>9.2f} {total:>9d}"
        )
    lines.append("")
    lines.append("confusion matrix (rows = true, columns = predicted)")
    lines.append(f"{'':<{width}}" + "".join(f" {n:>7}" for n in cm.class_names))
    for name, row in zip(cm.class_names, cm.counts):
        lines.append(f"{name:<{width}}" + "".join(f" {int(v):>7d}" for v in row))
    if report.undefined:
        lines.append("")
        lines.append("zero denominators (reported as 0): " + ", ".join(report.undefined))
    return "\n".join(lines) + "\n"


def _to_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")
    return path


def write_report_artifacts(evaluation: EvaluationReport, out_dir: Path) -> Dict[str, Path]:
    """Write confusion, class report and ROC CSVs plus the text table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cm, report = evaluation.confusion, evaluation.report

    confusion = pd.DataFrame(cm.counts, columns=cm.class_names)
    confusion.insert(0, "true_class", cm.class_names)

    rows = [
        {"class": name, "precision": report.precision[k], "recall": report.recall[k],
         "f1": report.f1[k], "support": int(report.support[k])}
        for k, name in enumerate(report.class_names)
    ]
    total = int(report.support.sum())
    rows.append({"class": "macro avg", **report.macro, "support": total})
    rows.append({"class": "weighted avg", **report.weighted, "support": total})
    rows.append({"class": "accuracy", "precision": np.nan, "recall": np.nan,
                 "f1": report.accuracy, "support": total})

    roc_rows = [
        {"class": c.class_name, "fpr": fpr, "tpr": tpr, "threshold": thr}
        for c in evaluation.roc for fpr, tpr, thr in zip(c.fpr, c.tpr, c.thresholds)
    ]

    paths = {
        "confusion": _to_csv(confusion, out_dir / CONFUSION_CSV),
        "class_report": _to_csv(
            pd.DataFrame(rows, columns=["class", "precision", "recall", "f1", "support"]),
            out_dir / CLASS_REPORT_CSV),
        "roc": _to_csv(pd.DataFrame(roc_rows, columns=["class", "fpr", "tpr", "threshold"]),
                       out_dir / ROC_CSV),
    }
    text_path = out_dir / REPORT_TXT
    text_path.write_text(render_report(report, cm, evaluation.roc), encoding="utf-8")
    paths["report"] = text_path
    logger.info(f"Report artifacts written to {out_dir}")
    return paths


def read_report_artifacts(report_dir: Path) -> EvaluationReport:
    """Rebuild an EvaluationReport from the CSVs written by write_report_artifacts."""
    report_dir = Path(report_dir)
    confusion = pd.read_csv(report_dir / CONFUSION_CSV, dtype={"true_class": str})
    names = [str(c) for c in confusion.columns[1:]]
    cm = ConfusionMatrix(confusion[names].to_numpy(dtype=np.int64), names)

    roc = pd.read_csv(report_dir / ROC_CSV, dtype={"class": str}, float_precision="round_trip")
    curves = []
    for k, name in enumerate(names):
        part = roc[roc["class"] == name]
        if part.empty:
            continue
        fpr = part["fpr"].to_numpy(dtype=np.float64)
        tpr = part["tpr"].to_numpy(dtype=np.float64)
        curves.append(RocCurve(
            class_index=k, class_name=name, fpr=fpr, tpr=tpr,
            thresholds=part["threshold"].to_numpy(dtype=np.float64),
            auc=float(skm.auc(fpr, tpr)),
        ))
    skipped = [n for n in names if n not in {c.class_name for c in curves}]
    return EvaluationReport(confusion=cm, report=class_report(cm), roc=curves, skipped_roc=skipped)
