"""Segment prediction, patient-level voting, and clinical metrics.

A patient's label comes from counting positive segment predictions:
positive iff (number of positive segments) > rho * n_segments, with a
strict inequality (so rho=1 can never yield a positive).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .datasets import SegmentedDataset
from .errors import UnitPromptError
from .prompts import PromptPool, TaskSpec, compose
from .ulm import ULMParameters, forward_batch
from .verbalizer import Verbalizer, classify


@dataclass
class SegmentPrediction:
    patient_id: str
    segment_index: int
    predicted: int
    probabilities: np.ndarray

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if abs(self.probabilities.sum() - 1.0) > 1e-6:
            raise UnitPromptError(
                f"probabilities sum to {self.probabilities.sum()}, expected 1"
            )


@dataclass(frozen=True)
class VotingConfig:
    rho: float = 0.5
    positive_class: int = 1

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise UnitPromptError(f"rho must be in [0, 1], got {self.rho}")


@dataclass
class MetricsReport:
    level: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    zero_division: tuple = ()

    HEADER = "level,accuracy,precision,recall,f1,tp,fp,tn,fn"

    def as_line(self) -> str:
        return (f"{self.level},{self.accuracy:.6f},{self.precision:.6f},"
                f"{self.recall:.6f},{self.f1:.6f},{self.tp},{self.fp},{self.tn},{self.fn}")

    def as_text(self) -> str:
        lines = [f"[{self.level}-level]"]
        for name in ("accuracy", "precision", "recall", "f1"):
            flag = " (zero denominator, defined as 0)" if name in self.zero_division else ""
            lines.append(f"  {name:<9} = {getattr(self, name):.4f}{flag}")
        lines.append(f"  confusion = TP {self.tp} / FP {self.fp} / TN {self.tn} / FN {self.fn}")
        return "\n".join(lines)


def predict_segments(ds: SegmentedDataset, params: ULMParameters, pool: PromptPool,
                     verbalizers: dict[str, Verbalizer], task: TaskSpec,
                     batch_size: int = 32) -> list[SegmentPrediction]:
    """Deterministic eval-mode predictions, one per segment."""
    if task.task_id not in verbalizers:
        raise UnitPromptError(f"unknown task id {task.task_id!r}")
    vb = verbalizers[task.task_id]
    with ad.no_grad():
        app = compose(task, pool)
        by_len: dict[int, list[int]] = {}
        for i, (seg, _) in enumerate(ds.segments):
            by_len.setdefault(len(seg), []).append(i)
        out_by_index: dict[int, SegmentPrediction] = {}
        for length in sorted(by_len):
            idx = by_len[length]
            for lo in range(0, len(idx), batch_size):
                chunk = idx[lo:lo + batch_size]
                tokens = np.stack([ds.segments[i][0].units for i in chunk])
                out = forward_batch(tokens, params, prompt=app, train_mode=False)
                class_logits = classify(out, vb).data
                for row, i in enumerate(chunk):
                    seg = ds.segments[i][0]
                    logits = class_logits[row].astype(np.float64)
                    e = np.exp(logits - logits.max())
                    probs = e / e.sum()
                    out_by_index[i] = SegmentPrediction(
                        seg.patient_id, seg.segment_index, int(np.argmax(logits)), probs
                    )
        preds = [out_by_index[i] for i in range(len(ds.segments))]
    return preds


def vote(preds: list[SegmentPrediction], cfg: VotingConfig) -> int:
    """Patient label: 1 iff positive segments strictly exceed rho * n."""
    if not preds:
        raise UnitPromptError("cannot vote over an empty prediction list")
    patient_ids = {p.patient_id for p in preds}
    if len(patient_ids) != 1:
        raise UnitPromptError(f"mixed patient ids in one vote: {sorted(patient_ids)}")
    positives = sum(1 for p in preds if p.predicted == cfg.positive_class)
    return 1 if positives > cfg.rho * len(preds) else 0


def metrics(pred_labels, true_labels, positive_class: int = 1,
            level: str = "segment") -> MetricsReport:
    """Binary confusion-matrix metrics with the given positive class.

    Precision, recall, and F1 are defined as 0 when their denominators
    are 0; those cases are flagged in the report.
    """
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise UnitPromptError(
            f"label length mismatch: pred {pred.shape}, true {true.shape}"
        )
    if pred.size == 0:
        raise UnitPromptError("empty label lists")
    p = pred == positive_class
    t = true == positive_class
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    tn = int(np.sum(~p & ~t))
    fn = int(np.sum(~p & t))
    flags = []
    accuracy = (tp + tn) / pred.size
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, flags = 0.0, flags + ["precision"]
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, flags = 0.0, flags + ["recall"]
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, flags = 0.0, flags + ["f1"]
    return MetricsReport(level, accuracy, precision, recall, f1, tp, fp, tn, fn,
                         tuple(flags))


def evaluate(ds: SegmentedDataset, params: ULMParameters, pool: PromptPool,
             verbalizers: dict[str, Verbalizer], cfg: VotingConfig,
             ) -> tuple[MetricsReport, MetricsReport]:
    """Segment-level and patient-level (voted) metrics for one dataset."""
    preds = predict_segments(ds, params, pool, verbalizers, ds.task)
    seg_pred = [p.predicted for p in preds]
    seg_true = [label for _, label in ds.segments]
    segment_report = metrics(seg_pred, seg_true, cfg.positive_class, level="segment")

    # the vote itself is binary (Eq. 2 space), so patient metrics are
    # computed on 0/1 labels with 1 as the positive class
    patient_pred, patient_true = [], []
    for pid in sorted(ds.patient_index):
        seg_ids = ds.patient_index[pid]
        labels = {ds.segments[i][1] for i in seg_ids}
        if len(labels) != 1:
            raise UnitPromptError(f"patient {pid} has inconsistent labels {labels}")
        patient_true.append(1 if labels.pop() == cfg.positive_class else 0)
        patient_pred.append(vote([preds[i] for i in seg_ids], cfg))
    patient_report = metrics(patient_pred, patient_true, 1, level="patient")
    return segment_report, patient_report


def write_reports(path, reports) -> None:
    """Structured text plus machine-readable lines, one per level."""
    path = Path(path)
    text = "\n\n".join(r.as_text() for r in reports)
    lines = "\n".join([MetricsReport.HEADER] + [r.as_line() for r in reports])
    path.with_suffix(".txt").write_text(text + "\n", encoding="utf-8")
    path.with_suffix(".csv").write_text(lines + "\n", encoding="utf-8")
