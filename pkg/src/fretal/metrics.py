"""
Evaluation metrics and reports.

This module provides:
1. Confusion counts and F1 with "fake" as the positive class
2. Frame-level model evaluation, with optional per-group majority vote
3. The zero-shot matrix (every teacher on every domain's test split)
4. Source / target / average adaptation reports
"""

import logging
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import confusion_matrix
from torch.utils.data import DataLoader

from fretal.backbone import ModelHandle, forward, parameter_digest
from fretal.datagen import LABEL_IDS, DomainDataset
from fretal.errors import DataError, EmptyInputError

logger = logging.getLogger(__name__)

LabelLike = Union[int, str]


class ConfusionCounts(BaseModel):
    model_config = ConfigDict(frozen=True)

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def f1(self) -> float:
        denominator = 2 * self.tp + self.fp + self.fn
        return 0.0 if denominator == 0 else 2 * self.tp / denominator

    @property
    def accuracy(self) -> float:
        return 0.0 if self.total == 0 else (self.tp + self.tn) / self.total


def _as_label_ids(values: Sequence[LabelLike]) -> np.ndarray:
    ids = []
    for value in values:
        if isinstance(value, str):
            if value not in LABEL_IDS:
                raise DataError(f"unknown label {value!r}")
            ids.append(LABEL_IDS[value])
        else:
            if int(value) not in (0, 1):
                raise DataError(f"unknown label {value!r}")
            ids.append(int(value))
    return np.asarray(ids, dtype=np.int64)


def confusion_counts(
    predictions: Sequence[LabelLike], labels: Sequence[LabelLike]
) -> ConfusionCounts:
    if len(predictions) != len(labels):
        raise DataError(f"{len(predictions)} predictions for {len(labels)} labels")
    if len(labels) == 0:
        raise EmptyInputError("no predictions to score")
    y_pred = _as_label_ids(predictions)
    y_true = _as_label_ids(labels)
    tn, fp, fn, tp = confusion_matrix(y_true, y_pred, labels=[0, 1]).ravel()
    return ConfusionCounts(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn))


def f1_score(predictions: Sequence[LabelLike], labels: Sequence[LabelLike]) -> float:
    """F1 = 2TP / (2TP + FP + FN), fake positive, 0 when the denominator is 0."""
    return confusion_counts(predictions, labels).f1


class EvalReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: str
    domain: str
    split: str
    f1: float = Field(..., ge=0.0, le=1.0)
    accuracy: float = Field(..., ge=0.0, le=1.0)
    confusion: ConfusionCounts
    checkpoint_digest: str
    group_vote: bool = False

    @classmethod
    def from_counts(
        cls,
        counts: ConfusionCounts,
        model: str,
        domain: str,
        split: str,
        checkpoint_digest: str,
        group_vote: bool = False,
    ) -> "EvalReport":
        return cls(
            model=model,
            domain=domain,
            split=split,
            f1=counts.f1,
            accuracy=counts.accuracy,
            confusion=counts,
            checkpoint_digest=checkpoint_digest,
            group_vote=group_vote,
        )


class AdaptationReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: str
    source: str
    target: str
    seed: int
    source_f1: float
    target_f1: float
    avg_f1: float
    source_report: EvalReport
    target_report: EvalReport

    @classmethod
    def from_reports(
        cls, method: str, seed: int, source_report: EvalReport, target_report: EvalReport
    ) -> "AdaptationReport":
        return cls(
            method=method,
            source=source_report.domain,
            target=target_report.domain,
            seed=seed,
            source_f1=source_report.f1,
            target_f1=target_report.f1,
            avg_f1=(source_report.f1 + target_report.f1) / 2.0,
            source_report=source_report,
            target_report=target_report,
        )


def predict(model: ModelHandle, dataset: DomainDataset, split: str, batch_size: int = 64) -> np.ndarray:
    """Per-frame argmax predictions over a split, in split order."""
    view = dataset.split(split)
    loader = DataLoader(view, batch_size=batch_size, shuffle=False)
    predictions = []
    with torch.no_grad():
        for images, _labels, _domains in loader:
            predictions.append(forward(model, images).logits.argmax(-1).numpy())
    return np.concatenate(predictions)


def evaluate_model(
    model: ModelHandle,
    dataset: DomainDataset,
    split: str = "test",
    group_vote: bool = False,
    name: Optional[str] = None,
    batch_size: int = 64,
) -> EvalReport:
    """
    Score a model on one split.

    Frame level by default; with ``group_vote`` each group is one prediction,
    the majority of its frames (ties count as fake).
    """
    view = dataset.split(split)
    predictions = predict(model, dataset, split, batch_size)
    labels = view.labels
    if group_vote:
        frame = pd.DataFrame({"group": view.group_ids, "pred": predictions, "label": labels})
        votes = frame.groupby("group").agg(pred=("pred", "mean"), label=("label", "first"))
        predictions = (votes["pred"].to_numpy() >= 0.5).astype(np.int64)
        labels = votes["label"].to_numpy()
    counts = confusion_counts(predictions.tolist(), labels.tolist())
    return EvalReport.from_counts(
        counts,
        model=name or model.metadata.get("name", "model"),
        domain=dataset.domain,
        split=split,
        checkpoint_digest=parameter_digest(model),
        group_vote=group_vote,
    )


def zero_shot_matrix(
    teachers: Mapping[str, ModelHandle],
    datasets: Mapping[str, DomainDataset],
    split: str = "test",
    group_vote: bool = False,
) -> pd.DataFrame:
    """Rows: teacher source domain; columns: evaluated domain; values: F1."""
    rows: Dict[str, Dict[str, float]] = {}
    for source, teacher in teachers.items():
        rows[source] = {}
        for domain, dataset in datasets.items():
            report = evaluate_model(teacher, dataset, split, group_vote, name=f"teacher-{source}")
            rows[source][domain] = report.f1
            logger.info("Zero-shot %s -> %s: F1 %.4f", source, domain, report.f1)
    matrix = pd.DataFrame.from_dict(rows, orient="index")
    matrix = matrix.reindex(index=list(teachers), columns=list(datasets))
    matrix.index.name = "teacher"
    return matrix
