"""
Confidence-binned, per-class feature storage.

A store keeps one running sum and count per (bin, class) cell, so each cell's
representative feature is the arithmetic mean of the features assigned to it.
The teacher store is built once; the student store is rebuilt as the student
changes.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Tuple

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from fretal.backbone import ModelHandle, forward
from fretal.config import BinSpec
from fretal.errors import EmptyInputError, NumericInputError, StoreContractError

logger = logging.getLogger(__name__)

NUM_CLASSES = 2
CLASS_NAMES = ("real", "fake")


def _check_confidences(confidences: torch.Tensor) -> None:
    if not bool(torch.isfinite(confidences).all()):
        raise NumericInputError("confidence must be finite")
    if bool(((confidences < 0) | (confidences > 1)).any()):
        raise NumericInputError("confidence must lie in [0, 1]")


def assign_bins(confidences: torch.Tensor, spec: BinSpec) -> torch.Tensor:
    """
    Vectorised bin assignment; -1 marks confidences outside [λ_a, λ_b].

    Confidences are compared in float64; pass float64 values when they must
    land exactly on an edge (a float32 0.7 sits below 0.7).

    Bins are half-open [edge_k, edge_k+1) except the last, which is closed.
    """
    confidences = torch.as_tensor(confidences, dtype=torch.float64)
    _check_confidences(confidences)
    edges = torch.tensor(spec.edges, dtype=torch.float64)
    index = torch.bucketize(confidences, edges, right=True) - 1
    index = torch.where(confidences == edges[-1], torch.full_like(index, spec.num_bins - 1), index)
    outside = (confidences < edges[0]) | (confidences > edges[-1])
    return torch.where(outside, torch.full_like(index, -1), index)


def assign_bin(confidence: float, spec: BinSpec) -> Optional[int]:
    """Bin index of one confidence, or None below λ_a (or above λ_b)."""
    index = int(assign_bins(torch.tensor([float(confidence)], dtype=torch.float64), spec)[0])
    return None if index < 0 else index


@dataclass
class FeatureStore:
    spec: BinSpec
    sums: torch.Tensor  # (bins, classes, F) float64
    counts: torch.Tensor  # (bins, classes) int64

    @classmethod
    def empty(cls, spec: BinSpec, feature_dim: int) -> "FeatureStore":
        return cls(
            spec=spec,
            sums=torch.zeros(spec.num_bins, NUM_CLASSES, feature_dim, dtype=torch.float64),
            counts=torch.zeros(spec.num_bins, NUM_CLASSES, dtype=torch.int64),
        )

    @property
    def feature_dim(self) -> int:
        return self.sums.shape[-1]

    @property
    def total_count(self) -> int:
        return int(self.counts.sum())

    def _cell_assignment(
        self, features: torch.Tensor, confidences: torch.Tensor, labels: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        if features.dim() != 2 or features.shape[1] != self.feature_dim:
            raise StoreContractError(
                f"features of shape {tuple(features.shape)} do not match dimension {self.feature_dim}"
            )
        if not (features.shape[0] == confidences.shape[0] == labels.shape[0]):
            raise StoreContractError("features, confidences and labels differ in length")
        bins = assign_bins(confidences, self.spec)
        keep = bins >= 0
        cells = bins.clamp(min=0) * NUM_CLASSES + labels.long()
        # one-hot matmul keeps the reduction order fixed and differentiable
        onehot = torch.nn.functional.one_hot(cells, self.spec.num_bins * NUM_CLASSES)
        onehot = onehot * keep.unsqueeze(1)
        return onehot.to(torch.float64), keep

    def accumulate_batch(
        self, features: torch.Tensor, confidences: torch.Tensor, labels: torch.Tensor
    ) -> "FeatureStore":
        onehot, _ = self._cell_assignment(features.detach(), confidences, labels)
        batch_sums = onehot.T @ features.detach().to(torch.float64)
        self.sums = self.sums + batch_sums.reshape_as(self.sums)
        self.counts = self.counts + onehot.sum(0).long().reshape_as(self.counts)
        return self

    def accumulate(
        self, sample_features: torch.Tensor, confidence: float, label: int
    ) -> "FeatureStore":
        return self.accumulate_batch(
            torch.as_tensor(sample_features, dtype=torch.float64).reshape(1, -1),
            torch.tensor([float(confidence)], dtype=torch.float64),
            torch.tensor([int(label)]),
        )

    def with_live_batch(
        self, features: torch.Tensor, confidences: torch.Tensor, labels: torch.Tensor
    ) -> "FeatureStore":
        """
        A view whose aggregates equal this store's but whose gradient flows
        through ``features``: each cell gains batch_sum - batch_sum.detach(),
        scaled by the cell's count when aggregated.
        """
        onehot, _ = self._cell_assignment(features, confidences, labels)
        live = onehot.T @ features.to(torch.float64)
        delta = (live - live.detach()).reshape_as(self.sums)
        return FeatureStore(spec=self.spec, sums=self.sums.detach() + delta, counts=self.counts)

    def aggregates(self) -> Tuple[torch.Tensor, torch.Tensor]:
        """Per-cell means (zeros for empty cells) and the non-empty mask."""
        mask = self.counts > 0
        means = self.sums / self.counts.clamp(min=1).unsqueeze(-1).to(self.sums.dtype)
        return means, mask

    def aggregate(self, bin_index: int, label: int) -> Optional[torch.Tensor]:
        if int(self.counts[bin_index, label]) == 0:
            return None
        return self.sums[bin_index, label] / self.counts[bin_index, label]

    def digest(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.spec.model_dump_json().encode("utf-8"))
        digest.update(self.sums.detach().contiguous().numpy().tobytes())
        digest.update(self.counts.contiguous().numpy().tobytes())
        return digest.hexdigest()

    def to_dict(self) -> Dict[str, Any]:
        means, mask = self.aggregates()
        cells = []
        for k in range(self.spec.num_bins):
            for c in range(NUM_CLASSES):
                cells.append(
                    {
                        "bin": k,
                        "range": [self.spec.edges[k], self.spec.edges[k + 1]],
                        "class": CLASS_NAMES[c],
                        "count": int(self.counts[k, c]),
                        "aggregate": means[k, c].detach().tolist() if bool(mask[k, c]) else None,
                    }
                )
        return {
            "spec": self.spec.model_dump(mode="json"),
            "feature_dim": self.feature_dim,
            "edges": self.spec.edges,
            "cells": cells,
        }


def _iterate_outputs(
    model: ModelHandle, dataset: Dataset, batch_size: int
) -> Iterable[Tuple[Any, torch.Tensor]]:
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    for images, labels, _domains in loader:
        yield forward(model, images), labels


def build_store(
    model: ModelHandle,
    dataset: Dataset,
    spec: BinSpec,
    batch_size: int = 64,
    confidence_model: Optional[ModelHandle] = None,
) -> FeatureStore:
    """
    One forward pass over ``dataset``; confidence is the max softmax at 𝒯 = 1
    of ``confidence_model`` (the model itself by default), class is the
    ground-truth label.
    """
    if len(dataset) == 0:  # type: ignore[arg-type]
        raise EmptyInputError("cannot build a feature store from an empty dataset")
    store = FeatureStore.empty(spec, model.feature_dim)
    confidence_outputs = (
        _iterate_outputs(confidence_model, dataset, batch_size)
        if confidence_model is not None
        else None
    )
    with torch.no_grad():
        for output, labels in _iterate_outputs(model, dataset, batch_size):
            logits = output.logits
            if confidence_outputs is not None:
                logits = next(confidence_outputs)[0].logits
            confidences = torch.softmax(logits.double(), dim=-1).amax(-1)
            store.accumulate_batch(output.features, confidences, labels)
    logger.debug("Built feature store with %d of %d samples", store.total_count, len(dataset))  # type: ignore[arg-type]
    return store


def refresh_student_store(
    student: ModelHandle,
    dataset: Dataset,
    spec: BinSpec,
    batch_size: int = 64,
    confidence_model: Optional[ModelHandle] = None,
) -> FeatureStore:
    """Rebuild the student store from the student's current parameters."""
    return build_store(student, dataset, spec, batch_size, confidence_model=confidence_model)


def stores_equal(a: FeatureStore, b: FeatureStore) -> bool:
    return (
        a.spec == b.spec
        and torch.equal(a.counts, b.counts)
        and np.array_equal(a.sums.detach().numpy(), b.sums.detach().numpy())
    )
