"""
Loss terms of the adaptation objective.

1. softmax_t      - temperature softmax
2. kd_loss        - cross-entropy between softened teacher and student outputs
3. ce_loss        - cross-entropy against (possibly soft) labels at temperature 1
4. fsl_loss       - summed squared distances between matching feature-store cells
5. fretal_loss    - the weighted sum ρ₁·fsl + ρ₂·kd + ρ₃·ce

Every term is differentiable with respect to the student; teacher quantities
always enter as constants.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from fretal.backbone import ModelHandle, forward
from fretal.config import LossConfig
from fretal.errors import (
    BatchContractError,
    ConfigError,
    EmptyInputError,
    LabelError,
    NumericInputError,
    StoreContractError,
)
from fretal.feature_store import FeatureStore


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")


def _check_finite(logits: torch.Tensor) -> None:
    if not bool(torch.isfinite(logits).all()):
        raise NumericInputError("logits must be finite")


def softmax_t(logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """
    Temperature softmax over the last dimension (max-subtracted).

    Computed and returned in float64 whatever the logits' dtype, so rows sum
    to one within 1e-12.
    """
    _check_temperature(temperature)
    logits = torch.as_tensor(logits)
    _check_finite(logits)
    return torch.softmax(logits.to(torch.float64) / temperature, dim=-1)


def log_softmax_t(logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    _check_temperature(temperature)
    logits = torch.as_tensor(logits)
    _check_finite(logits)
    return torch.log_softmax(logits / temperature, dim=-1)


def entropy(probs: torch.Tensor) -> torch.Tensor:
    """Shannon entropy (nats) over the last dimension."""
    return -(torch.special.xlogy(probs, probs)).sum(-1)


def soft_cross_entropy(
    target_probs: torch.Tensor, student_logits: torch.Tensor, temperature: float = 1.0
) -> torch.Tensor:
    """Batch mean of -Σ p_target · log σ(student; 𝒯)."""
    if target_probs.dim() != 2 or target_probs.shape != student_logits.shape:
        raise BatchContractError(
            f"target {tuple(target_probs.shape)} and logits {tuple(student_logits.shape)} differ"
        )
    if target_probs.shape[0] == 0:
        raise EmptyInputError("cross-entropy of an empty batch")
    log_probs = log_softmax_t(student_logits, temperature)
    return -(target_probs.to(log_probs.dtype) * log_probs).sum(-1).mean()


def kd_loss(
    teacher_logits: torch.Tensor, student_logits: torch.Tensor, temperature: float
) -> torch.Tensor:
    """Knowledge-distillation loss; its minimum is the teacher's softened entropy."""
    if teacher_logits.shape != student_logits.shape:
        raise BatchContractError(
            f"teacher {tuple(teacher_logits.shape)} and student "
            f"{tuple(student_logits.shape)} logits differ"
        )
    teacher_probs = softmax_t(teacher_logits.detach(), temperature)
    return soft_cross_entropy(teacher_probs, student_logits, temperature)


def labels_to_targets(labels: torch.Tensor, num_classes: int = 2) -> torch.Tensor:
    """Hard labels {0, 1} become one-hot rows; (B, 2) soft targets pass through."""
    labels = torch.as_tensor(labels)
    if labels.numel() == 0:
        raise EmptyInputError("no labels")
    if labels.dim() == 2:
        if labels.shape[1] != num_classes:
            raise LabelError(f"soft targets need {num_classes} columns")
        return labels.float()
    if labels.dtype.is_floating_point:
        if not bool(((labels == 0) | (labels == 1)).all()):
            raise LabelError("labels must be 0 (real) or 1 (fake)")
        labels = labels.long()
    if bool(((labels < 0) | (labels >= num_classes)).any()):
        raise LabelError("labels must be 0 (real) or 1 (fake)")
    return F.one_hot(labels, num_classes).float()


def ce_loss(student_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy at temperature 1; accepts hard labels or CutMix soft targets."""
    if student_logits.shape[0] == 0:
        raise EmptyInputError("cross-entropy of an empty batch")
    targets = labels_to_targets(labels, student_logits.shape[-1])
    if targets.shape[0] != student_logits.shape[0]:
        raise BatchContractError(
            f"{targets.shape[0]} labels for {student_logits.shape[0]} logits"
        )
    return soft_cross_entropy(targets, student_logits, 1.0)


def fsl_loss(student_store: FeatureStore, teacher_store: FeatureStore) -> torch.Tensor:
    """
    Σ over bins and classes of ||Φ^s - Φ^t||².

    A cell that is empty in either store contributes zero.
    """
    if student_store.spec != teacher_store.spec:
        raise StoreContractError("feature stores use different bin specifications")
    if student_store.feature_dim != teacher_store.feature_dim:
        raise StoreContractError(
            f"feature dimension {student_store.feature_dim} != {teacher_store.feature_dim}"
        )
    student_agg, student_mask = student_store.aggregates()
    teacher_agg, teacher_mask = teacher_store.aggregates()
    mask = (student_mask & teacher_mask).to(student_agg.dtype)
    distances = ((student_agg - teacher_agg.detach()) ** 2).sum(-1)
    return (distances * mask).sum()


@dataclass
class LossBreakdown:
    """Components of one objective evaluation; a component is None when not computed."""

    fsl: Optional[torch.Tensor]
    kd: Optional[torch.Tensor]
    ce: Optional[torch.Tensor]
    total: torch.Tensor

    def to_record(self) -> Dict[str, Optional[float]]:
        def _value(t: Optional[torch.Tensor]) -> Optional[float]:
            return None if t is None else float(t.detach())

        return {
            "fsl": _value(self.fsl),
            "kd": _value(self.kd),
            "ce": _value(self.ce),
            "total": _value(self.total),
        }


def combine_losses(
    fsl: Optional[torch.Tensor],
    kd: Optional[torch.Tensor],
    ce: Optional[torch.Tensor],
    weights: Tuple[float, float, float],
) -> LossBreakdown:
    """
    Weighted sum of the available terms.

    Zero-weighted terms are left out of the sum so that degenerate weights
    reproduce the single-term objectives exactly.
    """
    total: Optional[torch.Tensor] = None
    for weight, term in zip(weights, (fsl, kd, ce)):
        if weight == 0 or term is None:
            continue
        term64 = term.to(torch.float64)
        weighted = term64 if weight == 1 else weight * term64
        total = weighted if total is None else total + weighted
    if total is None:
        raise ConfigError("objective has no active term (all weights zero)")
    return LossBreakdown(fsl=fsl, kd=kd, ce=ce, total=total)


@dataclass
class StorePair:
    teacher: FeatureStore
    student: FeatureStore


def fretal_loss(
    images: torch.Tensor,
    labels: torch.Tensor,
    teacher: Optional[ModelHandle],
    student: ModelHandle,
    stores: Optional[StorePair],
    cfg: LossConfig,
    weights: Optional[Tuple[float, float, float]] = None,
    ce_images: Optional[torch.Tensor] = None,
    ce_targets: Optional[torch.Tensor] = None,
    teacher_binning: bool = False,
) -> LossBreakdown:
    """
    Evaluate the combined objective on one mini-batch.

    KD and FSL always use the un-augmented ``images``; CE uses ``ce_images``
    with ``ce_targets`` (CutMix output) when given. The FSL value is taken from
    the current student store while its gradient flows through this batch's
    student features (see FeatureStore.with_live_batch).
    """
    weights = weights if weights is not None else cfg.weights
    rho1, rho2, rho3 = weights
    need_teacher = rho1 > 0 or rho2 > 0
    if need_teacher and teacher is None:
        raise ConfigError("KD and FSL terms need a teacher")
    if teacher is not None and teacher.trainable:
        raise ConfigError("teacher must be frozen before computing the objective")

    student_out = forward(student, images)
    teacher_out = forward(teacher, images) if need_teacher and teacher is not None else None

    kd = None
    if rho2 > 0 and teacher_out is not None:
        kd = kd_loss(teacher_out.logits, student_out.logits, cfg.temperature)

    fsl = None
    if rho1 > 0:
        if stores is None:
            raise ConfigError("FSL term needs feature stores")
        binning_logits = teacher_out.logits if teacher_binning and teacher_out else student_out.logits
        confidences = softmax_t(binning_logits.detach(), 1.0).amax(-1)
        live = stores.student.with_live_batch(
            student_out.features, confidences, torch.as_tensor(labels).long()
        )
        fsl = fsl_loss(live, stores.teacher)

    ce = None
    if rho3 > 0:
        if ce_images is not None:
            ce_logits = forward(student, ce_images).logits
            ce = ce_loss(ce_logits, ce_targets if ce_targets is not None else labels)
        else:
            ce = ce_loss(student_out.logits, labels)

    return combine_losses(fsl, kd, ce, weights)
