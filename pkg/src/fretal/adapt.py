"""
Teacher training and source-free student adaptation.

This module provides:
1. train_teacher  - CE training on the source domain, then freezing
2. adapt_student  - copy the teacher, adapt on the target adapt split with
                    FReTAL or one of its baselines / ablations
3. TrainingTrace  - per-epoch loss and validation record, written as JSON Lines
4. AuditedLoader  - a DataLoader that counts samples carrying a foreign domain tag

Epoch 0 of an adaptation trace is an evaluation pass over the copied student
before any update, so its fsl is 0 and its kd sits at the teacher's entropy.
"""

import json
import logging
import time
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field
from torch.utils.data import DataLoader

from fretal.backbone import (
    ModelHandle,
    build_model,
    clone_model,
    forward,
    freeze,
    make_optimizer,
    parameter_digest,
    restore_state,
    snapshot_state,
)
from fretal.config import AdaptationConfig, ArchitectureSpec, CutMixConfig, TeacherConfig
from fretal.cutmix import cutmix
from fretal.datagen import DomainDataset, SplitView
from fretal.early_stopping import EarlyStopping
from fretal.errors import DataError, ProtocolError, SourceDataViolation, UnderTrainedTeacherError
from fretal.feature_store import FeatureStore, build_store, refresh_student_store
from fretal.losses import LossBreakdown, StorePair, ce_loss, fretal_loss
from fretal.metrics import evaluate_model

logger = logging.getLogger(__name__)

StopReason = Literal["patience", "max-epochs"]
TERMS = ("fsl", "kd", "ce", "total")


class EpochRecord(BaseModel):
    epoch: int = Field(..., ge=0)
    fsl: Optional[float] = None
    kd: Optional[float] = None
    ce: Optional[float] = None
    total: Optional[float] = None
    val_f1: float
    wall_time: float = 0.0


class TrainingTrace(BaseModel):
    method: str
    records: List[EpochRecord] = Field(default_factory=list)
    stop_reason: Optional[StopReason] = None
    source_samples_seen: int = 0
    best_epoch: int = 0

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ValueError(f"epoch {record.epoch} does not follow {self.records[-1].epoch}")
        self.records.append(record)

    @property
    def val_history(self) -> List[float]:
        return [r.val_f1 for r in self.records]

    def comparable(self) -> List[Dict[str, Optional[float]]]:
        """Records without wall time, for run-to-run comparison."""
        return [r.model_dump(exclude={"wall_time"}) for r in self.records]

    def to_jsonl(self) -> str:
        lines = [json.dumps(r.model_dump()) for r in self.records]
        lines.append(
            json.dumps(
                {
                    "stop_reason": self.stop_reason,
                    "source_samples_seen": self.source_samples_seen,
                    "best_epoch": self.best_epoch,
                }
            )
        )
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Path, method: str = "") -> "TrainingTrace":
        lines = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        if not lines or "stop_reason" not in lines[-1]:
            raise DataError(f"trace {path} lacks its final stop record")
        final = lines.pop()
        return cls(
            method=method,
            records=[EpochRecord.model_validate(line) for line in lines],
            stop_reason=final["stop_reason"],
            source_samples_seen=final.get("source_samples_seen", 0),
            best_epoch=final.get("best_epoch", 0),
        )


class AuditedLoader:
    """
    Iterate a split in seeded-shuffled mini-batches while checking every
    sample's domain tag against ``expected_domain``.

    A split whose own domain tag is ``forbidden_domain`` (the teacher's
    source) is refused before any sample is read. Foreign samples are counted
    in ``foreign_seen``; with ``strict`` the first one raises
    SourceDataViolation.
    """

    def __init__(
        self,
        view: SplitView,
        expected_domain: str,
        batch_size: int,
        seed: int,
        strict: bool = True,
        forbidden_domain: Optional[str] = None,
    ):
        if forbidden_domain is not None and view.domain == forbidden_domain:
            raise SourceDataViolation(
                f"the {view.split!r} split of {view.domain!r} is the teacher's source data"
            )
        self.expected_domain = expected_domain
        self.forbidden_domain = forbidden_domain
        self.strict = strict
        self.foreign_seen = 0
        self.samples_seen = 0
        generator = torch.Generator()
        generator.manual_seed(seed)
        self._loader = DataLoader(view, batch_size=batch_size, shuffle=True, generator=generator)

    def __len__(self) -> int:
        return len(self._loader)

    def __iter__(self) -> Iterator[Tuple[torch.Tensor, torch.Tensor]]:
        for images, labels, domains in self._loader:
            foreign = sum(
                1 for d in domains if d != self.expected_domain or d == self.forbidden_domain
            )
            self.samples_seen += len(domains)
            if foreign:
                self.foreign_seen += foreign
                if self.strict:
                    raise SourceDataViolation(
                        f"{foreign} sample(s) outside domain {self.expected_domain!r} "
                        f"reached the adaptation loader"
                    )
            yield images, labels


def _mix(
    images: torch.Tensor, labels: torch.Tensor, cfg: CutMixConfig, rng: np.random.Generator
) -> Tuple[Optional[torch.Tensor], Optional[torch.Tensor]]:
    if not cfg.enabled:
        return None, None
    return cutmix(images, labels, cfg.mix_probability, cfg.alpha, rng=rng)


class _EpochMeter:
    """Running mean of each loss component over the batches of one epoch."""

    def __init__(self) -> None:
        self.sums: Dict[str, float] = {}
        self.batches = 0

    def add(self, breakdown: LossBreakdown) -> None:
        self.batches += 1
        for name, value in breakdown.to_record().items():
            if value is not None:
                self.sums[name] = self.sums.get(name, 0.0) + value

    def means(self) -> Dict[str, Optional[float]]:
        return {
            name: (self.sums[name] / self.batches if name in self.sums else None) for name in TERMS
        }


def _finish(trace: TrainingTrace, stopper: EarlyStopping, stopped: bool) -> None:
    trace.stop_reason = "patience" if stopped else "max-epochs"
    trace.best_epoch = trace.records[stopper.best_epoch].epoch


def fit_teacher(
    source: DomainDataset,
    config: Optional[TeacherConfig] = None,
    architecture: Optional[ArchitectureSpec] = None,
    seed: Optional[int] = None,
) -> Tuple[ModelHandle, TrainingTrace]:
    """Train a teacher on the source domain and return it frozen with its trace."""
    config = config or TeacherConfig()
    seed = config.seed if seed is None else seed
    train_view = source.split("teacher-train")
    source.split("validation")

    torch.manual_seed(seed)
    model = build_model(architecture, seed=seed)
    optimizer = make_optimizer(model, config.learning_rate, config.momentum)
    loader = AuditedLoader(train_view, source.domain, config.batch_size, seed)
    rng = np.random.default_rng(seed)
    stopper = EarlyStopping(patience=config.patience)
    trace = TrainingTrace(method="teacher")
    best_state = snapshot_state(model)
    stopped = False

    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        meter = _EpochMeter()
        for images, labels in loader:
            mixed, targets = _mix(images, labels, config.cutmix, rng)
            logits = forward(model, mixed if mixed is not None else images).logits
            loss = ce_loss(logits, targets if targets is not None else labels)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            meter.add(LossBreakdown(fsl=None, kd=None, ce=loss, total=loss))
        val_f1 = evaluate_model(model, source, "validation").f1
        means = meter.means()
        trace.append(
            EpochRecord(
                epoch=epoch,
                ce=means["ce"],
                total=means["total"],
                val_f1=val_f1,
                wall_time=time.perf_counter() - started,
            )
        )
        decision = stopper(val_f1)
        logger.info(
            "Teacher %s epoch %d: ce %.4f, validation F1 %.4f",
            source.domain,
            epoch,
            means["ce"] or 0.0,
            val_f1,
        )
        if stopper.improved:
            best_state = snapshot_state(model)
        if decision == "stop":
            stopped = True
            break

    _finish(trace, stopper, stopped)
    restore_state(model, best_state)
    if stopper.best_score < config.min_source_f1:
        raise UnderTrainedTeacherError(
            f"teacher on {source.domain} reached validation F1 {stopper.best_score:.4f}, "
            f"below the required {config.min_source_f1:.2f}"
        )
    freeze(model)
    model.metadata.update(
        {
            "name": f"teacher-{source.domain}",
            "source_domain": source.domain,
            "validation_f1": stopper.best_score,
            "epoch": trace.best_epoch,
            "seed": seed,
        }
    )
    logger.info(
        "Teacher %s frozen at epoch %d (validation F1 %.4f, stop: %s)",
        source.domain,
        trace.best_epoch,
        stopper.best_score,
        trace.stop_reason,
    )
    return model, trace


def train_teacher(
    source: DomainDataset,
    config: Optional[TeacherConfig] = None,
    architecture: Optional[ArchitectureSpec] = None,
    seed: Optional[int] = None,
) -> ModelHandle:
    return fit_teacher(source, config, architecture, seed)[0]


def _check_protocol(teacher: ModelHandle, target: DomainDataset, config: AdaptationConfig) -> None:
    if teacher.trainable:
        raise ProtocolError("the teacher must be frozen before adaptation")
    source_domain = teacher.metadata.get("source_domain")
    if source_domain is not None and source_domain == target.domain:
        raise SourceDataViolation(f"target domain {target.domain!r} is the teacher's source domain")
    adapt_groups = len(target.groups("adapt"))
    if adapt_groups != config.adapt_groups:
        raise DataError(
            f"target {target.domain} has {adapt_groups} adapt groups, expected {config.adapt_groups}"
        )
    target.split("validation")


def adapt_student(
    teacher: ModelHandle,
    target: DomainDataset,
    config: Optional[AdaptationConfig] = None,
) -> Tuple[ModelHandle, TrainingTrace]:
    """
    Adapt a copy of the frozen teacher to the target domain.

    Only the target's adapt split is trained on and only its validation split
    drives early stopping. Returns the best-validation student and the trace.
    """
    config = config or AdaptationConfig()
    _check_protocol(teacher, target, config)
    weights = config.effective_weights()
    method = config.method.value
    adapt_view = target.split("adapt")
    loader = AuditedLoader(
        adapt_view,
        target.domain,
        config.batch_size,
        config.seed,
        forbidden_domain=teacher.metadata.get("source_domain"),
    )
    teacher_binning = config.student_binning == "teacher"
    binner = teacher if teacher_binning else None

    teacher_digest = parameter_digest(teacher)
    torch.manual_seed(config.seed)
    student = clone_model(teacher, trainable=True)
    student.metadata.update(
        {
            "name": f"{method}-{teacher.metadata.get('source_domain', 'source')}-{target.domain}",
            "source_domain": teacher.metadata.get("source_domain"),
            "target_domain": target.domain,
            "method": method,
            "seed": config.seed,
        }
    )
    optimizer = make_optimizer(student, config.learning_rate, config.momentum)

    teacher_store: Optional[FeatureStore] = None
    if config.uses_store:
        teacher_store = build_store(teacher, adapt_view, config.bins, config.batch_size)
    teacher_store_digest = teacher_store.digest() if teacher_store is not None else None

    def stores() -> Optional[StorePair]:
        if teacher_store is None:
            return None
        student_store = refresh_student_store(
            student, adapt_view, config.bins, config.batch_size, confidence_model=binner
        )
        return StorePair(teacher=teacher_store, student=student_store)

    def objective(
        images: torch.Tensor,
        labels: torch.Tensor,
        pair: Optional[StorePair],
        ce_images: Optional[torch.Tensor] = None,
        ce_targets: Optional[torch.Tensor] = None,
    ) -> LossBreakdown:
        return fretal_loss(
            images,
            labels,
            teacher if config.uses_teacher else None,
            student,
            pair,
            config.loss,
            weights=weights,
            ce_images=ce_images,
            ce_targets=ce_targets,
            teacher_binning=teacher_binning,
        )

    rng = np.random.default_rng(config.seed)
    stopper = EarlyStopping(patience=config.patience, min_delta=config.min_delta)
    trace = TrainingTrace(method=method)

    # epoch 0: the untouched copy
    started = time.perf_counter()
    meter = _EpochMeter()
    pair = stores()
    with torch.no_grad():
        for images, labels in loader:
            meter.add(objective(images, labels, pair))
    trace.append(
        EpochRecord(
            epoch=0,
            val_f1=evaluate_model(student, target, "validation").f1,
            wall_time=time.perf_counter() - started,
            **meter.means(),
        )
    )
    stopper(trace.records[-1].val_f1)
    best_state = snapshot_state(student)
    stopped = False

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        meter = _EpochMeter()
        if config.store_refresh == "epoch":
            pair = stores()
        for images, labels in loader:
            if config.store_refresh == "batch":
                pair = stores()
            ce_images, ce_targets = (None, None)
            if weights[2] > 0:
                ce_images, ce_targets = _mix(images, labels, config.cutmix, rng)
            breakdown = objective(images, labels, pair, ce_images, ce_targets)
            optimizer.zero_grad()
            breakdown.total.backward()
            optimizer.step()
            meter.add(breakdown)
        val_f1 = evaluate_model(student, target, "validation").f1
        means = meter.means()
        trace.append(
            EpochRecord(
                epoch=epoch, val_f1=val_f1, wall_time=time.perf_counter() - started, **means
            )
        )
        decision = stopper(val_f1)
        logger.info(
            "%s -> %s epoch %d: total %.4f (fsl %s, kd %s, ce %s), validation F1 %.4f",
            method,
            target.domain,
            epoch,
            means["total"],
            _fmt(means["fsl"]),
            _fmt(means["kd"]),
            _fmt(means["ce"]),
            val_f1,
        )
        if stopper.improved:
            best_state = snapshot_state(student)
        if decision == "stop":
            stopped = True
            break

    _finish(trace, stopper, stopped)
    restore_state(student, best_state)
    trace.source_samples_seen = loader.foreign_seen

    if parameter_digest(teacher) != teacher_digest:
        raise ProtocolError("teacher parameters changed during adaptation")
    if teacher_store is not None:
        rebuilt = build_store(teacher, adapt_view, config.bins, config.batch_size)
        if teacher_store.digest() != teacher_store_digest or rebuilt.digest() != teacher_store_digest:
            raise ProtocolError("teacher feature store changed during adaptation")
    if trace.source_samples_seen:
        raise SourceDataViolation(f"{trace.source_samples_seen} source samples were read")

    student.metadata.update({"epoch": trace.best_epoch, "validation_f1": stopper.best_score})
    logger.info(
        "%s -> %s finished at epoch %d (best %d, validation F1 %.4f, stop: %s)",
        method,
        target.domain,
        trace.records[-1].epoch,
        trace.best_epoch,
        stopper.best_score,
        trace.stop_reason,
    )
    return student, trace


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"
