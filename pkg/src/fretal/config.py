"""
Configuration models.

All configuration is expressed as pydantic models so that:
1. Unknown keys are rejected
2. Numeric invariants are validated up front
3. Defaults match the published implementation details
4. Experiment documents round-trip through JSON
"""

import json
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from fretal.errors import ConfigError

OUTPUT_ROOT_ENV = "FRETAL_OUTPUT_ROOT"
IMAGE_SIZE = 128
NUM_CLASSES = 2


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Method(str, Enum):
    """Adaptation methods; the ablations drop one FReTAL component each."""

    FT = "FT"
    KD = "KD"
    FRETAL = "FReTAL"
    FRETAL_NO_FSL = "FReTAL-noFSL"
    FRETAL_NO_CE = "FReTAL-noCE"


class BinSpec(StrictModel):
    """Confidence bins [λ_a, λ_b] in steps of i."""

    lambda_a: float = Field(0.5, ge=0.0, le=1.0)
    lambda_b: float = Field(1.0, gt=0.0, le=1.0)
    step: float = Field(0.1, gt=0.0)

    @model_validator(mode="after")
    def _check_divisible(self) -> "BinSpec":
        if self.lambda_b <= self.lambda_a:
            raise ValueError("lambda_b must exceed lambda_a")
        ratio = (self.lambda_b - self.lambda_a) / self.step
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(
                f"(lambda_b - lambda_a) / step must be a positive integer, got {ratio}"
            )
        return self

    @property
    def num_bins(self) -> int:
        return int(round((self.lambda_b - self.lambda_a) / self.step))

    @property
    def edges(self) -> List[float]:
        # rounded so that 0.5 + 3 * 0.1 lands exactly on 0.8
        return [round(self.lambda_a + k * self.step, 12) for k in range(self.num_bins)] + [
            self.lambda_b
        ]


class LossConfig(StrictModel):
    temperature: float = Field(20.0, gt=0.0)
    rho1: float = Field(1.0, ge=0.0)
    rho2: float = Field(1.0, ge=0.0)
    rho3: float = Field(1.0, ge=0.0)

    @property
    def weights(self) -> Tuple[float, float, float]:
        return (self.rho1, self.rho2, self.rho3)


class CutMixConfig(StrictModel):
    enabled: bool = True
    mix_probability: float = Field(0.5, ge=0.0, le=1.0)
    alpha: float = Field(1.0, gt=0.0)


class ArchitectureSpec(StrictModel):
    """Reference convolutional detector: conv blocks, global pooling, dense feature layer."""

    channels: Tuple[int, ...] = (16, 32, 64, 64)
    feature_dim: int = Field(64, gt=0)
    image_size: int = IMAGE_SIZE
    num_classes: int = NUM_CLASSES

    @field_validator("channels")
    @classmethod
    def _three_to_five_blocks(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not 3 <= len(value) <= 5 or any(c <= 0 for c in value):
            raise ValueError("channels must list 3 to 5 positive widths")
        return value

    @field_validator("image_size")
    @classmethod
    def _fixed_image_size(cls, value: int) -> int:
        if value != IMAGE_SIZE:
            raise ValueError(f"image_size is fixed at {IMAGE_SIZE}")
        return value

    @field_validator("num_classes")
    @classmethod
    def _binary(cls, value: int) -> int:
        if value != NUM_CLASSES:
            raise ValueError("the detector is binary (real, fake)")
        return value


class TeacherConfig(StrictModel):
    max_epochs: int = Field(30, ge=1)
    learning_rate: float = Field(0.05, gt=0.0)
    momentum: float = Field(0.1, ge=0.0)
    batch_size: int = Field(32, ge=1)
    patience: int = Field(5, ge=1)
    min_source_f1: float = Field(0.90, ge=0.0, le=1.0)
    seed: int = 0
    cutmix: CutMixConfig = CutMixConfig()


class AdaptationConfig(StrictModel):
    bins: BinSpec = BinSpec()
    loss: LossConfig = LossConfig()
    learning_rate: float = Field(0.05, gt=0.0)
    momentum: float = Field(0.1, ge=0.0)
    max_epochs: int = Field(100, ge=1)
    patience: int = Field(5, ge=1)
    min_delta: float = Field(1e-6, ge=0.0)
    batch_size: int = Field(32, ge=1)
    seed: int = 0
    method: Method = Method.FRETAL
    store_refresh: Literal["epoch", "batch"] = "epoch"
    student_binning: Literal["own", "teacher"] = "own"
    adapt_groups: int = Field(10, ge=1)
    cutmix: CutMixConfig = CutMixConfig()

    def effective_weights(self) -> Tuple[float, float, float]:
        """(ρ₁, ρ₂, ρ₃) actually used by the configured method."""
        rho1, rho2, rho3 = self.loss.weights
        if self.method is Method.FT:
            return (0.0, 0.0, 1.0)
        if self.method is Method.KD:
            return (0.0, 1.0, 0.0)
        if self.method is Method.FRETAL_NO_FSL:
            return (0.0, rho2, rho3)
        if self.method is Method.FRETAL_NO_CE:
            return (rho1, rho2, 0.0)
        return (rho1, rho2, rho3)

    @property
    def uses_teacher(self) -> bool:
        return self.effective_weights()[1] > 0 or self.uses_store

    @property
    def uses_store(self) -> bool:
        return self.effective_weights()[0] > 0


Artifact = Literal["blend", "tint", "ripple", "checker"]


class DomainSpec(StrictModel):
    """Manipulation fingerprint of one synthetic domain."""

    name: str = Field(..., min_length=1, pattern=r"^[A-Za-z0-9_\-]+$")
    artifact: Artifact
    strength: float = Field(0.1, gt=0.0, le=1.0)
    period: float = Field(6.0, ge=2.0)
    angle: float = 0.0
    tint: Tuple[float, float, float] = (1.0, -0.2, -1.0)
    compression_quality: Optional[int] = Field(None, ge=1, le=95)

    @property
    def quality_label(self) -> str:
        return "HQ" if self.compression_quality is None else "LQ"


def preset_domain(name: str, artifact: Artifact, lq: bool = True) -> DomainSpec:
    """Preset fingerprints standing in for the four manipulation families."""
    presets: Dict[str, Dict[str, Any]] = {
        "blend": {"strength": 0.12},
        "tint": {"strength": 0.10, "tint": (1.0, -0.3, -1.0)},
        "ripple": {"strength": 0.08, "period": 6.0, "angle": 30.0},
        "checker": {"strength": 0.10},
    }
    return DomainSpec(
        name=name,
        artifact=artifact,
        compression_quality=40 if lq else None,
        **presets[artifact],
    )


def default_domains() -> List[DomainSpec]:
    return [preset_domain(name, name) for name in ("blend", "tint", "ripple")]  # type: ignore[arg-type]


class GeneratorConfig(StrictModel):
    n_groups: int = Field(110, ge=40)
    clips_per_group: int = Field(16, ge=1)
    frames_per_clip: int = Field(5, ge=1)
    adapt_groups: int = Field(10, ge=1)

    @property
    def frames_per_group(self) -> int:
        return self.clips_per_group * self.frames_per_clip


class IngestConfig(StrictModel):
    root: Path
    manifest: Path
    expected_frames: int = Field(80, ge=1)


class AcceptanceThresholds(StrictModel):
    min_diagonal_f1: float = 0.95
    min_zero_shot_gap: float = 0.20
    min_fretal_margin_over_ft: float = 0.03


def _default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


class ExperimentConfig(StrictModel):
    domains: List[DomainSpec] = Field(default_factory=list)
    generator: GeneratorConfig = GeneratorConfig()
    ingest: Optional[IngestConfig] = None
    pairs: Optional[List[Tuple[str, str]]] = None
    methods: List[Method] = Field(
        default_factory=lambda: [Method.FT, Method.KD, Method.FRETAL]
    )
    seeds: List[int] = Field(default_factory=lambda: [0])
    seed: int = 0
    architecture: ArchitectureSpec = ArchitectureSpec()
    teacher: TeacherConfig = TeacherConfig()
    adaptation: AdaptationConfig = AdaptationConfig()
    output_dir: Path = Field(default_factory=_default_output_dir)
    workers: int = Field(1, ge=1)
    group_vote: bool = False
    plot_format: Literal["html", "png"] = "html"
    acceptance: AcceptanceThresholds = AcceptanceThresholds()

    @model_validator(mode="after")
    def _check_domains(self) -> "ExperimentConfig":
        if not self.domains and self.ingest is None:
            raise ValueError("either domains or ingest must be given")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate domain names: {names}")
        if self.pairs and self.domains:
            for source, target in self.pairs:
                for name in (source, target):
                    if name not in names:
                        raise ValueError(f"pair references unknown domain: {name}")
                if source == target:
                    raise ValueError(f"source and target must differ: {source}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.ingest is None and self.generator.adapt_groups != self.adaptation.adapt_groups:
            raise ValueError(
                f"generator.adapt_groups ({self.generator.adapt_groups}) must equal "
                f"adaptation.adapt_groups ({self.adaptation.adapt_groups})"
            )
        return self

    @property
    def domain_names(self) -> List[str]:
        return [d.name for d in self.domains]

    def resolved_pairs(self, domain_names: Optional[List[str]] = None) -> List[Tuple[str, str]]:
        names = domain_names if domain_names is not None else self.domain_names
        if self.pairs:
            return [tuple(p) for p in self.pairs]  # type: ignore[misc]
        return [(s, t) for s in names for t in names if s != t]


def apply_overrides(document: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Apply dotted-key overrides (``adaptation.loss.temperature=4``) to a raw document."""
    result = json.loads(json.dumps(document, default=str))
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = result
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {dotted}: {part} is not a section")
        node[parts[-1]] = value
    return result


def validate_config(model: type, document: Dict[str, Any]) -> Any:
    try:
        return model.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {e}") from e


def load_experiment_config(
    path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None
) -> ExperimentConfig:
    """
    Read an experiment document, apply overrides, and validate it.

    Without a document the three preset LQ domains are used.
    """
    document: Dict[str, Any] = {"domains": [d.model_dump(mode="json") for d in default_domains()]}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from e
        if not isinstance(document, dict):
            raise ConfigError(f"config root must be an object: {path}")
    document = apply_overrides(document, overrides or {})
    return validate_config(ExperimentConfig, document)
