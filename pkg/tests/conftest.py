"""Shared fixtures: tiny domains, a small architecture and frozen models."""

import os
import sys
from pathlib import Path

import pandas as pd
import pytest

# Add src directory to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from fretal.backbone import build_model, freeze
from fretal.config import (
    AdaptationConfig,
    ArchitectureSpec,
    CutMixConfig,
    GeneratorConfig,
    preset_domain,
)
from fretal.datagen import generate_domain
from fretal.reporting import summary_frame, write_summary, write_zero_shot

TINY_GENERATOR = GeneratorConfig(n_groups=40, clips_per_group=2, frames_per_clip=1)
TINY_ARCH = ArchitectureSpec(channels=(8, 8, 8), feature_dim=16)
SMOKE_CONFIG = str(Path(__file__).parent.parent / "data" / "smoke.json")


@pytest.fixture(scope="session")
def tiny_generator() -> GeneratorConfig:
    return TINY_GENERATOR


@pytest.fixture(scope="session")
def tiny_arch() -> ArchitectureSpec:
    return TINY_ARCH


@pytest.fixture(scope="session")
def domain_a():
    return generate_domain(preset_domain("A", "blend"), n_groups=40, seed=0, generator=TINY_GENERATOR)


@pytest.fixture(scope="session")
def domain_b():
    return generate_domain(preset_domain("B", "tint"), n_groups=40, seed=0, generator=TINY_GENERATOR)


@pytest.fixture
def frozen_teacher():
    """A random-weight frozen model standing in for a teacher trained on domain A."""
    teacher = freeze(build_model(TINY_ARCH, seed=1))
    teacher.metadata.update({"name": "teacher-A", "source_domain": "A"})
    return teacher


@pytest.fixture
def quick_adaptation() -> AdaptationConfig:
    return AdaptationConfig(
        max_epochs=3,
        patience=2,
        batch_size=8,
        cutmix=CutMixConfig(enabled=True, mix_probability=0.5),
    )


def write_run(run_dir: Path, fretal_avg: float = 0.86) -> None:
    """A hand-made finished run: one pair, three methods, one seed."""
    rows = [
        {"source": "blend", "target": "tint", "method": "FT", "seed": 0,
         "source_f1": 0.90, "target_f1": 0.60, "avg_f1": 0.75, "status": "ok"},
        {"source": "blend", "target": "tint", "method": "KD", "seed": 0,
         "source_f1": 0.85, "target_f1": 0.70, "avg_f1": 0.775, "status": "ok"},
        {"source": "blend", "target": "tint", "method": "FReTAL", "seed": 0,
         "source_f1": 0.92, "target_f1": 2 * fretal_avg - 0.92, "avg_f1": fretal_avg, "status": "ok"},
    ]
    write_summary(summary_frame(rows), run_dir)
    matrix = pd.DataFrame(
        {"blend": [0.99, 0.40], "tint": [0.45, 0.98]}, index=pd.Index(["blend", "tint"], name="teacher")
    )
    write_zero_shot(matrix, run_dir)
