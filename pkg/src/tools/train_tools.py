"""
Training Tools

1. train_teacher  - train (or reuse) the frozen teacher of one source domain
2. adapt          - adapt a teacher to a target domain with one method
3. run_experiment - the whole grid: teachers, zero-shot matrix, adaptation cells
"""

import logging
from pathlib import Path
from typing import Any, Dict, List

from mcp.types import Tool

from fretal.config import Method
from fretal.errors import ConfigError, DataError
from fretal.experiment import (
    cell_dir,
    load_datasets,
    load_teacher,
    run_cell,
    run_experiment,
    teacher_path,
    train_or_load_teacher,
)
from tools.common import COMMON_PROPERTIES, require, resolve_config, run_blocking

logger = logging.getLogger(__name__)

METHOD_NAMES = [m.value for m in Method]


def _train_teacher(args: Dict[str, Any]) -> Dict[str, Any]:
    config = resolve_config(args)
    source = require(args, "source")
    dataset = load_datasets(config, [source])[source]
    teacher, status = train_or_load_teacher(config, dataset, config.output_dir)
    return {
        "source": source,
        "checkpoint": str(teacher_path(config.output_dir, source)),
        "status": status,
        "validation_f1": teacher.metadata.get("validation_f1"),
        "epoch": teacher.metadata.get("epoch"),
    }


async def train_teacher(args: Dict[str, Any]) -> Dict[str, Any]:
    """Train a teacher on the source domain and freeze it (reused when cached)."""
    return await run_blocking("train_teacher", _train_teacher, args)


def _parse_method(value: Any) -> Method:
    try:
        return Method(value)
    except ValueError as e:
        raise ConfigError(f"unknown method {value!r}; expected one of {METHOD_NAMES}") from e


def _adapt(args: Dict[str, Any]) -> Dict[str, Any]:
    config = resolve_config(args)
    target = require(args, "target")
    method = _parse_method(args.get("method") or config.adaptation.method.value)
    if args.get("teacher"):
        checkpoint = Path(args["teacher"])
    else:
        checkpoint = teacher_path(config.output_dir, require(args, "source"))
    if not checkpoint.exists():
        raise DataError(f"no teacher checkpoint at {checkpoint}; run train-teacher first")
    teacher = load_teacher(checkpoint)
    source = args.get("source") or teacher.metadata.get("source_domain")
    if not source:
        raise ConfigError("the teacher checkpoint does not name its source domain; pass source")
    datasets = load_datasets(config, [source, target])
    seed = config.adaptation.seed
    report, trace = run_cell(
        config, teacher, datasets[source], datasets[target], method, seed, config.output_dir
    )
    return {
        "report": report.model_dump(mode="json"),
        "stop_reason": trace.stop_reason,
        "best_epoch": trace.best_epoch,
        "epochs": len(trace.records) - 1,
        "source_samples_seen": trace.source_samples_seen,
        "artifacts": str(cell_dir(config.output_dir, source, target, method, seed)),
    }


async def adapt(args: Dict[str, Any]) -> Dict[str, Any]:
    """Adapt a frozen teacher's copy to the target domain without source data."""
    return await run_blocking("adapt", _adapt, args)


def _run_experiment(args: Dict[str, Any]) -> Dict[str, Any]:
    config = resolve_config(args)
    result = run_experiment(config)
    return {
        "output_dir": str(result.output_dir),
        "summary": result.manifest["summary"],
        "teachers": result.manifest["teachers"],
        "failed_cells": [c for c in result.manifest["cells"] if c["status"] != "ok"],
        "cells": len(result.manifest["cells"]),
    }


async def run_experiment_tool(args: Dict[str, Any]) -> Dict[str, Any]:
    """Run the configured experiment grid and write every artifact."""
    return await run_blocking("run_experiment", _run_experiment, args)


def get_train_tools() -> List[Tool]:
    return [
        Tool(
            name="train_teacher",
            description="Train and freeze the teacher detector of one source domain",
            inputSchema={
                "type": "object",
                "properties": {
                    **COMMON_PROPERTIES,
                    "source": {"type": "string", "description": "Source domain name"},
                },
                "required": ["source"],
            },
        ),
        Tool(
            name="adapt",
            description="Adapt a frozen teacher to a target domain (FReTAL, FT, KD or an ablation)",
            inputSchema={
                "type": "object",
                "properties": {
                    **COMMON_PROPERTIES,
                    "target": {"type": "string", "description": "Target domain name"},
                    "source": {"type": "string", "description": "Source domain (locates the teacher)"},
                    "teacher": {"type": "string", "description": "Teacher checkpoint path"},
                    "method": {"type": "string", "enum": METHOD_NAMES},
                },
                "required": ["target"],
            },
        ),
        Tool(
            name="run_experiment",
            description="Run teachers, zero-shot matrix and every adaptation cell of a config",
            inputSchema={"type": "object", "properties": dict(COMMON_PROPERTIES)},
        ),
    ]
