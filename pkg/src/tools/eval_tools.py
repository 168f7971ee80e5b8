"""
Evaluation Tools

1. evaluate  - F1 / accuracy / confusion counts of one checkpoint on one split
2. zero_shot - every stored teacher on every domain's test split
3. report    - summary tables of a finished run, optionally checked against
               the acceptance thresholds
"""

import logging
from pathlib import Path
from typing import Any, Dict, List

from mcp.types import Tool

from fretal.backbone import load_checkpoint
from fretal.datagen import SPLITS, recompress
from fretal.errors import DataError
from fretal.experiment import load_datasets, teacher_path
from fretal.metrics import evaluate_model, zero_shot_matrix
from fretal.reporting import (
    assert_acceptance,
    check_acceptance,
    read_summary,
    read_zero_shot,
    summary_text,
    write_figure,
    write_zero_shot,
    zero_shot_figure,
)
from tools.common import COMMON_PROPERTIES, require, resolve_config, run_blocking, write_json

logger = logging.getLogger(__name__)


def _evaluate(args: Dict[str, Any]) -> Dict[str, Any]:
    config = resolve_config(args)
    checkpoint = Path(require(args, "checkpoint"))
    domain = require(args, "domain")
    split = args.get("split") or "test"
    model = load_checkpoint(checkpoint)
    dataset = load_datasets(config, [domain])[domain]
    quality = args.get("quality")
    if quality is not None:
        dataset = recompress(dataset, int(quality))
    report = evaluate_model(model, dataset, split, group_vote=config.group_vote)
    return {**report.model_dump(mode="json"), "checkpoint": str(checkpoint), "quality": quality}


async def evaluate(args: Dict[str, Any]) -> Dict[str, Any]:
    """
    Evaluate a checkpoint on a domain split.

    ``quality`` re-encodes the frames at that JPEG quality first
    (cross-quality evaluation). The report is written under ``<out>/evaluations``.
    """
    result = await run_blocking("evaluate", _evaluate, args)
    out = Path(args.get("out") or resolve_config(args).output_dir)
    quality = f"-q{result['quality']}" if result["quality"] is not None else ""
    name = f"{Path(result['checkpoint']).stem}_{result['domain']}_{result['split']}{quality}.json"
    result["path"] = str(await write_json(out / "evaluations" / name, result))
    return result


def _zero_shot(args: Dict[str, Any]) -> Dict[str, Any]:
    config = resolve_config(args)
    datasets = load_datasets(config)
    teachers = {}
    missing = []
    for name in datasets:
        path = teacher_path(config.output_dir, name)
        if path.exists():
            teachers[name] = load_checkpoint(path)
        else:
            missing.append(str(path))
    if missing:
        raise DataError(f"missing teacher checkpoints {missing}; run train-teacher first")
    matrix = zero_shot_matrix(teachers, datasets, "test", config.group_vote)
    path = write_zero_shot(matrix, config.output_dir)
    write_figure(zero_shot_figure(matrix), config.output_dir / "plots" / "zero_shot", config.plot_format)
    return {"path": str(path), "matrix": {row: dict(values) for row, values in matrix.iterrows()}}


async def zero_shot(args: Dict[str, Any]) -> Dict[str, Any]:
    """Evaluate every stored teacher on every domain's test split."""
    return await run_blocking("zero_shot", _zero_shot, args)


def _report(args: Dict[str, Any]) -> Dict[str, Any]:
    config = resolve_config(args)
    run_dir = Path(args.get("run_dir") or config.output_dir)
    summary = read_summary(run_dir)
    matrix_path = run_dir / "zero_shot.csv"
    matrix = read_zero_shot(matrix_path) if matrix_path.exists() else None
    result: Dict[str, Any] = {"run_dir": str(run_dir), "text": summary_text(summary)}
    if args.get("check"):
        assert_acceptance(summary, matrix, config.acceptance)
        result["failures"] = []
    else:
        result["failures"] = check_acceptance(summary, matrix, config.acceptance)
    return result


async def report(args: Dict[str, Any]) -> Dict[str, Any]:
    """Render a run's summary; with ``check`` unmet thresholds raise AcceptanceError."""
    return await run_blocking("report", _report, args)


def get_eval_tools() -> List[Tool]:
    return [
        Tool(
            name="evaluate",
            description="Evaluate a checkpoint on one split of a domain (F1, accuracy, confusion counts)",
            inputSchema={
                "type": "object",
                "properties": {
                    **COMMON_PROPERTIES,
                    "checkpoint": {"type": "string", "description": "Checkpoint path"},
                    "domain": {"type": "string", "description": "Domain name"},
                    "split": {"type": "string", "enum": list(SPLITS), "default": "test"},
                    "quality": {"type": "integer", "description": "Re-encode frames at this JPEG quality"},
                },
                "required": ["checkpoint", "domain"],
            },
        ),
        Tool(
            name="zero_shot",
            description="Zero-shot F1 matrix of every stored teacher on every domain",
            inputSchema={"type": "object", "properties": dict(COMMON_PROPERTIES)},
        ),
        Tool(
            name="report",
            description="Summary tables of a run; check=true enforces the acceptance thresholds",
            inputSchema={
                "type": "object",
                "properties": {
                    **COMMON_PROPERTIES,
                    "run_dir": {"type": "string", "description": "Run directory (default: out)"},
                    "check": {"type": "boolean", "default": False},
                },
            },
        ),
    ]
