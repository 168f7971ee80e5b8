"""
Shared plumbing for the tool handlers.

Every handler takes the same common arguments:
- config:    path to an experiment JSON document (optional)
- overrides: dotted-key overrides applied on top of the document
- seed:      master seed; sets the data, teacher and adaptation seeds
- out:       output directory (defaults to FRETAL_OUTPUT_ROOT, then "runs")
"""

import asyncio
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, TypeVar

import aiofiles

from fretal.config import ExperimentConfig, load_experiment_config
from fretal.errors import FretalError

logger = logging.getLogger(__name__)

T = TypeVar("T")

COMMON_PROPERTIES: Dict[str, Any] = {
    "config": {"type": "string", "description": "Path to an experiment JSON document"},
    "overrides": {
        "type": "object",
        "description": "Dotted-key overrides, e.g. {\"adaptation.loss.temperature\": 4}",
    },
    "seed": {"type": "integer", "description": "Master seed (data, teacher and adaptation)"},
    "out": {"type": "string", "description": "Output directory"},
}


def resolve_config(args: Dict[str, Any]) -> ExperimentConfig:
    overrides = dict(args.get("overrides") or {})
    seed = args.get("seed")
    if seed is not None:
        overrides.update(
            {"seed": seed, "teacher.seed": seed, "adaptation.seed": seed, "seeds": [seed]}
        )
    if args.get("out"):
        overrides["output_dir"] = str(args["out"])
    return load_experiment_config(args.get("config"), overrides)


def require(args: Dict[str, Any], key: str) -> Any:
    value = args.get(key)
    if value is None or value == "":
        raise ValueError(f"{key} is required")
    return value


async def run_blocking(name: str, func: Callable[..., T], *args: Any) -> T:
    """
    Run a compute-bound step off the event loop.

    Library errors pass through unchanged; anything else becomes
    ``Exception("<name> failed: ...")``.
    """
    try:
        return await asyncio.to_thread(func, *args)
    except FretalError:
        raise
    except Exception as e:
        logger.error("%s failed: %s", name, e)
        raise Exception(f"{name} failed: {e}") from e


async def write_json(path: Path, document: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8") as file:
        await file.write(json.dumps(document, indent=2, sort_keys=True, default=str) + "\n")
    return path


async def read_text(path: Path) -> str:
    async with aiofiles.open(path, "r", encoding="utf-8") as file:
        return await file.read()
