"""
Data Tools

1. generate_data - render the configured synthetic domains to a frame tree
2. ingest_data   - load and validate a pre-cropped frame tree
"""

import logging
from pathlib import Path
from typing import Any, Dict, List

from mcp.types import Tool

from fretal.datagen import SPLITS, DomainDataset, class_balance, write_dataset
from fretal.experiment import load_datasets
from fretal.ingest import ingest_all
from tools.common import COMMON_PROPERTIES, resolve_config, run_blocking, write_json

logger = logging.getLogger(__name__)


def describe_dataset(dataset: DomainDataset) -> Dict[str, Any]:
    splits = {}
    for split in SPLITS:
        if not dataset.groups(split):
            continue
        real, fake = class_balance(dataset, split)
        splits[split] = {"groups": real + fake, "real": real, "fake": fake}
    return {"frames": len(dataset), "groups": len(dataset.groups()), "splits": splits}


def _generate(args: Dict[str, Any]) -> Dict[str, Any]:
    config = resolve_config(args)
    root = Path(args.get("data_dir") or config.output_dir / "data")
    names = args.get("domains") or None
    datasets = load_datasets(config.model_copy(update={"ingest": None}), names)
    manifest = None
    for dataset in datasets.values():
        manifest = write_dataset(dataset, root)
    return {
        "root": str(root),
        "manifest": str(manifest),
        "domains": {name: describe_dataset(d) for name, d in datasets.items()},
    }


async def generate_data(args: Dict[str, Any]) -> Dict[str, Any]:
    """
    Generate the configured domains and write
    ``<data_dir>/<domain>/<split>/<group>/<frame>.png`` plus ``manifest.csv``.
    """
    result = await run_blocking("generate_data", _generate, args)
    logger.info("Generated %d domain(s) under %s", len(result["domains"]), result["root"])
    return result


def _ingest(args: Dict[str, Any]) -> Dict[str, Any]:
    config = resolve_config(args)
    root = args.get("root") or (config.ingest.root if config.ingest else None)
    manifest = args.get("manifest") or (config.ingest.manifest if config.ingest else None)
    if root is None or manifest is None:
        raise ValueError("root and manifest are required (arguments or config.ingest)")
    expected = args.get("expected_frames") or (config.ingest.expected_frames if config.ingest else 80)
    datasets = ingest_all(Path(root), Path(manifest), expected)
    return {
        "root": str(root),
        "manifest": str(manifest),
        "domains": {name: describe_dataset(d) for name, d in datasets.items()},
    }


async def ingest_data(args: Dict[str, Any]) -> Dict[str, Any]:
    """Validate a frame tree against its manifest; the summary is written to ``<out>/ingest.json``."""
    result = await run_blocking("ingest", _ingest, args)
    out = Path(args.get("out") or resolve_config(args).output_dir)
    result["summary"] = str(await write_json(out / "ingest.json", result))
    return result


def get_data_tools() -> List[Tool]:
    return [
        Tool(
            name="generate_data",
            description="Generate synthetic real/fake face domains and write them as a frame tree",
            inputSchema={
                "type": "object",
                "properties": {
                    **COMMON_PROPERTIES,
                    "domains": {
                        "type": "array",
                        "items": {"type": "string"},
                        "description": "Subset of configured domain names (default: all)",
                    },
                    "data_dir": {"type": "string", "description": "Frame tree root (default <out>/data)"},
                },
            },
        ),
        Tool(
            name="ingest",
            description="Ingest pre-cropped face frames listed in a manifest",
            inputSchema={
                "type": "object",
                "properties": {
                    **COMMON_PROPERTIES,
                    "root": {"type": "string", "description": "Frame tree root"},
                    "manifest": {"type": "string", "description": "Manifest CSV (domain, group_id, label, split)"},
                    "expected_frames": {"type": "integer", "description": "Frames expected per group"},
                },
            },
        ),
    ]
