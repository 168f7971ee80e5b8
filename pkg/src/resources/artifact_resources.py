"""
Artifact Resources

Exposes the text artifacts of the output directory (summaries, zero-shot
matrix, run manifest, reports, traces, feature-store snapshots) as MCP
resources under ``fretal://<relative path>``. Checkpoints are binary and are
not listed.
"""

import logging
from pathlib import Path
from typing import List

from mcp.types import Resource

from tools.common import read_text

logger = logging.getLogger(__name__)

URI_SCHEME = "fretal://"

MIME_TYPES = {
    ".csv": "text/csv",
    ".txt": "text/plain",
    ".json": "application/json",
    ".jsonl": "application/jsonl",
}


def get_artifact_resources(output_dir: Path) -> List[Resource]:
    output_dir = Path(output_dir)
    if not output_dir.is_dir():
        return []
    resources = []
    for path in sorted(output_dir.rglob("*")):
        mime = MIME_TYPES.get(path.suffix)
        if mime is None or not path.is_file():
            continue
        relative = path.relative_to(output_dir).as_posix()
        resources.append(
            Resource(
                uri=f"{URI_SCHEME}{relative}",
                name=relative,
                description=f"Run artifact: {relative}",
                mimeType=mime,
            )
        )
    return resources


def resolve_artifact(output_dir: Path, uri: str) -> Path:
    if not uri.startswith(URI_SCHEME):
        raise ValueError(f"Unsupported resource type: {uri}")
    root = Path(output_dir).resolve()
    path = (root / uri[len(URI_SCHEME):].rstrip("/")).resolve()
    if root not in path.parents or not path.is_file():
        raise ValueError(f"Resource not found: {uri}")
    if path.suffix not in MIME_TYPES:
        raise ValueError(f"Resource is not a text artifact: {uri}")
    return path


async def read_artifact(output_dir: Path, uri: str) -> str:
    return await read_text(resolve_artifact(output_dir, uri))
