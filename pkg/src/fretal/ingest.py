"""
Ingestion of pre-cropped face frames.

Frames are expected at ``<root>/<domain>/<split>/<group_id>/<frame_index>.png``
and a manifest (CSV: domain, group_id, label, split) lists every group.
Non-square frames are centre-cropped to a square and resized to 128x128;
they are never stretched.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from fretal.config import IMAGE_SIZE
from fretal.datagen import LABEL_IDS, MANIFEST_COLUMNS, SPLITS, DomainDataset
from fretal.errors import IngestionError

logger = logging.getLogger(__name__)

FRAME_SUFFIXES = {".png", ".jpg", ".jpeg"}


def center_crop_resize(image: Image.Image, size: int = IMAGE_SIZE) -> np.ndarray:
    """Largest centred square, resized to size x size RGB uint8."""
    width, height = image.size
    side = min(width, height)
    left = (width - side) // 2
    top = (height - side) // 2
    square = image.convert("RGB").crop((left, top, left + side, top + side))
    if side != size:
        square = square.resize((size, size), Image.BILINEAR)
    return np.asarray(square, dtype=np.uint8)


def read_manifest(manifest: Union[Path, pd.DataFrame]) -> pd.DataFrame:
    if isinstance(manifest, pd.DataFrame):
        frame = manifest.copy()
    else:
        path = Path(manifest)
        if not path.exists():
            raise IngestionError("manifest not found", [str(path)])
        try:
            frame = pd.read_csv(path)
        except Exception as e:
            raise IngestionError(f"unreadable manifest ({e})", [str(path)]) from e

    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise IngestionError(f"manifest lacks columns {missing}")
    bad_labels = sorted(set(frame["label"]) - set(LABEL_IDS))
    if bad_labels:
        raise IngestionError(f"manifest has unknown labels {bad_labels}")
    bad_splits = sorted(set(frame["split"]) - set(SPLITS))
    if bad_splits:
        raise IngestionError(f"manifest has unknown splits {bad_splits}")
    duplicated = frame.duplicated(["domain", "group_id"])
    if duplicated.any():
        raise IngestionError(
            "manifest lists groups twice",
            [f"{r.domain}/{r.group_id}" for r in frame[duplicated].itertuples()],
        )
    return frame


def ingest_frames(
    root: Path,
    manifest: Union[Path, pd.DataFrame],
    domain: Optional[str] = None,
    expected_frames: int = 80,
) -> DomainDataset:
    """
    Build a DomainDataset from a frame tree and its manifest.

    Every missing group directory and unreadable frame is collected before a
    single IngestionError is raised. Groups with a frame count other than
    ``expected_frames`` are accepted with a warning.
    """
    root = Path(root)
    frame = read_manifest(manifest)
    domains = sorted(frame["domain"].unique())
    if domain is None:
        if len(domains) != 1:
            raise IngestionError(f"manifest lists several domains {domains}; pick one")
        domain = domains[0]
    rows = frame[frame["domain"] == domain].sort_values("group_id")
    if rows.empty:
        raise IngestionError(f"manifest has no groups for domain {domain!r}")

    images: List[np.ndarray] = []
    labels: List[int] = []
    group_ids: List[int] = []
    frame_indices: List[int] = []
    group_splits: Dict[int, str] = {}
    failures: List[str] = []

    for row in rows.itertuples():
        group = int(row.group_id)
        group_dir = root / domain / row.split / str(group)
        if not group_dir.is_dir():
            failures.append(str(group_dir))
            continue
        files = [p for p in group_dir.iterdir() if p.suffix.lower() in FRAME_SUFFIXES]
        try:
            files.sort(key=lambda p: int(p.stem))
        except ValueError:
            failures.extend(str(p) for p in files if not p.stem.isdigit())
            continue
        usable = 0
        for path in files:
            try:
                with Image.open(path) as image:
                    pixels = center_crop_resize(image)
            except (UnidentifiedImageError, OSError):
                failures.append(str(path))
                continue
            images.append(pixels)
            labels.append(LABEL_IDS[row.label])
            group_ids.append(group)
            frame_indices.append(int(path.stem))
            usable += 1
        if usable != expected_frames:
            logger.warning(
                "Group %s/%d has %d usable frames (expected %d)",
                domain,
                group,
                usable,
                expected_frames,
            )
        group_splits[group] = row.split

    if failures:
        raise IngestionError("could not ingest", failures)
    if not images:
        raise IngestionError(f"no frames found for domain {domain!r} under {root}")

    dataset = DomainDataset(
        domain=domain,
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        group_ids=np.asarray(group_ids, dtype=np.int64),
        frame_indices=np.asarray(frame_indices, dtype=np.int64),
        group_splits=group_splits,
    )
    dataset.check_disjoint()
    logger.info("Ingested %d frames in %d groups for %s", len(dataset), len(group_splits), domain)
    return dataset


def ingest_all(root: Path, manifest: Path, expected_frames: int = 80) -> Dict[str, DomainDataset]:
    frame = read_manifest(manifest)
    return {
        domain: ingest_frames(root, frame, domain=domain, expected_frames=expected_frames)
        for domain in sorted(frame["domain"].unique())
    }
