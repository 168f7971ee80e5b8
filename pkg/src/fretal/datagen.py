"""
Synthetic multi-domain face datasets.

This module provides:
1. A procedural face-like texture process shared by every domain (the
   "real" class)
2. Per-domain manipulation fingerprints added on top of real frames (the
   "fake" class), optionally followed by JPEG compression for low quality
3. The group ("video") abstraction: clips of consecutive, slightly jittered
   frames sharing one label and domain
4. The split protocol: teacher-train / adapt / validation / test groups,
   disjoint and label-balanced
5. Dataset views usable with torch DataLoaders and a PNG tree + manifest
   writer
"""

import hashlib
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import torch
from PIL import Image
from torch.utils.data import Dataset

from fretal.config import IMAGE_SIZE, DomainSpec, GeneratorConfig
from fretal.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

REAL, FAKE = 0, 1
LABEL_NAMES = {REAL: "real", FAKE: "fake"}
LABEL_IDS = {name: label for label, name in LABEL_NAMES.items()}
SPLITS = ("teacher-train", "adapt", "validation", "test")
MANIFEST_COLUMNS = ["domain", "group_id", "label", "split"]


def normalize(images: np.ndarray) -> np.ndarray:
    """uint8 pixels -> [-1, 1] with centre 0.5 and scale 0.5 per channel."""
    return (images.astype(np.float32) / 255.0 - 0.5) / 0.5


@dataclass
class DomainDataset:
    """
    All frames of one domain, stored as uint8 pixels.

    Normalisation to [-1, 1] is applied whenever frames are read.
    """

    domain: str
    images: np.ndarray  # (N, H, W, 3) uint8
    labels: np.ndarray  # (N,) int64
    group_ids: np.ndarray  # (N,) int64
    frame_indices: np.ndarray  # (N,) int64
    group_splits: Dict[int, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def groups(self, split: Optional[str] = None) -> List[int]:
        return sorted(g for g, s in self.group_splits.items() if split is None or s == split)

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise DataError(f"unknown split: {split}")
        members = set(self.groups(split))
        if not members:
            raise DataError(f"split {split!r} is empty in domain {self.domain}")
        return np.flatnonzero(np.isin(self.group_ids, sorted(members)))

    def split(self, split: str) -> "SplitView":
        return SplitView(self, self.indices(split), split)

    def check_disjoint(self) -> None:
        """Each group appears in exactly one split and has one label."""
        for group in np.unique(self.group_ids):
            if int(group) not in self.group_splits:
                raise DataError(f"group {group} of {self.domain} has no split")
            labels = np.unique(self.labels[self.group_ids == group])
            if labels.size != 1:
                raise DataError(f"group {group} of {self.domain} mixes labels")

    def group_label(self, group_id: int) -> int:
        return int(self.labels[np.argmax(self.group_ids == group_id)])

    def manifest(self) -> pd.DataFrame:
        rows = [
            {
                "domain": self.domain,
                "group_id": group,
                "label": LABEL_NAMES[self.group_label(group)],
                "split": split,
            }
            for group, split in sorted(self.group_splits.items())
        ]
        return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)

    def digest(self) -> str:
        digest = hashlib.sha256(self.domain.encode("utf-8"))
        for array in (self.images, self.labels, self.group_ids, self.frame_indices):
            digest.update(np.ascontiguousarray(array).tobytes())
        digest.update(repr(sorted(self.group_splits.items())).encode("utf-8"))
        return digest.hexdigest()


class SplitView(Dataset):
    """One split of a domain; items are (image CHW in [-1, 1], label, domain)."""

    def __init__(self, dataset: DomainDataset, indices: np.ndarray, split: str):
        self.dataset = dataset
        self.indices = indices
        self.split = split

    @property
    def domain(self) -> str:
        return self.dataset.domain

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def __getitem__(self, item: int) -> Tuple[torch.Tensor, int, str]:
        i = int(self.indices[item])
        image = torch.from_numpy(normalize(self.dataset.images[i])).permute(2, 0, 1)
        return image, int(self.dataset.labels[i]), self.dataset.domain

    @property
    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.indices]

    @property
    def group_ids(self) -> np.ndarray:
        return self.dataset.group_ids[self.indices]


# ---------------------------------------------------------------------------
# Procedural faces
# ---------------------------------------------------------------------------

_GRID_Y, _GRID_X = np.mgrid[0:IMAGE_SIZE, 0:IMAGE_SIZE].astype(np.float32) / (IMAGE_SIZE - 1)


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "little")


def _smooth_field(rng: np.random.Generator, cells: int, channels: int) -> np.ndarray:
    """Low-frequency random field in [0, 1], upsampled bicubically."""
    coarse = rng.random((cells, cells, channels)).astype(np.float32)
    planes = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(coarse[..., c])).resize(
                (IMAGE_SIZE, IMAGE_SIZE), Image.BICUBIC
            )
        )
        for c in range(channels)
    ]
    return np.clip(np.stack(planes, axis=-1), 0.0, 1.0)


def _ellipse(cx: float, cy: float, rx: float, ry: float, softness: float = 0.01) -> np.ndarray:
    d = ((_GRID_X - cx) / rx) ** 2 + ((_GRID_Y - cy) / ry) ** 2
    return np.clip((1.0 - d) / softness, 0.0, 1.0)


@dataclass(frozen=True)
class FaceIdentity:
    background: np.ndarray
    skin: np.ndarray
    texture: np.ndarray
    cx: float
    cy: float
    rx: float
    ry: float
    eye_dx: float
    eye_y: float
    mouth_y: float
    mouth_w: float


def _face_identity(rng: np.random.Generator) -> FaceIdentity:
    return FaceIdentity(
        background=_smooth_field(rng, 4, 3) * 0.6 + 0.2,
        skin=np.array(
            [rng.uniform(0.55, 0.9), rng.uniform(0.4, 0.7), rng.uniform(0.3, 0.6)],
            dtype=np.float32,
        ),
        texture=_smooth_field(rng, 12, 1) - 0.5,
        cx=rng.uniform(0.45, 0.55),
        cy=rng.uniform(0.45, 0.55),
        rx=rng.uniform(0.26, 0.32),
        ry=rng.uniform(0.34, 0.40),
        eye_dx=rng.uniform(0.09, 0.12),
        eye_y=rng.uniform(-0.12, -0.08),
        mouth_y=rng.uniform(0.14, 0.19),
        mouth_w=rng.uniform(0.08, 0.12),
    )


def _render_face(
    identity: FaceIdentity, shift: Tuple[float, float], light: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """One frame in [0, 1] and its soft face mask."""
    cx, cy = identity.cx + shift[0], identity.cy + shift[1]
    face = _ellipse(cx, cy, identity.rx, identity.ry)[..., None]
    shading = 1.0 - 0.35 * ((_GRID_X - cx + 0.1) ** 2 + (_GRID_Y - cy + 0.1) ** 2)[..., None]
    skin = identity.skin * shading * light + 0.06 * identity.texture
    image = identity.background * (1.0 - face) + skin * face

    features = np.zeros_like(_GRID_X)
    for side in (-1.0, 1.0):
        features = np.maximum(
            features, _ellipse(cx + side * identity.eye_dx, cy + identity.eye_y, 0.045, 0.022)
        )
    features = np.maximum(
        features, _ellipse(cx, cy + identity.mouth_y, identity.mouth_w, 0.02)
    )
    features = np.maximum(features, 0.5 * _ellipse(cx, cy + 0.04, 0.018, 0.05))
    image = image * (1.0 - 0.75 * features[..., None])
    image = image + rng.normal(0.0, 0.01, image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0), face[..., 0]


# ---------------------------------------------------------------------------
# Manipulation fingerprints
# ---------------------------------------------------------------------------


def _apply_fingerprint(image: np.ndarray, mask: np.ndarray, spec: DomainSpec) -> np.ndarray:
    s = spec.strength
    if spec.artifact == "blend":
        # blending seam: a bright/dark ring on the face boundary and a
        # slightly blurred, re-lit interior
        ring = np.clip(1.0 - np.abs(mask - 0.5) * 2.0, 0.0, 1.0)
        blurred = np.stack(
            [
                np.asarray(
                    Image.fromarray(image[..., c].astype(np.float32)).resize(
                        (IMAGE_SIZE // 2, IMAGE_SIZE // 2), Image.BILINEAR
                    ).resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
                )
                for c in range(3)
            ],
            axis=-1,
        )
        inside = mask[..., None]
        image = image * (1.0 - inside) + (blurred * (1.0 + s)) * inside
        image = image + 2.0 * s * ring[..., None]
    elif spec.artifact == "tint":
        tint = np.asarray(spec.tint, dtype=np.float32)
        image = image + s * tint * mask[..., None]
    elif spec.artifact == "ripple":
        theta = math.radians(spec.angle)
        phase = (_GRID_X * math.cos(theta) + _GRID_Y * math.sin(theta)) * (IMAGE_SIZE - 1)
        wave = np.sin(2.0 * math.pi * phase / spec.period)
        image = image + s * (wave * mask)[..., None]
    elif spec.artifact == "checker":
        px = np.arange(IMAGE_SIZE)
        checker = ((px[None, :] // 2 + px[:, None] // 2) % 2).astype(np.float32) * 2.0 - 1.0
        image = image + s * (checker * mask)[..., None]
    else:
        raise ConfigError(f"unknown artifact: {spec.artifact}")
    return np.clip(image, 0.0, 1.0)


def compress(image: np.ndarray, quality: Optional[int]) -> np.ndarray:
    """uint8 frame through a JPEG round trip (identity when quality is None)."""
    if quality is None:
        return image
    buffer = io.BytesIO()
    Image.fromarray(image).save(buffer, format="JPEG", quality=int(quality))
    buffer.seek(0)
    return np.asarray(Image.open(buffer).convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Splits and generation
# ---------------------------------------------------------------------------


def split_group_counts(n_groups: int, adapt_groups: int = 10) -> Dict[str, int]:
    """
    Group counts per split: adapt is fixed, the rest is divided 75 : 12.5 : 12.5
    (110 groups -> 75 / 10 / 12 / 13).
    """
    remaining = n_groups - adapt_groups
    if remaining < 8:
        raise ConfigError(f"{n_groups} groups leave too few for the non-adapt splits")
    validation = int(remaining * 0.125)
    held_out = int(remaining * 0.25 + 0.5)
    return {
        "teacher-train": remaining - held_out,
        "adapt": adapt_groups,
        "validation": validation,
        "test": held_out - validation,
    }


def assign_splits(
    n_groups: int, adapt_groups: int, rng: np.random.Generator
) -> Tuple[Dict[int, str], Dict[int, int]]:
    """Shuffle groups into splits and give each split a balanced label mix."""
    counts = split_group_counts(n_groups, adapt_groups)
    order = rng.permutation(n_groups)
    group_splits: Dict[int, str] = {}
    group_labels: Dict[int, int] = {}
    start = 0
    for split in SPLITS:
        members = [int(g) for g in order[start : start + counts[split]]]
        start += counts[split]
        fake_first = bool(rng.integers(2))
        for position, group in enumerate(sorted(members)):
            group_splits[group] = split
            group_labels[group] = (position + int(fake_first)) % 2
    return group_splits, group_labels


def generate_domain(
    domain_spec: DomainSpec,
    n_groups: int = 110,
    seed: int = 0,
    generator: Optional[GeneratorConfig] = None,
) -> DomainDataset:
    """
    Generate one domain deterministically from (seed, domain name).

    Each group draws a face identity and renders clips of consecutive frames;
    clip-level jitter is larger than frame-level jitter. Fake groups carry the
    domain fingerprint. Compression, when configured, is applied to both
    classes.
    """
    generator = generator or GeneratorConfig()
    if n_groups < 40:
        raise ConfigError(f"n_groups must be at least 40, got {n_groups}")
    domain_key = _stable_int(domain_spec.name)
    split_rng = np.random.default_rng([seed, domain_key])
    group_splits, group_labels = assign_splits(n_groups, generator.adapt_groups, split_rng)

    frames = generator.frames_per_group
    images = np.empty((n_groups * frames, IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.uint8)
    labels = np.empty(n_groups * frames, dtype=np.int64)
    group_ids = np.empty(n_groups * frames, dtype=np.int64)
    frame_indices = np.empty(n_groups * frames, dtype=np.int64)

    row = 0
    for group in range(n_groups):
        rng = np.random.default_rng([seed, domain_key, group])
        identity = _face_identity(rng)
        label = group_labels[group]
        for clip in range(generator.clips_per_group):
            clip_shift = rng.normal(0.0, 0.015, 2)
            clip_light = rng.uniform(0.85, 1.15)
            for step in range(generator.frames_per_clip):
                shift = (clip_shift + rng.normal(0.0, 0.003, 2)).tolist()
                light = clip_light + rng.normal(0.0, 0.01)
                frame, mask = _render_face(identity, (shift[0], shift[1]), light, rng)
                if label == FAKE:
                    frame = _apply_fingerprint(frame, mask, domain_spec)
                pixels = (frame * 255.0 + 0.5).astype(np.uint8)
                images[row] = compress(pixels, domain_spec.compression_quality)
                labels[row] = label
                group_ids[row] = group
                frame_indices[row] = clip * generator.frames_per_clip + step
                row += 1

    dataset = DomainDataset(
        domain=domain_spec.name,
        images=images,
        labels=labels,
        group_ids=group_ids,
        frame_indices=frame_indices,
        group_splits=group_splits,
    )
    dataset.check_disjoint()
    logger.info(
        "Generated domain %s (%s, %s): %d groups, %d frames",
        domain_spec.name,
        domain_spec.artifact,
        domain_spec.quality_label,
        n_groups,
        len(dataset),
    )
    return dataset


def recompress(dataset: DomainDataset, quality: Optional[int]) -> DomainDataset:
    """The same frames re-encoded at another quality (cross-quality evaluation)."""
    if quality is None:
        return dataset
    images = np.stack([compress(image, quality) for image in dataset.images])
    return DomainDataset(
        domain=dataset.domain,
        images=images,
        labels=dataset.labels,
        group_ids=dataset.group_ids,
        frame_indices=dataset.frame_indices,
        group_splits=dict(dataset.group_splits),
    )


def write_dataset(dataset: DomainDataset, root: Path) -> Path:
    """
    Write ``<root>/<domain>/<split>/<group_id>/<frame_index>.png`` and append
    the domain's rows to ``<root>/manifest.csv``.
    """
    root = Path(root)
    for i in range(len(dataset)):
        group = int(dataset.group_ids[i])
        split = dataset.group_splits[group]
        frame_dir = root / dataset.domain / split / str(group)
        frame_dir.mkdir(parents=True, exist_ok=True)
        Image.fromarray(dataset.images[i]).save(frame_dir / f"{int(dataset.frame_indices[i])}.png")

    manifest_path = root / "manifest.csv"
    manifest = dataset.manifest()
    if manifest_path.exists():
        existing = pd.read_csv(manifest_path)
        existing = existing[existing["domain"] != dataset.domain]
        manifest = pd.concat([existing, manifest], ignore_index=True)
    manifest.sort_values(["domain", "group_id"]).to_csv(manifest_path, index=False)
    logger.info("Wrote %d frames of %s to %s", len(dataset), dataset.domain, root)
    return manifest_path


def class_balance(dataset: DomainDataset, split: str) -> Tuple[int, int]:
    """(real groups, fake groups) in a split."""
    groups = dataset.groups(split)
    fake = sum(dataset.group_label(g) for g in groups)
    return len(groups) - fake, fake
