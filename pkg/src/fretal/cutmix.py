"""
CutMix augmentation with soft labels.

For every selected sample a rectangular patch from a donor in the same batch
is pasted in. The patch area fraction is drawn from Beta(alpha, alpha) and the
label becomes (1 - λ_area) · own + λ_area · donor, where λ_area is the area
actually pasted after clipping to the image.
"""

import logging
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)


def _patch_box(
    height: int, width: int, area: float, rng: np.random.Generator
) -> Tuple[int, int, int, int]:
    cut_h = height * np.sqrt(area)
    cut_w = width * np.sqrt(area)
    cy = rng.uniform(0, height)
    cx = rng.uniform(0, width)
    y0 = int(np.round(np.clip(cy - cut_h / 2, 0, height)))
    y1 = int(np.round(np.clip(cy + cut_h / 2, 0, height)))
    x0 = int(np.round(np.clip(cx - cut_w / 2, 0, width)))
    x1 = int(np.round(np.clip(cx + cut_w / 2, 0, width)))
    return y0, y1, x0, x1


def cutmix(
    images: torch.Tensor,
    labels: torch.Tensor,
    mix_probability: float = 0.5,
    alpha: float = 1.0,
    seed: int = 0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Return (mixed images, soft labels of shape (B, 2)).

    ``labels`` may be hard labels (B,) or soft targets (B, 2). Batches of one
    sample are returned unchanged with a warning.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    if labels.dim() == 1:
        targets = F.one_hot(labels.long(), 2).float()
    else:
        targets = labels.float().clone()
    batch_size = images.shape[0]
    if batch_size < 2:
        logger.warning("CutMix skipped: batch of %d sample", batch_size)
        return images, targets

    mixed = images.clone()
    mixed_targets = targets.clone()
    height, width = images.shape[-2:]
    for i in range(batch_size):
        if rng.random() >= mix_probability:
            continue
        donor = int(rng.integers(batch_size - 1))
        donor += donor >= i
        area = float(rng.beta(alpha, alpha))
        y0, y1, x0, x1 = _patch_box(height, width, area, rng)
        _paste(mixed, mixed_targets, images, targets, i, donor, (y0, y1, x0, x1))
    return mixed, mixed_targets


def _paste(
    mixed: torch.Tensor,
    mixed_targets: torch.Tensor,
    images: torch.Tensor,
    targets: torch.Tensor,
    receiver: int,
    donor: int,
    box: Tuple[int, int, int, int],
) -> None:
    y0, y1, x0, x1 = box
    height, width = images.shape[-2:]
    realized = (y1 - y0) * (x1 - x0) / float(height * width)
    if realized == 0.0:
        return
    mixed[receiver, :, y0:y1, x0:x1] = images[donor, :, y0:y1, x0:x1]
    mixed_targets[receiver] = (1.0 - realized) * targets[receiver] + realized * targets[donor]


def paste_patch(
    images: torch.Tensor,
    targets: torch.Tensor,
    receiver: int,
    donor: int,
    box: Tuple[int, int, int, int],
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Paste a fixed box from donor into receiver (deterministic CutMix step)."""
    mixed = images.clone()
    mixed_targets = targets.float().clone()
    _paste(mixed, mixed_targets, images, targets.float(), receiver, donor, box)
    return mixed, mixed_targets
