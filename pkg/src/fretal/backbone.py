"""
Classifier abstraction shared by teacher and student.

This module provides:
1. A small reference convolutional detector (conv blocks, global pooling,
   one dense "feature" layer, a two-way classification head)
2. ModelHandle, which pairs a network with its trainable flag and an
   architecture fingerprint
3. Weight copying, freezing, parameter digests and checkpoint I/O
"""

import copy
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from fretal.config import IMAGE_SIZE, ArchitectureSpec
from fretal.errors import (
    FrozenModelError,
    IncompatibleArchitectureError,
    InputContractError,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

ImageBatch = Union[torch.Tensor, Sequence[np.ndarray]]


@dataclass
class ModelOutput:
    """Penultimate features (B, F) and class logits (B, 2) for a batch."""

    features: torch.Tensor
    logits: torch.Tensor

    def __len__(self) -> int:
        return self.logits.shape[0]


class DetectorNet(nn.Module):
    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        blocks: List[nn.Module] = []
        in_channels = 3
        for width in spec.channels:
            blocks.extend(
                [
                    nn.Conv2d(in_channels, width, kernel_size=3, stride=2, padding=1),
                    nn.GroupNorm(num_groups=4 if width % 4 == 0 else 1, num_channels=width),
                    nn.ReLU(inplace=True),
                ]
            )
            in_channels = width
        self.encoder = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.feature = nn.Linear(in_channels, spec.feature_dim)
        self.head = nn.Linear(spec.feature_dim, spec.num_classes)

    def forward(self, x: torch.Tensor) -> ModelOutput:  # type: ignore[override]
        x = self.pool(self.encoder(x)).flatten(1)
        features = F.relu(self.feature(x))
        return ModelOutput(features=features, logits=self.head(features))


@dataclass
class ModelHandle:
    """A detector plus the bookkeeping the adaptation protocol needs."""

    network: DetectorNet
    architecture: ArchitectureSpec
    trainable: bool = True
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.architecture.feature_dim

    @property
    def fingerprint(self) -> str:
        return architecture_fingerprint(self.network, self.architecture)

    def assert_trainable(self) -> None:
        if not self.trainable:
            raise FrozenModelError("model is frozen and cannot receive parameter updates")


def architecture_fingerprint(network: nn.Module, spec: ArchitectureSpec) -> str:
    shapes = [(name, list(t.shape)) for name, t in network.state_dict().items()]
    payload = json.dumps(
        {"architecture": spec.model_dump(mode="json"), "parameters": shapes},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_model(spec: Optional[ArchitectureSpec] = None, seed: int = 0) -> ModelHandle:
    """Create a randomly initialised, trainable detector."""
    spec = spec or ArchitectureSpec()
    torch.manual_seed(seed)
    network = DetectorNet(spec)
    network.eval()
    return ModelHandle(network=network, architecture=spec, trainable=True)


def _as_tensor(batch: ImageBatch) -> torch.Tensor:
    """Validate a batch of 128x128x3 images in [-1, 1] and return it as NCHW."""
    if isinstance(batch, torch.Tensor):
        if batch.dim() != 4 or tuple(batch.shape[1:]) != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise InputContractError(
                f"expected a (B, 3, {IMAGE_SIZE}, {IMAGE_SIZE}) tensor, got {tuple(batch.shape)}",
                index=0,
            )
        tensor = batch
    else:
        arrays = []
        for index, image in enumerate(batch):
            array = np.asarray(image)
            if array.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
                raise InputContractError(
                    f"expected shape ({IMAGE_SIZE}, {IMAGE_SIZE}, 3), got {array.shape}",
                    index=index,
                )
            arrays.append(array)
        if not arrays:
            raise InputContractError("empty batch")
        tensor = torch.from_numpy(np.stack(arrays).astype(np.float32)).permute(0, 3, 1, 2)

    flat = tensor.detach().reshape(tensor.shape[0], -1)
    bad = (~torch.isfinite(flat)).any(1) | (flat.amin(1) < -1.0) | (flat.amax(1) > 1.0)
    if bool(bad.any()):
        index = int(torch.nonzero(bad)[0])
        raise InputContractError("values must be finite and within [-1, 1]", index=index)
    return tensor.float()


def forward(model: ModelHandle, batch: ImageBatch) -> ModelOutput:
    """
    Run the detector on a batch.

    Gradients are tracked only for trainable models with grad mode enabled;
    frozen models always run under no_grad.
    """
    x = _as_tensor(batch)
    if model.trainable:
        return model.network(x)
    with torch.no_grad():
        return model.network(x)


def copy_weights(src: ModelHandle, dst: ModelHandle) -> ModelHandle:
    """Copy src parameters into dst; dst keeps its trainable flag."""
    src_state = src.network.state_dict()
    dst_state = dst.network.state_dict()
    mismatched = [
        name
        for name in set(src_state) | set(dst_state)
        if name not in src_state
        or name not in dst_state
        or src_state[name].shape != dst_state[name].shape
    ]
    if mismatched or src.architecture != dst.architecture:
        raise IncompatibleArchitectureError(
            f"cannot copy weights between architectures (mismatched: {sorted(mismatched)})"
        )
    with torch.no_grad():
        for name, tensor in dst_state.items():
            tensor.copy_(src_state[name])
    dst.network.requires_grad_(dst.trainable)
    return dst


def clone_model(src: ModelHandle, trainable: bool = True) -> ModelHandle:
    """A fresh handle with src's architecture and weights."""
    network = DetectorNet(src.architecture)
    handle = ModelHandle(network=network, architecture=src.architecture, trainable=trainable)
    copy_weights(src, handle)
    handle.network.eval()
    return handle


def freeze(model: ModelHandle) -> ModelHandle:
    model.network.requires_grad_(False)
    model.network.eval()
    model.trainable = False
    return model


def make_optimizer(model: ModelHandle, learning_rate: float, momentum: float) -> torch.optim.SGD:
    model.assert_trainable()
    return torch.optim.SGD(model.network.parameters(), lr=learning_rate, momentum=momentum)


def parameter_digest(model: ModelHandle) -> str:
    """sha256 over the serialised named parameters."""
    digest = hashlib.sha256()
    for name, tensor in sorted(model.network.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def snapshot_state(model: ModelHandle) -> Dict[str, torch.Tensor]:
    return copy.deepcopy(model.network.state_dict())


def restore_state(model: ModelHandle, state: Dict[str, torch.Tensor]) -> None:
    model.network.load_state_dict(state)


def save_checkpoint(model: ModelHandle, path: Path, **metadata: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "fingerprint": model.fingerprint,
        "architecture": model.architecture.model_dump(mode="json"),
        "state_dict": model.network.state_dict(),
        "metadata": {**model.metadata, **metadata, "trainable": model.trainable},
    }
    buffer = io.BytesIO()
    torch.save(payload, buffer)
    path.write_bytes(buffer.getvalue())
    logger.info("Saved checkpoint %s", path)
    return path


def load_checkpoint(path: Path) -> ModelHandle:
    """Load a checkpoint, verifying its version and architecture fingerprint."""
    path = Path(path)
    if not path.exists():
        raise IncompatibleArchitectureError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise IncompatibleArchitectureError(
            f"unsupported checkpoint version {payload.get('format_version')} in {path}"
        )
    spec = ArchitectureSpec.model_validate(payload["architecture"])
    network = DetectorNet(spec)
    if architecture_fingerprint(network, spec) != payload["fingerprint"]:
        raise IncompatibleArchitectureError(f"fingerprint mismatch in {path}")
    network.load_state_dict(payload["state_dict"])
    network.eval()
    metadata = dict(payload.get("metadata", {}))
    handle = ModelHandle(network=network, architecture=spec, trainable=True, metadata=metadata)
    if not metadata.pop("trainable", True):
        freeze(handle)
    handle.metadata = metadata
    return handle
