"""
Checkpoint directories for critiqa models

A checkpoint is a directory holding manifest.json (format version, model kind,
hyperparameters, vocabulary and one entry per parameter) and params.bin, the
little-endian float32 parameter data concatenated in manifest order.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from ..errors import CheckpointError
from .ndmath import ParamStore
from .run_manifest import atomic_directory, path_digest

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"


class ManifestEntry(BaseModel):
    name: str
    shape: List[int]
    offset: int
    length: int


class CheckpointManifest(BaseModel):
    format_version: int
    model_kind: str
    hyperparameters: Dict[str, Any]
    vocab: List[str]
    entries: List[ManifestEntry]


@dataclass
class LoadedCheckpoint:
    manifest: CheckpointManifest
    arrays: Dict[str, np.ndarray]


def save_checkpoint(
    path: Union[str, Path],
    model_kind: str,
    hyperparameters: Dict[str, Any],
    vocab: List[str],
    params: ParamStore,
) -> Path:
    """Write a checkpoint directory atomically."""
    entries: List[ManifestEntry] = []
    blobs: List[bytes] = []
    offset = 0
    for name, tensor in params.items():
        # asarray keeps 0-d parameters 0-d; tobytes() is C-ordered either way
        data = np.asarray(tensor.data, dtype="<f4")
        entries.append(
            ManifestEntry(name=name, shape=list(data.shape), offset=offset, length=int(data.size))
        )
        blobs.append(data.tobytes())
        offset += int(data.size)

    manifest = CheckpointManifest(
        format_version=FORMAT_VERSION,
        model_kind=model_kind,
        hyperparameters=hyperparameters,
        vocab=vocab,
        entries=entries,
    )
    path = Path(path)
    with atomic_directory(path) as staging:
        (staging / MANIFEST_NAME).write_text(
            json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (staging / PARAMS_NAME).write_bytes(b"".join(blobs))
    return path


def load_checkpoint(path: Union[str, Path], expected_kind: Optional[str] = None) -> LoadedCheckpoint:
    """Read and validate a checkpoint directory."""
    path = Path(path)
    try:
        raw = json.loads((path / MANIFEST_NAME).read_text(encoding="utf-8"))
        manifest = CheckpointManifest.model_validate(raw)
        blob = (path / PARAMS_NAME).read_bytes()
    except (OSError, json.JSONDecodeError, ValidationError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if manifest.format_version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format_version {manifest.format_version}"
        )
    if expected_kind is not None and manifest.model_kind != expected_kind:
        raise CheckpointError(
            f"{path}: expected a {expected_kind} checkpoint, found {manifest.model_kind}"
        )

    flat = np.frombuffer(blob, dtype="<f4")
    arrays: Dict[str, np.ndarray] = {}
    expected_offset = 0
    for entry in manifest.entries:
        if entry.offset != expected_offset or entry.length != int(np.prod(entry.shape)):
            raise CheckpointError(f"{path}: inconsistent entry {entry.name}")
        end = entry.offset + entry.length
        if end > flat.size:
            raise CheckpointError(f"{path}: params.bin truncated at {entry.name}")
        arrays[entry.name] = flat[entry.offset : end].astype(np.float32).reshape(entry.shape)
        expected_offset = end
    if expected_offset != flat.size:
        raise CheckpointError(f"{path}: params.bin has {flat.size - expected_offset} trailing floats")
    return LoadedCheckpoint(manifest=manifest, arrays=arrays)


def checkpoint_digest(path: Union[str, Path]) -> str:
    """sha256 over every file of a checkpoint directory."""
    return path_digest(Path(path))
