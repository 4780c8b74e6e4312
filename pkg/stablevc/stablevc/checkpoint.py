"""Single-file checkpoint container.

Layout::

    b"SVCK" | u32 manifest length | JSON manifest | float32 LE payloads | u32 CRC-32

The manifest holds the format version, the model config and a tensor
directory (name, shape, offset, byte length). The CRC covers every byte
before it.
"""
from __future__ import annotations

import json
import logging
import math
import struct
import zlib
from pathlib import Path
from typing import Any, Union

import numpy as np
import torch

from stablevc.errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from stablevc.model import ModelConfig, StableVcModel, config_dict

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SVCK"
CHECKPOINT_VERSION = 1
_U32 = struct.Struct("<I")
_PREFIX = len(CHECKPOINT_MAGIC) + _U32.size

PathLike = Union[str, Path]


def checkpoint_bytes(model: StableVcModel) -> bytes:
    entries: list[dict[str, Any]] = []
    payloads: list[bytes] = []
    offset = 0
    for name, tensor in model.state_dict().items():
        data = np.ascontiguousarray(tensor.detach().cpu().to(torch.float32).numpy(), dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(tensor.shape), "offset": offset, "nbytes": len(data)})
        payloads.append(data)
        offset += len(data)

    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": config_dict(model.config),
        "tensors": entries,
        "payload_bytes": offset,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = CHECKPOINT_MAGIC + _U32.pack(len(manifest_bytes)) + manifest_bytes + b"".join(payloads)
    return body + _U32.pack(zlib.crc32(body))


def save_checkpoint(model: StableVcModel, path: PathLike) -> Path:
    """Write ``model`` as a single checkpoint file.

    Parameters
    ----------
    model : StableVcModel
        Model to store; its registered buffers, the content codebook among them, travel with it.
    path : str or Path
        Destination file. Missing parent directories are created.

    Returns
    -------
    Path
        The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))
    logger.debug("wrote checkpoint %s", path)
    return path


def _crc_ok(data: bytes) -> bool:
    (stored,) = _U32.unpack_from(data, len(data) - _U32.size)
    return zlib.crc32(data[: -_U32.size]) == stored


def _read_manifest(data: bytes) -> tuple[Any, int]:
    (manifest_len,) = _U32.unpack_from(data, len(CHECKPOINT_MAGIC))
    payload_start = _PREFIX + manifest_len
    if payload_start + _U32.size > len(data):
        raise ValueError("manifest runs past the end of the file")
    return json.loads(data[_PREFIX:payload_start].decode("utf-8")), payload_start


def _directory_consistent(manifest: Any) -> bool:
    """True when the tensor directory is contiguous float32 data summing to ``payload_bytes``."""
    try:
        offset = 0
        for entry in manifest["tensors"]:
            if int(entry["offset"]) != offset or int(entry["nbytes"]) != 4 * math.prod(entry["shape"]):
                return False
            offset += int(entry["nbytes"])
        return offset == int(manifest["payload_bytes"])
    except (KeyError, TypeError, ValueError):
        return False


def _damage(data: bytes, source: str) -> CheckpointError:
    """Classify a file whose CRC does not match.

    Truncation is reported only when the header that survived is intact:
    either the file ends inside a manifest whose bytes are all JSON text,
    or a self-consistent manifest declares more bytes than the file holds.
    Bytes appended after a valid checksum are a format error. Anything
    else is corruption.
    """
    (manifest_len,) = _U32.unpack_from(data, len(CHECKPOINT_MAGIC))
    if _PREFIX + manifest_len + _U32.size > len(data):
        if all(0x20 <= byte < 0x7F for byte in data[_PREFIX:]):
            return CheckpointTruncatedError(f"{source}: file ends inside the manifest")
        return CheckpointChecksumError(f"{source}: checksum mismatch")
    try:
        manifest, payload_start = _read_manifest(data)
    except (UnicodeDecodeError, ValueError):
        return CheckpointChecksumError(f"{source}: checksum mismatch")
    if _directory_consistent(manifest):
        expected = payload_start + int(manifest["payload_bytes"]) + _U32.size
        if len(data) < expected:
            return CheckpointTruncatedError(f"{source}: expected {expected} bytes, found {len(data)}")
        if len(data) > expected and _crc_ok(data[:expected]):
            return CheckpointFormatError(f"{source}: {len(data) - expected} trailing bytes after the checksum")
    return CheckpointChecksumError(f"{source}: checksum mismatch")


def checkpoint_from_bytes(data: bytes, source: str = "<bytes>") -> StableVcModel:
    """Rebuild a model from checkpoint bytes.

    The magic and minimum length are checked first, then the CRC; only a
    file that passes the CRC has its manifest sizes trusted.

    Raises
    ------
    CheckpointTruncatedError
        The file is shorter than its intact header declares.
    CheckpointChecksumError
        Any other byte damage.
    CheckpointVersionError
        The format version is not one this build reads.
    CheckpointFormatError
        Bad magic, or a checksum-valid file whose contents are inconsistent.
    """
    if len(data) < _PREFIX + _U32.size:
        raise CheckpointTruncatedError(f"{source}: {len(data)} bytes is too short for a checkpoint")
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {data[:4]!r}")
    if not _crc_ok(data):
        raise _damage(data, source)

    try:
        manifest, payload_start = _read_manifest(data)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointFormatError(f"{source}: unreadable manifest") from exc
    if not isinstance(manifest, dict) or "payload_bytes" not in manifest:
        raise CheckpointFormatError(f"{source}: manifest lacks a tensor directory")
    expected = payload_start + int(manifest["payload_bytes"]) + _U32.size
    if len(data) != expected:
        raise CheckpointFormatError(f"{source}: manifest declares {expected} bytes, file has {len(data)}")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{source}: checkpoint version {manifest.get('version')!r}, this build reads {CHECKPOINT_VERSION}"
        )

    try:
        model = StableVcModel(ModelConfig(**manifest["config"]))
    except (TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"{source}: invalid model config: {exc}") from exc

    state = {}
    for entry in manifest["tensors"]:
        start = payload_start + int(entry["offset"])
        raw = data[start : start + int(entry["nbytes"])]
        try:
            values = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(entry["shape"])
        except ValueError as exc:
            raise CheckpointFormatError(f"{source}: tensor {entry['name']!r} does not match its shape") from exc
        state[entry["name"]] = torch.from_numpy(values)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointFormatError(f"{source}: tensors do not match the model config: {exc}") from exc
    model.eval()
    return model


def load_checkpoint(path: PathLike) -> StableVcModel:
    """Read a checkpoint file written by :func:`save_checkpoint`.

    Parameters
    ----------
    path : str or Path
        Checkpoint file.

    Returns
    -------
    StableVcModel
        The model in eval mode.

    Raises
    ------
    CheckpointError
        One subclass per failure cause, see :func:`checkpoint_from_bytes`.
    FileNotFoundError
        ``path`` does not exist.
    """
    path = Path(path)
    return checkpoint_from_bytes(path.read_bytes(), str(path))
