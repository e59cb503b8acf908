"""Binary checkpoints and run manifests.

Checkpoint layout (all integers little-endian):

    magic   4 bytes  b"FFLW"
    version u32      format version (currently 1)
    hlen    u64      header length in bytes
    header  hlen     canonical JSON: block names/sizes, net spec(s),
                     seed + step (the run's full RNG state under the
                     per-step stream scheme), and the config hash
    payload          named float64 parameter blocks, in header order
    digest  32 bytes sha256 over everything above

Loading verifies magic, version, checksum, and that block sizes match the
declared specs; saving a loaded checkpoint reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .net import NetworkSpec, param_count

MAGIC = b"FFLW"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    spec: NetworkSpec
    blocks: dict[str, np.ndarray]
    seed: int
    step: int
    config_hash: str = ""
    aux_spec: NetworkSpec | None = None

    def block(self, name: str) -> np.ndarray:
        if name not in self.blocks:
            raise CheckpointError(f"checkpoint has no block {name!r}")
        return self.blocks[name]


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "blocks": [{"name": k, "size": int(v.size)} for k, v in ckpt.blocks.items()],
        "config_hash": ckpt.config_hash,
        "seed": int(ckpt.seed),
        "step": int(ckpt.step),
        "spec": ckpt.spec.to_dict(),
        "aux_spec": ckpt.aux_spec.to_dict() if ckpt.aux_spec is not None else None,
    }
    hbytes = _canonical_json(header)
    out = bytearray()
    out += MAGIC
    out += FORMAT_VERSION.to_bytes(4, "little")
    out += len(hbytes).to_bytes(8, "little")
    out += hbytes
    for name, arr in ckpt.blocks.items():
        out += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    out += hashlib.sha256(bytes(out)).digest()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 48 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a checkpoint file")
    version = int.from_bytes(raw[4:8], "little")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} incompatible with {FORMAT_VERSION}"
        )
    if hashlib.sha256(raw[:-32]).digest() != raw[-32:]:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupt)")
    hlen = int.from_bytes(raw[8:16], "little")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: malformed header: {e}") from e

    spec = NetworkSpec.from_dict(header["spec"])
    aux_spec = (
        NetworkSpec.from_dict(header["aux_spec"]) if header.get("aux_spec") else None
    )
    blocks: dict[str, np.ndarray] = {}
    offset = 16 + hlen
    for entry in header["blocks"]:
        size = int(entry["size"])
        end = offset + 8 * size
        if end > len(raw) - 32:
            raise CheckpointError(f"{path}: payload shorter than declared blocks")
        blocks[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").astype(
            np.float64
        )
        offset = end
    if offset != len(raw) - 32:
        raise CheckpointError(f"{path}: trailing bytes after declared blocks")

    ckpt = Checkpoint(
        spec=spec,
        blocks=blocks,
        seed=int(header["seed"]),
        step=int(header["step"]),
        config_hash=header.get("config_hash", ""),
        aux_spec=aux_spec,
    )
    _validate_sizes(ckpt, path)
    return ckpt


def _validate_sizes(ckpt: Checkpoint, path) -> None:
    expected = param_count(ckpt.spec)
    for name, arr in ckpt.blocks.items():
        want = expected
        if ckpt.aux_spec is not None and name.startswith("psi"):
            want = param_count(ckpt.aux_spec)
        if arr.size != want:
            raise CheckpointError(
                f"{path}: block {name!r} has {arr.size} values, spec wants {want}"
            )


def require_spec(ckpt: Checkpoint, expected: NetworkSpec) -> None:
    """Loud failure when restoring into a different architecture."""
    if ckpt.spec != expected:
        raise CheckpointError(
            f"checkpoint spec {ckpt.spec} does not match expected {expected}"
        )
