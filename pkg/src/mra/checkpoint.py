"""Checkpoint files: a JSON header plus raw little-endian tensor data.

Layout::

    b"MRACKPT\\0"            8-byte magic
    uint64 LE                header length in bytes
    header                   UTF-8 JSON (sorted keys)
    payload                  tensors back to back, offsets given in the header
    sha256                   32-byte digest of everything above

Files are written atomically (temp file + rename).
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptCheckpointError, SchemaError

MAGIC = b"MRACKPT\x00"
FORMAT_VERSION = 1
KINDS = ("mae", "classifier")


@dataclass
class Checkpoint:
    kind: str
    config: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: dict | None = None
    rng_state: dict = field(default_factory=dict)
    step: int = 0
    metadata: dict = field(default_factory=dict)

    def model_state(self) -> dict[str, torch.Tensor]:
        return {k[len("model/"):]: torch.from_numpy(v.copy())
                for k, v in self.tensors.items() if k.startswith("model/")}

    def optimizer_state(self) -> dict | None:
        if self.optimizer is None:
            return None
        state = {}
        for key, value in self.optimizer["state"].items():
            idx, name = key.split("/", 1)
            state.setdefault(int(idx), {})[name] = value
        for k, v in self.tensors.items():
            if k.startswith("optimizer/"):
                _, idx, name = k.split("/", 2)
                state.setdefault(int(idx), {})[name] = torch.from_numpy(v.copy())
        return {"state": state, "param_groups": self.optimizer["param_groups"]}


def _to_le(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False)


def from_training_state(kind: str, config: dict, model: torch.nn.Module,
                        optimizer: torch.optim.Optimizer | None = None, rng_state: dict | None = None,
                        step: int = 0, metadata: dict | None = None) -> Checkpoint:
    tensors = {f"model/{k}": v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
    opt = None
    if optimizer is not None:
        sd = optimizer.state_dict()
        scalars = {}
        for idx, entries in sd["state"].items():
            for name, value in entries.items():
                if isinstance(value, torch.Tensor):
                    tensors[f"optimizer/{idx}/{name}"] = value.detach().cpu().numpy().copy()
                else:
                    scalars[f"{idx}/{name}"] = value
        groups = json.loads(json.dumps(sd["param_groups"]))
        opt = {"state": scalars, "param_groups": groups}
    return Checkpoint(kind, dict(config), tensors, opt, dict(rng_state or {}), int(step),
                      dict(metadata or {}))


def to_bytes(ckpt: Checkpoint) -> bytes:
    if ckpt.kind not in KINDS:
        raise SchemaError(f"unknown checkpoint kind {ckpt.kind!r}")
    table, chunks, offset = [], [], 0
    for name, arr in ckpt.tensors.items():
        data = _to_le(np.asarray(arr)).tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "dtype": np.asarray(arr).dtype.str,
                      "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = {
        "format_version": FORMAT_VERSION, "kind": ckpt.kind, "config": ckpt.config,
        "tensors": table, "optimizer": ckpt.optimizer, "rng_state": ckpt.rng_state,
        "step": ckpt.step, "metadata": ckpt.metadata,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def from_bytes(raw: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(raw) < len(MAGIC) + 8 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{source}: not a checkpoint file (bad magic or too short)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC):len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + hlen + 32 > len(raw):
        raise CorruptCheckpointError(f"{source}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"{source}: unreadable header ({e})") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise SchemaError(f"{source}: checkpoint format version {version} is not supported "
                          f"(this reader handles version {FORMAT_VERSION})")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(f"{source}: checksum mismatch (file truncated or modified)")
    payload = body[start + hlen:]
    tensors = {}
    for entry in header["tensors"]:
        name = entry["name"]
        if name in tensors:
            raise CorruptCheckpointError(f"{source}: duplicate tensor name {name!r}")
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise CorruptCheckpointError(f"{source}: tensor {name!r} extends past the payload")
        dtype = np.dtype(entry["dtype"])
        arr = np.frombuffer(payload[entry["offset"]:end], dtype=dtype).reshape(entry["shape"])
        tensors[name] = arr.astype(dtype.newbyteorder("="), copy=True)
    return Checkpoint(header["kind"], header["config"], tensors, header["optimizer"],
                      header["rng_state"], header["step"], header["metadata"])


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    atomic_write_bytes(path, to_bytes(ckpt))
    return Path(path)


def load_checkpoint(path, expected_kind: str | None = None) -> Checkpoint:
    ckpt = from_bytes(Path(path).read_bytes(), str(path))
    if expected_kind is not None and ckpt.kind != expected_kind:
        raise SchemaError(f"{path}: checkpoint holds a {ckpt.kind!r} config, "
                          f"but a {expected_kind!r} checkpoint is required")
    return ckpt
