"""Bit-exact named-tensor container and model checkpoint helpers.

File layout (all integers little-endian):

    magic   5 bytes  b"HFLOW"
    version u32      currently 1
    hlen    u32      header length in bytes
    header  hlen     UTF-8 JSON: {"kind": ..., "config": ..., "train_state": ...}
    count   u32      number of array records
    record  repeated count times:
        nlen  u32      name length
        name  nlen     UTF-8 name
        rank  u32
        dims  rank*u32
        data  prod(dims)*f32  raw little-endian payload

Model checkpoints use kind "model"; converted perceptual-encoder weights use
kind "vgg19-features". Optimizer moments ride along as records prefixed
"opt.m." / "opt.v." with scalars in the header's train_state block.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .errors import CheckpointError

MAGIC = b"HFLOW"
VERSION = 1

OPT_M_PREFIX = "opt.m."
OPT_V_PREFIX = "opt.v."


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated file: expected {n} bytes for {what}, got {len(data)}")
    return data


def write_container(path, header: dict, arrays: dict[str, np.ndarray]):
    path = Path(path)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_exact(f, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic: expected {MAGIC!r}, got {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported version {version}, expected {VERSION}")
        (hlen,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        try:
            header = json.loads(_read_exact(f, hlen, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"malformed header JSON: {e}") from e
        (count,) = struct.unpack("<I", _read_exact(f, 4, "record count"))
        arrays: dict[str, np.ndarray] = {}
        for i in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4, f"record {i} name length"))
            name = _read_exact(f, nlen, f"record {i} name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, f"{name} rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"{name} dims"))
            numel = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = _read_exact(f, 4 * numel, f"{name} payload")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        trailing = f.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after final record")
    return header, arrays


def save_model(path, model, train_state: dict | None = None):
    """Write model parameters (f32) plus an optional training-state section.

    ``train_state`` is {"iteration": int, "seed": int, "adam_step": int,
    "m": {name: tensor}, "v": {name: tensor}}.
    """
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters():
        arrays[name] = p.detach().to(torch.float32).cpu().numpy()
    header: dict = {"kind": "model", "config": model.config.to_dict(), "train_state": None}
    if train_state is not None:
        header["train_state"] = {
            "iteration": int(train_state["iteration"]),
            "seed": int(train_state["seed"]),
            "adam_step": int(train_state["adam_step"]),
        }
        for name, t in train_state["m"].items():
            arrays[OPT_M_PREFIX + name] = t.detach().to(torch.float32).cpu().numpy()
        for name, t in train_state["v"].items():
            arrays[OPT_V_PREFIX + name] = t.detach().to(torch.float32).cpu().numpy()
    write_container(path, header, arrays)


def load_model(path) -> tuple[ModelConfig, dict[str, np.ndarray], dict | None]:
    """Read a model checkpoint: (config, parameter arrays, train state or None)."""
    header, arrays = read_container(path)
    if header.get("kind") != "model":
        raise CheckpointError(f"wrong container kind {header.get('kind')!r}, expected 'model'")
    if "config" not in header:
        raise CheckpointError("header is missing the config field")
    config = ModelConfig.from_dict(header["config"])
    params = {k: v for k, v in arrays.items() if not k.startswith(("opt.m.", "opt.v."))}
    state = None
    if header.get("train_state") is not None:
        ts = header["train_state"]
        state = {
            "iteration": int(ts["iteration"]),
            "seed": int(ts["seed"]),
            "adam_step": int(ts["adam_step"]),
            "m": {k[len(OPT_M_PREFIX):]: v for k, v in arrays.items() if k.startswith(OPT_M_PREFIX)},
            "v": {k[len(OPT_V_PREFIX):]: v for k, v in arrays.items() if k.startswith(OPT_V_PREFIX)},
        }
    return config, params, state


def restore_model(model, path) -> dict | None:
    """Load a checkpoint into an existing model, validating config and registry.

    Returns the training-state dict when the checkpoint carries one.
    """
    config, params, state = load_model(path)
    if config.to_dict() != model.config.to_dict():
        raise CheckpointError(
            f"checkpoint config {config.to_dict()} does not match model config "
            f"{model.config.to_dict()}"
        )
    registry = dict(model.named_parameters())
    if set(params) != set(registry):
        missing = sorted(set(registry) - set(params))
        extra = sorted(set(params) - set(registry))
        raise CheckpointError(
            f"parameter name set mismatch: missing {missing or 'none'}, unexpected {extra or 'none'}"
        )
    for name, arr in params.items():
        p = registry[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise CheckpointError(
                f"shape mismatch for {name}: file has {tuple(arr.shape)}, model has {tuple(p.shape)}"
            )
        with torch.no_grad():
            p.copy_(torch.from_numpy(arr).to(p.dtype))
    return state
