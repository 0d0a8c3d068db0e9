"""Checkpoint file: magic, version, JSON header, then little-endian float32 blobs.

Layout::

    b"CURVECKP" | uint32 version | uint64 header length | header JSON | blobs

The header records the model and attention configuration, the training step
and, per tensor, its name, shape and byte offset into the blob section.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .model import CurveFormer, ModelConfig

MAGIC = b"CURVECKP"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: CurveFormer, optimizer: torch.optim.Optimizer | None = None,
                    step: int = 0, extra: dict | None = None) -> Path:
    tensors = {f"param/{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = [n for n, _ in model.named_parameters()]
        state = optimizer.state_dict()["state"]
        for idx, st in state.items():
            for key, val in st.items():
                tensors[f"optim/{names[idx]}/{key}"] = val if torch.is_tensor(val) else torch.tensor(val)
    index, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    cfg = model.cfg
    header = {"version": VERSION, "step": int(step), "attention": asdict(cfg.attention),
              "model_config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
              "tensors": index, "extra": extra or {}}
    raw = json.dumps(header).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
    start = _PREFIX.size + hlen
    if len(data) < start:
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[_PREFIX.size:start])
    arrays = {}
    for ent in header["tensors"]:
        lo = start + ent["offset"]
        if lo + ent["nbytes"] > len(data):
            raise CheckpointError(f"{path}: tensor {ent['name']} truncated")
        arr = np.frombuffer(data, dtype="<f4", count=ent["nbytes"] // 4, offset=lo)
        arrays[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return header, arrays


def model_config_from_header(header: dict) -> ModelConfig:
    return ModelConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in header["model_config"].items()})


def load_model(path) -> tuple[CurveFormer, dict, dict]:
    header, arrays = read_checkpoint(path)
    model = CurveFormer(model_config_from_header(header))
    state = {k[len("param/"):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("param/")}
    model.load_state_dict(state)
    return model, header, arrays


def restore_optimizer(optimizer: torch.optim.Optimizer, model: CurveFormer, arrays: dict) -> None:
    names = [n for n, _ in model.named_parameters()]
    state = {}
    for idx, name in enumerate(names):
        prefix = f"optim/{name}/"
        ent = {k[len(prefix):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith(prefix)}
        if ent:
            state[idx] = ent
    sd = optimizer.state_dict()
    sd["state"] = state
    optimizer.load_state_dict(sd)
