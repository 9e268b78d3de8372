"""Checkpoint files: ``ckpt_<step>.bin`` holds named float32 tensors back to
back (little-endian, row-major); ``ckpt_<step>.json`` is the header with the
model spec, step counter, tensor table, optimizer counters and RNG states."""
from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import LoadError
from .models import ModelSpec

FORMAT = "ttslab-checkpoint/1"
_LE_F32 = np.dtype("<f4")


def checkpoint_path(out_dir, step: int) -> Path:
    return Path(out_dir) / f"ckpt_{step}"


def _base(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".bin") else p


def encode_bytes(t: torch.Tensor) -> str:
    return base64.b64encode(t.numpy().tobytes()).decode("ascii")


def decode_bytes(s: str) -> torch.Tensor:
    return torch.from_numpy(np.frombuffer(base64.b64decode(s), dtype=np.uint8).copy())


def write_checkpoint(path, spec: ModelSpec, step: int, tensors: dict[str, torch.Tensor],
                     extra: Optional[dict] = None) -> Path:
    base = _base(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    table, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().to(torch.float32).numpy().astype(_LE_F32, copy=False)
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(np.ascontiguousarray(arr).tobytes())
        offset += arr.size
    header = {"format": FORMAT, "step": int(step), "model_spec": spec.to_dict(), "tensors": table}
    header.update(extra or {})
    tmp = base.with_suffix(".bin.tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(base.with_suffix(".bin"))
    base.with_suffix(".json").write_text(json.dumps(header, indent=1))
    return base


def read_checkpoint(path) -> tuple[dict, dict[str, torch.Tensor]]:
    base = _base(path)
    head_file, blob_file = base.with_suffix(".json"), base.with_suffix(".bin")
    for f in (head_file, blob_file):
        if not f.exists():
            raise LoadError(f"missing checkpoint file: {f}")
    header = json.loads(head_file.read_text())
    if header.get("format") != FORMAT:
        raise LoadError(f"{head_file}: unknown checkpoint format {header.get('format')!r}")
    raw = np.frombuffer(blob_file.read_bytes(), dtype=_LE_F32)
    tensors = {}
    for entry in header["tensors"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > raw.size:
            raise LoadError(f"{blob_file}: tensor {entry['name']} runs past end of blob")
        arr = raw[start:start + size].reshape(entry["shape"]).astype(np.float32)
        tensors[entry["name"]] = torch.from_numpy(arr)
    return header, tensors


def load_module_state(module: torch.nn.Module, prefix: str, tensors: dict[str, torch.Tensor]) -> None:
    state = {}
    for name, ref in module.state_dict().items():
        key = f"{prefix}.{name}"
        if key not in tensors:
            raise LoadError(f"checkpoint lacks tensor {key}")
        if tuple(tensors[key].shape) != tuple(ref.shape):
            raise LoadError(f"tensor {key}: shape {tuple(tensors[key].shape)} != expected {tuple(ref.shape)}")
        state[name] = tensors[key].to(ref.dtype)
    module.load_state_dict(state)


def module_tensors(module: torch.nn.Module, prefix: str) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def adam_tensors(opt: torch.optim.Optimizer, module: torch.nn.Module, prefix: str) -> tuple[dict, dict]:
    """Adam moments as named tensors plus the per-parameter step counters."""
    tensors, steps = {}, {}
    for name, p in module.named_parameters():
        st = opt.state.get(p)
        if not st:
            continue
        tensors[f"{prefix}.exp_avg.{name}"] = st["exp_avg"]
        tensors[f"{prefix}.exp_avg_sq.{name}"] = st["exp_avg_sq"]
        steps[name] = float(st["step"])
    return tensors, steps


def restore_adam(opt: torch.optim.Optimizer, module: torch.nn.Module, prefix: str,
                 tensors: dict[str, torch.Tensor], steps: dict[str, float]) -> None:
    state = {}
    for i, (name, p) in enumerate(module.named_parameters()):
        if name not in steps:
            continue
        state[i] = {
            "step": torch.tensor(steps[name], dtype=torch.float32),
            "exp_avg": tensors[f"{prefix}.exp_avg.{name}"].to(p.dtype).clone(),
            "exp_avg_sq": tensors[f"{prefix}.exp_avg_sq.{name}"].to(p.dtype).clone(),
        }
    opt.load_state_dict({"state": state, "param_groups": opt.state_dict()["param_groups"]})
