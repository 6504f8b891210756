"""Single-file checkpoints: a JSON header plus named arrays in one ``.npz``.

Keys: ``param/<name>`` for every network parameter, ``opt/<group>/<name>/<slot>``
for Adam moments and step counters.  The header carries the format version,
global step, config hash and the full config so a checkpoint is
self-describing.
"""
from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import torch

from .errors import CheckpointMismatch

FORMAT_VERSION = 1
_HEADER = "__header__"


@dataclass
class Checkpoint:
    path: Path
    format_version: int
    global_step: int
    config_hash: str
    config: dict
    arrays: Dict[str, np.ndarray]
    extra: dict

    def params(self) -> Dict[str, np.ndarray]:
        return {k[len("param/"):]: v for k, v in self.arrays.items() if k.startswith("param/")}


def _opt_arrays(group: str, opt: torch.optim.Optimizer, names: Dict[int, str]) -> Dict[str, np.ndarray]:
    out = {}
    for p, state in opt.state.items():
        name = names[id(p)]
        for slot, value in state.items():
            arr = value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
            out[f"opt/{group}/{name}/{slot}"] = arr
    return out


def save_checkpoint(path, nets: torch.nn.Module, optimizers: Optional[Dict[str, torch.optim.Optimizer]],
                    global_step: int, config: dict, config_hash: str, extra: Optional[dict] = None) -> Path:
    """Write atomically (temp file + rename) so a crash never leaves a torn file."""
    path = Path(path)
    names = {id(p): n for n, p in nets.named_parameters()}
    arrays = {f"param/{n}": p.detach().cpu().numpy() for n, p in nets.named_parameters()}
    for group, opt in (optimizers or {}).items():
        arrays.update(_opt_arrays(group, opt, names))
    header = {
        "format_version": FORMAT_VERSION,
        "global_step": int(global_step),
        "config_hash": config_hash,
        "config": config,
        "extra": extra or {},
    }
    arrays[_HEADER] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    os.replace(tmp, path)
    return path


def read_checkpoint(path, expected_hash: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CheckpointMismatch(f"{path}: unreadable checkpoint ({exc})") from exc
    if _HEADER not in arrays:
        raise CheckpointMismatch(f"{path}: missing header record")
    header = json.loads(arrays.pop(_HEADER).tobytes().decode())
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointMismatch(
            f"{path}: format_version {header.get('format_version')} != {FORMAT_VERSION}")
    if expected_hash is not None and header["config_hash"] != expected_hash:
        raise CheckpointMismatch(
            f"{path}: config_hash {header['config_hash']} does not match {expected_hash}")
    return Checkpoint(path, header["format_version"], header["global_step"],
                      header["config_hash"], header["config"], arrays, header.get("extra", {}))


def restore(ckpt: Checkpoint, nets: torch.nn.Module,
            optimizers: Optional[Dict[str, torch.optim.Optimizer]] = None) -> None:
    params = dict(nets.named_parameters())
    stored = ckpt.params()
    if set(stored) != set(params):
        missing = sorted(set(params) ^ set(stored))[:5]
        raise CheckpointMismatch(f"{ckpt.path}: parameter set differs (e.g. {missing})")
    with torch.no_grad():
        for name, p in params.items():
            arr = stored[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointMismatch(f"{ckpt.path}: shape mismatch for {name}")
            p.copy_(torch.from_numpy(arr))
    for group, opt in (optimizers or {}).items():
        prefix = f"opt/{group}/"
        for name, p in params.items():
            slots = {k[len(prefix) + len(name) + 1:]: v for k, v in ckpt.arrays.items()
                     if k.startswith(prefix + name + "/")}
            if slots:
                opt.state[p] = {s: torch.from_numpy(v.copy()) for s, v in slots.items()}
