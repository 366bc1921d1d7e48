"""Checkpoints: one MPTN tensor file per parameter/buffer plus a JSON sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import torch
from torch import nn

from ..ingest import read_tensor, write_tensor


def save_state(module: nn.Module, directory, meta: dict, meta_name: str = "model.json") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for name, t in module.state_dict().items():
        if not t.is_floating_point():
            continue  # e.g. BN num_batches_tracked
        write_tensor(t.detach().cpu().float().numpy(), tuple(t.shape), directory / f"{name}.mptn")
        names.append(name)
    meta = dict(meta, tensors=names)
    (directory / meta_name).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def load_meta(directory, meta_name: str = "model.json") -> dict:
    return json.loads((Path(directory) / meta_name).read_text())


def load_state(module: nn.Module, directory, meta_name: str = "model.json") -> nn.Module:
    directory = Path(directory)
    meta = load_meta(directory, meta_name)
    current = module.state_dict()
    state = {}
    for name in meta["tensors"]:
        tf = read_tensor(directory / f"{name}.mptn")
        state[name] = torch.from_numpy(tf.values.copy()).to(current[name].dtype)
    missing = [k for k, v in current.items() if v.is_floating_point() and k not in state]
    if missing:
        raise KeyError(f"checkpoint {directory} lacks tensors {missing}")
    module.load_state_dict(state, strict=False)
    return module
