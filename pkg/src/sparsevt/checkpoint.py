"""Checkpoints as .npz archives of named parameter arrays plus a JSON header."""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import torch

from .model import ModelConfig, SparseVideoText, Tokenizer
from .sparsity import SparsityConfig

FORMAT_VERSION = 1
META_KEY = "__meta__"


def save_checkpoint(path, model: SparseVideoText, tokenizer: Tokenizer, extra: dict | None = None) -> None:
    meta = {"format_version": FORMAT_VERSION,
            "model": dataclasses.asdict(model.config),
            "sparsity": dataclasses.asdict(model.sparsity),
            "vocab": tokenizer.vocab,
            "shapes": {k: list(v.shape) for k, v in model.state_dict().items()},
            "extra": extra or {}}
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays[META_KEY] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns (model, tokenizer, meta)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data[META_KEY]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {meta.get('format_version')}")
        state = {k: torch.from_numpy(data[k].copy()) for k in data.files if k != META_KEY}
    sp = meta["sparsity"]
    sp["prune_layers"], sp["global_tokens"] = tuple(sp["prune_layers"]), tuple(sp["global_tokens"])
    model = SparseVideoText(ModelConfig(**meta["model"]), SparsityConfig(**sp))
    for k, shape in meta["shapes"].items():
        if list(state[k].shape) != shape:
            raise ValueError(f"{path}: {k} has shape {list(state[k].shape)}, header says {shape}")
    model.load_state_dict(state)
    tokenizer = Tokenizer(meta["vocab"])
    if tokenizer.vocab != meta["vocab"]:
        raise ValueError(f"{path}: vocabulary is not in canonical order")
    return model, tokenizer, meta
