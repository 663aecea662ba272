"""Twin training runs that differ only in the contrastive objective."""

from __future__ import annotations

import dataclasses
import time

from ..datagen import SynthSpec, generate_dataset
from ..model import ModelConfig
from ..sparsity import SparsityConfig
from .mcq import build_mcq_items, evaluate_mcq
from .train import FrameStore, TrainConfig, Trainer

HELDOUT_OFFSET = 1000


def objective_twins(seed: int, data: SynthSpec | None = None, model_config: ModelConfig | None = None,
                    sparsity: SparsityConfig | None = None, train_config: TrainConfig | None = None,
                    n_items: int = 2000, objectives=("infonce", "egonce")) -> dict:
    """Train one model per objective on the same data and budget, score on held-out MCQ.

    Training clips come from ``data`` with ``seed``; evaluation uses a fresh dataset
    generated with ``seed + HELDOUT_OFFSET`` so no clip is seen during training.
    """
    data = dataclasses.replace(data or SynthSpec(), seed=seed)
    train_set, _ = generate_dataset(data)
    test_set, _ = generate_dataset(dataclasses.replace(data, seed=seed + HELDOUT_OFFSET))
    items = build_mcq_items(test_set, n_items, 0.5, seed)
    frames = FrameStore()
    out = {}
    for obj in objectives:
        t0 = time.perf_counter()
        cfg = dataclasses.replace(train_config or TrainConfig(), objective=obj, seed=seed)
        trainer = Trainer(model_config or ModelConfig(), sparsity or SparsityConfig(), cfg, train_set)
        metrics = trainer.fit()
        res = evaluate_mcq(trainer.model, trainer.tokenizer, items, test_set, frames)
        res.update(steps=len(metrics), final_loss=metrics[-1]["loss_total"], seconds=time.perf_counter() - t0)
        out[obj] = res
    return out
