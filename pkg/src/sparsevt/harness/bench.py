"""Analytic attention cost model plus a measured forward pass per sparsity config.

Memory estimate per video layer, single precision:
    4 bytes * (n_heads * allowed_pairs            stored attention weights
               + n_tokens * d_model * ACT_PER_TOKEN)  activations
where ACT_PER_TOKEN = 6 + 2 * mlp_ratio covers the block input, two layer
norms, q/k/v, attention output and the MLP hidden layer. The model is a
documented approximation, not a hardware measurement.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import torch

from ..model import ModelConfig, SparseVideoText, expected_token_counts
from ..sparsity import allowed_pairs, mask_for_tokens

BYTES = 4
CSV_COLUMNS = ("config", "tokens", "pairs", "est_bytes", "fwd_ms")


@dataclass
class CostRow:
    config: str
    tokens: int
    layer_tokens: list[int]
    layer_pairs: list[int]
    est_bytes: int
    fwd_ms: float

    @property
    def pairs(self) -> int:
        return sum(self.layer_pairs)

    def csv_row(self) -> dict:
        return {"config": self.config, "tokens": self.tokens, "pairs": self.pairs,
                "est_bytes": self.est_bytes, "fwd_ms": f"{self.fwd_ms:.3f}"}


def layer_pairs(n_tokens: int, sparsity) -> int:
    layout, mask, tmask = mask_for_tokens(n_tokens, sparsity)
    return int(tmask.sum()) if mask is None else allowed_pairs(mask, layout)


def estimate(model_config: ModelConfig, sparsity, name: str = "") -> CostRow:
    counts = expected_token_counts(model_config, sparsity)
    per_layer_tokens = counts[:-1]
    pairs = [layer_pairs(n, sparsity) for n in per_layer_tokens]
    act = 6 + 2 * model_config.mlp_ratio
    est = sum(BYTES * (model_config.n_heads * p + n * model_config.d_model * act)
              for n, p in zip(per_layer_tokens, pairs))
    return CostRow(name or _label(sparsity), counts[0], per_layer_tokens, pairs, est, float("nan"))


def _label(sp) -> str:
    return f"Kl{sp.k_local}_Kr{sp.k_random}_G{sp.block_size}_qv{sp.q_vision}"


@torch.no_grad()
def time_forward(model_config: ModelConfig, sparsity, seed: int = 0, repeats: int = 3) -> float:
    torch.manual_seed(seed)
    model = SparseVideoText(model_config, sparsity).eval()
    gen = torch.Generator().manual_seed(seed)
    frames = torch.rand(1, model_config.frames_per_clip, model_config.image_size,
                        model_config.image_size, model_config.channels, generator=gen)
    model.encode_video(frames)  # warm the mask cache
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model.encode_video(frames)
        times.append((time.perf_counter() - t0) * 1e3)
    return sorted(times)[len(times) // 2]


def bench_cost(model_config: ModelConfig, configs, names=None, seed: int = 0, measure: bool = True) -> list[CostRow]:
    prev = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        rows = []
        for i, sp in enumerate(configs):
            row = estimate(model_config, sp, names[i] if names else "")
            if measure:
                row.fwd_ms = time_forward(model_config, sp, seed)
            rows.append(row)
        return rows
    finally:
        torch.set_num_threads(prev)


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.csv_row())
    return buf.getvalue()
