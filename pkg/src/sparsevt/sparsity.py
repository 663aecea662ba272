"""Block-structured edge sparsity: local window + random blocks + global tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import torch

CLS_INDEX = 0


@dataclass(frozen=True)
class SparsityConfig:
    k_local: int = 1
    k_random: int = 1
    block_size: int = 16
    q_vision: float = 0.7
    q_multimodal: float = 0.1
    prune_layers: tuple[int, ...] = (2,)
    seed: int = 0
    global_tokens: tuple[int, ...] = (CLS_INDEX,)
    resample_per_step: bool = False

    def __post_init__(self):
        object.__setattr__(self, "prune_layers", tuple(int(x) for x in self.prune_layers))
        object.__setattr__(self, "global_tokens", tuple(int(x) for x in self.global_tokens))
        if self.k_local < 0 or self.k_random < 0:
            raise ValueError("k_local and k_random must be >= 0")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        for name in ("q_vision", "q_multimodal"):
            q = getattr(self, name)
            if not 0.0 < q <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {q}")
        if any(b <= a for a, b in zip(self.prune_layers, self.prune_layers[1:])):
            raise ValueError("prune_layers must be strictly increasing")
        if self.prune_layers and self.prune_layers[0] < 1:
            raise ValueError("prune_layers are 1-based")
        if not self.global_tokens:
            raise ValueError("at least one global token is required")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    @classmethod
    def full_scale(cls, k_random: int = 3, **overrides) -> "SparsityConfig":
        """Full-scale setting: (K_l, K_r, G) = (1, k_random, 56), (q_v, q_m) = (0.7, 0.1)."""
        kw = dict(k_local=1, k_random=k_random, block_size=56, q_vision=0.7,
                  q_multimodal=0.1, prune_layers=(4, 7, 10))
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def dense(cls, **overrides) -> "SparsityConfig":
        """Configuration whose masks always cover every pair and which never prunes."""
        kw = dict(k_local=1 << 20, k_random=0, q_vision=1.0, q_multimodal=1.0, prune_layers=())
        kw.update(overrides)
        return cls(**kw)

    def validate_depth(self, depth: int) -> None:
        if self.prune_layers and self.prune_layers[-1] > depth:
            raise ValueError(f"prune layer {self.prune_layers[-1]} exceeds encoder depth {depth}")


@dataclass(frozen=True)
class BlockLayout:
    n_blocks: int
    sizes: tuple[int, ...]

    @property
    def n_tokens(self) -> int:
        return sum(self.sizes)

    @property
    def ragged_tail(self) -> int:
        """Size of the last block when it is shorter than the others, else 0."""
        if len(self.sizes) > 1 and self.sizes[-1] != self.sizes[0]:
            return self.sizes[-1]
        return 0

    def block_of_token(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_blocks), self.sizes)


def partition_blocks(n_nonglobal_tokens: int, block_size: int) -> BlockLayout:
    if n_nonglobal_tokens < 1 or block_size < 1:
        raise ValueError("need at least one token and a positive block size")
    n_blocks = math.ceil(n_nonglobal_tokens / block_size)
    sizes = [block_size] * n_blocks
    sizes[-1] = n_nonglobal_tokens - block_size * (n_blocks - 1)
    return BlockLayout(n_blocks, tuple(sizes))


@dataclass(frozen=True)
class BlockMask:
    n_blocks: int
    allowed: tuple[frozenset[int], ...]
    global_tokens: frozenset[int] = field(default_factory=lambda: frozenset({CLS_INDEX}))
    ragged_tail: int = 0

    def block_matrix(self) -> np.ndarray:
        m = np.zeros((self.n_blocks, self.n_blocks), dtype=bool)
        for b, keys in enumerate(self.allowed):
            m[b, sorted(keys)] = True
        return m

    @property
    def n_block_pairs(self) -> int:
        return sum(len(k) for k in self.allowed)

    def token_mask(self, layout: BlockLayout) -> torch.Tensor:
        """Expand to a [n_tokens, n_tokens] boolean tensor, globals included."""
        return torch.from_numpy(_token_mask_np(self, layout))


def _nonglobal_positions(n_tokens: int, global_tokens) -> np.ndarray:
    g = set(global_tokens)
    return np.array([t for t in range(n_tokens) if t not in g], dtype=np.int64)


def _token_mask_np(mask: BlockMask, layout: BlockLayout) -> np.ndarray:
    if layout.n_blocks != mask.n_blocks:
        raise ValueError(f"layout has {layout.n_blocks} blocks, mask has {mask.n_blocks}")
    n_tokens = layout.n_tokens + len(mask.global_tokens)
    if any(not 0 <= t < n_tokens for t in mask.global_tokens):
        raise ValueError("global token index out of range")
    pos = _nonglobal_positions(n_tokens, mask.global_tokens)
    owner = layout.block_of_token()
    blocks = mask.block_matrix()
    out = np.zeros((n_tokens, n_tokens), dtype=bool)
    out[np.ix_(pos, pos)] = blocks[np.ix_(owner, owner)]
    g = sorted(mask.global_tokens)
    out[g, :] = True
    out[:, g] = True
    return out


def local_window(b: int, n_blocks: int, k_local: int) -> range:
    return range(max(0, b - k_local), min(n_blocks, b + k_local + 1))


def draw_random_blocks(seed: int, query_block: int, available: list[int], k: int,
                       step: int | None = None) -> list[int]:
    """Seeded draw without replacement from the sorted ``available`` list.

    Uses a PCG64 stream keyed by (seed, query_block[, step]) and takes the head
    of a permutation, so results are platform independent.
    """
    if k <= 0 or not available:
        return []
    key = [seed, query_block] if step is None else [seed, query_block, step]
    order = np.random.default_rng(key).permutation(len(available))
    return sorted(available[i] for i in order[:k])


def build_edge_mask(n_blocks: int, config: SparsityConfig, step: int = 0) -> BlockMask:
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    return _build_edge_mask(n_blocks, config, step if config.resample_per_step else None)


@lru_cache(maxsize=256)
def _build_edge_mask(n_blocks: int, config: SparsityConfig, step: int | None) -> BlockMask:
    allowed = []
    for b in range(n_blocks):
        window = set(local_window(b, n_blocks, config.k_local))
        available = [c for c in range(n_blocks) if c not in window]
        picks = draw_random_blocks(config.seed, b, available, config.k_random, step)
        allowed.append(frozenset(window | set(picks)))
    return BlockMask(n_blocks, tuple(allowed), frozenset(config.global_tokens))


def mask_for_tokens(n_tokens: int, config: SparsityConfig, step: int = 0):
    """Layout, block mask and token-level mask for a sequence of ``n_tokens`` (globals included)."""
    n_global = len(config.global_tokens)
    if n_tokens <= n_global:
        layout = BlockLayout(0, ())
        return layout, None, torch.ones(n_tokens, n_tokens, dtype=torch.bool)
    layout = partition_blocks(n_tokens - n_global, config.block_size)
    mask = build_edge_mask(layout.n_blocks, config, step)
    mask = BlockMask(mask.n_blocks, mask.allowed, mask.global_tokens, layout.ragged_tail)
    return layout, mask, _cached_token_mask(mask, layout)


@lru_cache(maxsize=256)
def _cached_token_mask(mask: BlockMask, layout: BlockLayout) -> torch.Tensor:
    return torch.from_numpy(_token_mask_np(mask, layout))


def allowed_pairs(mask: BlockMask, layout: BlockLayout) -> int:
    return int(_token_mask_np(mask, layout).sum())


def mask_density(mask: BlockMask, layout: BlockLayout) -> float:
    tm = _token_mask_np(mask, layout)
    return float(tm.sum()) / tm.size


def format_mask(mask: BlockMask, layout: BlockLayout) -> str:
    """0/1 text matrix (one row per query token) followed by a summary line."""
    tm = _token_mask_np(mask, layout)
    rows = [" ".join("1" if x else "0" for x in row) for row in tm]
    summary = f"n_blocks={mask.n_blocks} pairs={int(tm.sum())} density={tm.sum() / tm.size:.6f}"
    return "\n".join(rows + [summary]) + "\n"
