"""Masked multi-head attention and CLS-attentiveness token pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

# Added to disallowed logits instead of -inf so gradients stay finite.
MASK_VALUE = -1e9

CLS_ORIGIN = (-1, -1, -1)


@dataclass
class TokenSequence:
    """Batched token features with per-token provenance.

    features: [B, N, D]; origin: [B, N, 3] long holding (frame, row, col),
    with the CLS token (always position 0) marked by -1 entries.
    """

    features: torch.Tensor
    origin: torch.Tensor
    layer_tag: int = 0

    def __post_init__(self):
        if self.features.dim() != 3 or self.features.shape[-1] == 0:
            raise ValueError("features must be [B, N, D] with D > 0")
        if self.origin.shape[:2] != self.features.shape[:2]:
            raise ValueError("origin must cover every token")
        if not bool((self.origin[:, 0] < 0).all()):
            raise ValueError("position 0 must be the CLS token")
        if bool((self.origin[:, 1:, 0] < 0).any()):
            raise ValueError("exactly one CLS token per sequence")

    @property
    def n_tokens(self) -> int:
        return self.features.shape[1]


@dataclass
class AttentionTrace:
    weights: torch.Tensor  # [B, H, N, N], zero on disallowed pairs

    @property
    def cls_row(self) -> torch.Tensor:
        return self.weights[:, :, 0, :].mean(dim=1)


def sparse_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor,
                     mask: torch.Tensor | None = None):
    """Softmax attention restricted to ``mask``.

    q, k, v are [B, H, N, Dh]; mask is a boolean [N, N] (or broadcastable)
    tensor of allowed query-key pairs. Returns (output [B, H, N, Dh], trace).
    """
    if q.dim() != 4 or q.shape != k.shape or k.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"shape mismatch: q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}")
    n = q.shape[-2]
    logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if mask is not None:
        if mask.shape[-2:] != (n, n):
            raise ValueError(f"mask {tuple(mask.shape)} does not match {n} tokens")
        assert bool(mask.any(dim=-1).all()), "query row with no allowed keys"
        logits = logits.masked_fill(~mask, MASK_VALUE)
    weights = torch.softmax(logits, dim=-1)
    return weights @ v, AttentionTrace(weights)


def dense_attention(q, k, v, key_padding: torch.Tensor | None = None):
    """Reference unmasked attention; ``key_padding`` [B, N] marks ignored keys."""
    if key_padding is None:
        out = torch.nn.functional.scaled_dot_product_attention(q, k, v)
        logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
        return out, AttentionTrace(torch.softmax(logits, dim=-1))
    logits = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    logits = logits.masked_fill(key_padding[:, None, None, :], MASK_VALUE)
    w = torch.softmax(logits, dim=-1)
    return w @ v, AttentionTrace(w)


def cls_attentiveness(trace: AttentionTrace) -> torch.Tensor:
    """Head-averaged attention from the CLS query to every token, [B, N]."""
    return trace.cls_row


def n_kept(n_tokens: int, keep_rate: float) -> int:
    """Tokens surviving a pruning step, CLS included."""
    return 1 + math.ceil(round(keep_rate * (n_tokens - 1), 9))


def select_top(scores: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the ``k`` largest scores per row, ties to lower index, ascending order."""
    order = torch.sort(scores, dim=-1, descending=True, stable=True).indices
    return torch.sort(order[..., :k], dim=-1).values


def prune_tokens(seq: TokenSequence, scores: torch.Tensor, keep_rate: float) -> TokenSequence:
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError(f"keep_rate must be in (0, 1], got {keep_rate}")
    n = seq.n_tokens
    if scores.shape != seq.features.shape[:2]:
        raise ValueError("scores must cover every token")
    keep = n_kept(n, keep_rate)
    if keep == n:
        return seq
    idx = select_top(scores[:, 1:], keep - 1) + 1
    cls = torch.zeros(idx.shape[0], 1, dtype=idx.dtype, device=idx.device)
    idx = torch.cat([cls, idx], dim=1)
    feats = torch.gather(seq.features, 1, idx[..., None].expand(-1, -1, seq.features.shape[-1]))
    origin = torch.gather(seq.origin, 1, idx[..., None].expand(-1, -1, 3))
    return TokenSequence(feats, origin, seq.layer_tag)
