"""Contrastive (EgoNCE, InfoNCE) and multimodal (VTM, MLM) losses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

IGNORE_INDEX = -100


@dataclass
class ContrastiveBatch:
    """Joint embeddings over the augmented batch.

    The first ``n_original`` rows are the original batch; the rest are hard
    negatives, with ``hard_pairs`` mapping original index -> row of its negative.
    ``positives`` is a boolean [N, N] matrix, row i marking P_i.
    """

    video: torch.Tensor
    text: torch.Tensor
    positives: torch.Tensor
    hard_pairs: dict[int, int] = field(default_factory=dict)
    n_original: int | None = None

    def __post_init__(self):
        n = self.video.shape[0]
        if self.n_original is None:
            self.n_original = n
        if self.text.shape[0] != n or self.positives.shape != (n, n):
            raise ValueError("video, text and positives must agree on batch size")
        if not bool(self.positives.diagonal().all()):
            raise ValueError("every anchor must be in its own positive set")
        if len(set(self.hard_pairs.values())) != len(self.hard_pairs):
            raise ValueError("hard_pairs must be injective")

    @classmethod
    def diagonal(cls, video, text):
        n = video.shape[0]
        return cls(video, text, torch.eye(n, dtype=torch.bool))


def _directional_egonce(logits: torch.Tensor, positives: torch.Tensor) -> torch.Tensor:
    numer = torch.logsumexp(logits.masked_fill(~positives, -math.inf), dim=1)
    denom = torch.logsumexp(logits, dim=1)
    return (denom - numer).mean()


def egonce_loss(batch: ContrastiveBatch, tau: float, symmetric: bool = True) -> torch.Tensor:
    """Negated EgoNCE log-ratio averaged over every anchor of the augmented batch.

    For video anchor i the numerator sums exp(v_i.t_k / tau) over k in P_i and
    the denominator over every text in the batch (originals and hard negatives).
    With ``symmetric`` the text-anchor direction is averaged in.
    """
    if batch.video.shape[0] == 0:
        raise ValueError("empty batch")
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = batch.video @ batch.text.T / tau
    loss = _directional_egonce(logits, batch.positives)
    if symmetric:
        loss = 0.5 * (loss + _directional_egonce(logits.T, batch.positives.T))
    return loss


def infonce_loss(video: torch.Tensor, text: torch.Tensor, tau: float,
                 symmetric: bool = True) -> torch.Tensor:
    if video.shape[0] == 0:
        raise ValueError("empty batch")
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = video @ text.T / tau
    diag = logits.diagonal()
    loss = (torch.logsumexp(logits, dim=1) - diag).mean()
    if symmetric:
        loss = 0.5 * (loss + (torch.logsumexp(logits, dim=0) - diag).mean())
    return loss


def vtm_loss(features: torch.Tensor, labels: torch.Tensor, head: torch.nn.Module) -> torch.Tensor:
    """Binary cross-entropy of ``head`` applied to fused CLS features."""
    if features.shape[0] != labels.shape[0]:
        raise ValueError(f"{features.shape[0]} features vs {labels.shape[0]} labels")
    logits = head(features).squeeze(-1)
    return F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype))


def mask_tokens(ids: torch.Tensor, rate: float, vocab_size: int, special_ids,
                mask_id: int, generator: torch.Generator):
    """Choose ceil(rate * maskable) positions per row and corrupt them 80/10/10.

    Returns (corrupted ids, labels) where labels hold the original id at chosen
    positions and IGNORE_INDEX elsewhere.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("mask rate must be in (0, 1)")
    special = torch.zeros(vocab_size, dtype=torch.bool)
    special[list(special_ids)] = True
    maskable = ~special[ids]
    if not bool(maskable.any()):
        raise ValueError("no maskable tokens")
    corrupted = ids.clone()
    labels = torch.full_like(ids, IGNORE_INDEX)
    n_regular = vocab_size - int(special.sum())
    regular = (~special).nonzero().squeeze(1)
    for r in range(ids.shape[0]):
        cand = maskable[r].nonzero().squeeze(1)
        if cand.numel() == 0:
            continue
        k = math.ceil(round(rate * cand.numel(), 9))
        chosen = cand[torch.randperm(cand.numel(), generator=generator)[:k]].sort().values
        labels[r, chosen] = ids[r, chosen]
        roll = torch.rand(k, generator=generator)
        rand_tok = regular[torch.randint(n_regular, (k,), generator=generator)]
        new = torch.where(roll < 0.8, torch.full_like(chosen, mask_id),
                          torch.where(roll < 0.9, rand_tok, ids[r, chosen]))
        corrupted[r, chosen] = new
    return corrupted, labels


def mlm_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Cross-entropy over masked positions only; logits [B, L, V], labels [B, L]."""
    if not bool((labels != IGNORE_INDEX).any()):
        raise ValueError("no masked positions")
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), labels.reshape(-1),
                           ignore_index=IGNORE_INDEX)
