"""Toy-scale sparse video-text model: video encoder, text encoder, cross-attention fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import (AttentionTrace, TokenSequence, cls_attentiveness, dense_attention,
                        prune_tokens, select_top, sparse_attention)
from .sparsity import SparsityConfig, mask_for_tokens

SPECIAL_TOKENS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]")
PAD, CLS, SEP, MASK, UNK = range(len(SPECIAL_TOKENS))


@dataclass(frozen=True)
class ModelConfig:
    video_layers: int = 4
    text_layers: int = 4
    multimodal_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    frames_per_clip: int = 4
    image_size: int = 32
    patch_size: int = 8
    vocab_size: int = 64
    max_text_len: int = 12
    joint_dim: int = 32
    temperature: float = 0.05
    channels: int = 3
    mlp_ratio: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.image_size % self.patch_size:
            raise ValueError("image_size must be divisible by patch_size")
        if self.frames_per_clip < 1:
            raise ValueError("frames_per_clip must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.vocab_size <= len(SPECIAL_TOKENS):
            raise ValueError("vocab_size must exceed the special tokens")

    @property
    def patches_per_frame(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def n_video_tokens(self) -> int:
        return 1 + self.frames_per_clip * self.patches_per_frame


class Tokenizer:
    """Lowercase whitespace tokenizer with a closed vocabulary."""

    def __init__(self, words):
        self.vocab = list(SPECIAL_TOKENS) + sorted(set(words) - set(SPECIAL_TOKENS))
        self.index = {w: i for i, w in enumerate(self.vocab)}

    @classmethod
    def from_texts(cls, texts) -> "Tokenizer":
        return cls(w for t in texts for w in t.lower().split())

    def __len__(self):
        return len(self.vocab)

    def encode(self, text: str, max_len: int) -> list[int]:
        ids = [self.index.get(w, UNK) for w in text.lower().split()]
        return [CLS] + ids[:max_len - 2] + [SEP]

    def batch(self, texts, max_len: int) -> torch.Tensor:
        rows = [self.encode(t, max_len) for t in texts]
        width = max(len(r) for r in rows)
        return torch.tensor([r + [PAD] * (width - len(r)) for r in rows], dtype=torch.long)


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.xavier_uniform_(module.weight)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.normal_(module.weight, std=0.02)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def _split(self, x):
        b, n, d = x.shape
        return x.view(b, n, self.n_heads, d // self.n_heads).transpose(1, 2)

    def forward(self, x, mask=None, key_padding=None, dense=False):
        q, k, v = (self._split(t) for t in self.qkv(x).chunk(3, dim=-1))
        if dense:
            out, trace = dense_attention(q, k, v, key_padding)
        else:
            if key_padding is not None:
                n = x.shape[1]
                pad_mask = (~key_padding)[:, None, None, :].expand(-1, 1, n, -1)
                mask = pad_mask if mask is None else mask & pad_mask
            out, trace = sparse_attention(q, k, v, mask)
        out = out.transpose(1, 2).reshape(x.shape)
        return self.proj(out), trace


class CrossAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d_model, d_model)
        self.kv = nn.Linear(d_model, 2 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x, context):
        b, n, d = x.shape
        h = self.n_heads
        q = self.q(x).view(b, n, h, d // h).transpose(1, 2)
        k, v = (t.view(b, -1, h, d // h).transpose(1, 2) for t in self.kv(context).chunk(2, dim=-1))
        w = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(d // h), dim=-1)
        return self.proj((w @ v).transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    """Pre-norm transformer block, optionally with a cross-attention sublayer."""

    def __init__(self, d_model: int, n_heads: int, mlp_ratio: int = 2, cross: bool = False):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads)
        self.cross = CrossAttention(d_model, n_heads) if cross else None
        self.norm_cross = nn.LayerNorm(d_model) if cross else None
        self.norm2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(nn.Linear(d_model, mlp_ratio * d_model), nn.GELU(),
                                 nn.Linear(mlp_ratio * d_model, d_model))

    def forward(self, x, mask=None, key_padding=None, context=None, dense=False):
        a, trace = self.attn(self.norm1(x), mask, key_padding, dense)
        x = x + a
        if self.cross is not None:
            x = x + self.cross(self.norm_cross(x), context)
        return x + self.mlp(self.norm2(x)), trace


class PatchEmbed(nn.Module):
    """Shared 2-D linear patch embedding applied to every frame, frame-major order."""

    def __init__(self, patch_size: int, channels: int, d_model: int):
        super().__init__()
        self.patch_size = patch_size
        self.proj = nn.Linear(patch_size * patch_size * channels, d_model)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        b, f, h, w, c = frames.shape
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"frame {h}x{w} not divisible by patch {p}")
        x = frames.reshape(b, f, h // p, p, w // p, p, c).permute(0, 1, 2, 4, 3, 5, 6)
        return self.proj(x.reshape(b, f * (h // p) * (w // p), p * p * c))


@dataclass
class VideoOutput:
    seq: TokenSequence
    v: torch.Tensor
    trace: AttentionTrace
    token_counts: list[int] = field(default_factory=list)
    kept: dict[int, torch.Tensor] = field(default_factory=dict)


@dataclass
class TextOutput:
    hidden: torch.Tensor
    padding: torch.Tensor
    t: torch.Tensor


class SparseVideoText(nn.Module):
    def __init__(self, config: ModelConfig, sparsity: SparsityConfig):
        super().__init__()
        sparsity.validate_depth(config.video_layers)
        self.config, self.sparsity = config, sparsity
        d, h, r = config.d_model, config.n_heads, config.mlp_ratio
        self.patch_embed = PatchEmbed(config.patch_size, config.channels, d)
        self.video_cls = nn.Parameter(torch.zeros(1, 1, d))
        self.space_pos = nn.Parameter(torch.zeros(1, config.patches_per_frame, d))
        self.frame_pos = nn.Parameter(torch.zeros(1, config.frames_per_clip, d))
        self.video_blocks = nn.ModuleList(Block(d, h, r) for _ in range(config.video_layers))
        self.video_norm = nn.LayerNorm(d)
        self.video_proj = nn.Linear(d, config.joint_dim)

        self.tok_embed = nn.Embedding(config.vocab_size, d)
        self.text_pos = nn.Embedding(config.max_text_len, d)
        self.text_blocks = nn.ModuleList(Block(d, h, r) for _ in range(config.text_layers))
        self.text_norm = nn.LayerNorm(d)
        self.text_proj = nn.Linear(d, config.joint_dim)
        # trailing text blocks augmented with cross-attention form the multimodal encoder
        self.fusion_blocks = nn.ModuleList(Block(d, h, r, cross=True)
                                           for _ in range(config.multimodal_layers))
        self.fusion_norm = nn.LayerNorm(d)
        self.vtm_head = nn.Linear(d, 1)
        self.mlm_head = nn.Linear(d, config.vocab_size)

        self.apply(_init_weights)
        for p in (self.video_cls, self.space_pos, self.frame_pos):
            nn.init.normal_(p, std=0.02)

    def video_tokens(self, frames: torch.Tensor) -> TokenSequence:
        cfg = self.config
        b, f, hgt, wid, _ = frames.shape
        if f > cfg.frames_per_clip:
            raise ValueError(f"{f} frames exceeds frames_per_clip={cfg.frames_per_clip}")
        if hgt != cfg.image_size or wid != cfg.image_size:
            raise ValueError(f"expected {cfg.image_size}x{cfg.image_size} frames, got {hgt}x{wid}")
        x = self.patch_embed(frames)
        n_p = cfg.patches_per_frame
        pos = (self.space_pos[:, None] + self.frame_pos[:, :f, None]).reshape(1, f * n_p, -1)
        x = torch.cat([self.video_cls.expand(b, -1, -1), x + pos], dim=1)
        return TokenSequence(x, video_origin(b, f, cfg.image_size // cfg.patch_size), 0)

    def encode_video(self, frames: torch.Tensor, dense: bool = False, step: int = 0) -> VideoOutput:
        seq = self.video_tokens(frames)
        counts, kept = [seq.n_tokens], {}
        trace = None
        for layer, blk in enumerate(self.video_blocks, 1):
            mask = None if dense else mask_for_tokens(seq.n_tokens, self.sparsity, step)[2]
            x, trace = blk(seq.features, mask=mask, dense=dense)
            seq = TokenSequence(x, seq.origin, layer)
            if layer in self.sparsity.prune_layers:
                seq = prune_tokens(seq, cls_attentiveness(trace), self.sparsity.q_vision)
                kept[layer] = seq.origin
            counts.append(seq.n_tokens)
        final = self.video_norm(seq.features)
        v = F.normalize(self.video_proj(final[:, 0]), dim=-1)
        return VideoOutput(TokenSequence(final, seq.origin, seq.layer_tag), v, trace, counts, kept)

    def text_embed(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.config.max_text_len:
            raise ValueError(f"text length {ids.shape[1]} > max_text_len {self.config.max_text_len}")
        if bool(((ids < 0) | (ids >= self.config.vocab_size)).any()):
            raise ValueError("unknown token id")
        return self.tok_embed(ids) + self.text_pos.weight[: ids.shape[1]]

    def encode_text(self, ids: torch.Tensor, dense: bool = False) -> TextOutput:
        x = self.text_embed(ids)
        padding = ids == PAD
        for blk in self.text_blocks:
            x, _ = blk(x, key_padding=padding, dense=dense)
        t = F.normalize(self.text_proj(self.text_norm(x)[:, 0]), dim=-1)
        return TextOutput(x, padding, t)

    def select_visual(self, video: VideoOutput) -> torch.Tensor:
        """Video CLS plus the most CLS-attended visual tokens, ceil(q_m * n_visual) in total."""
        seq = video.seq
        n = seq.n_tokens
        k = math.ceil(round(self.sparsity.q_multimodal * n, 9))
        if k >= n:
            return seq.features
        scores = cls_attentiveness(video.trace)[:, 1:]
        idx = torch.cat([torch.zeros(scores.shape[0], 1, dtype=torch.long), select_top(scores, k - 1) + 1], 1)
        return torch.gather(seq.features, 1, idx[..., None].expand(-1, -1, seq.features.shape[-1]))

    def fuse(self, text: TextOutput, video: VideoOutput, dense: bool = False) -> torch.Tensor:
        context = self.select_visual(video)
        x = text.hidden
        for blk in self.fusion_blocks:
            x, _ = blk(x, key_padding=text.padding, context=context, dense=dense)
        return self.fusion_norm(x)


def video_origin(batch: int, frames: int, grid: int) -> torch.Tensor:
    f, r, c = torch.meshgrid(torch.arange(frames), torch.arange(grid), torch.arange(grid), indexing="ij")
    origin = torch.stack([f, r, c], dim=-1).reshape(-1, 3)
    origin = torch.cat([torch.full((1, 3), -1), origin])
    return origin[None].expand(batch, -1, -1).contiguous()


def expected_token_counts(config: ModelConfig, sparsity: SparsityConfig, frames: int | None = None) -> list[int]:
    """Closed-form video token count before the first layer and after each layer."""
    from .attention import n_kept
    f = config.frames_per_clip if frames is None else frames
    n = 1 + f * config.patches_per_frame
    counts = [n]
    for layer in range(1, config.video_layers + 1):
        if layer in sparsity.prune_layers:
            n = n_kept(n, sparsity.q_vision)
        counts.append(n)
    return counts
