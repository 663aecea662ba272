"""AdamW training of the sparse video-text model on clip-text manifests."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..datagen import render_clip
from ..model import CLS, MASK, PAD, SEP, UNK, ModelConfig, SparseVideoText, Tokenizer, VideoOutput
from ..attention import AttentionTrace, TokenSequence
from ..objectives import ContrastiveBatch, egonce_loss, infonce_loss, mask_tokens, mlm_loss, vtm_loss
from ..sampling import DatasetIndex, build_augmented_batch
from ..sparsity import SparsityConfig

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "lr", "loss_total", "loss_nce", "loss_vtm", "loss_mlm")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.02
    epochs: int = 5
    batch_size: int = 8
    warmup_epochs: float = 1.0
    objective: str = "egonce"
    symmetric: bool = True
    w_nce: float = 1.0
    w_vtm: float = 1.0
    w_mlm: float = 1.0
    mask_rate: float = 0.15
    adjacency_k: int = 2
    vtm_negatives: str = "hard"
    seed: int = 0
    checkpoint_every_epoch: bool = True

    def __post_init__(self):
        if self.objective not in ("egonce", "infonce"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.vtm_negatives not in ("hard", "random"):
            raise ValueError(f"unknown vtm_negatives {self.vtm_negatives!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


class FrameStore:
    """Renders each clip once and serves stacked float tensors."""

    def __init__(self, dtype=torch.float32):
        self.cache: dict[str, torch.Tensor] = {}
        self.dtype = dtype

    def get(self, records) -> torch.Tensor:
        out = []
        for r in records:
            if r.clip_id not in self.cache:
                self.cache[r.clip_id] = torch.from_numpy(render_clip(r)).to(self.dtype)
            out.append(self.cache[r.clip_id])
        return torch.stack(out)


def lr_lambda(warmup_steps: int, total_steps: int):
    """Linear warmup to the base rate, then cosine decay to zero."""

    def f(step: int) -> float:
        if step < warmup_steps:
            return (step + 1) / warmup_steps
        span = max(1, total_steps - warmup_steps)
        return 0.5 * (1.0 + math.cos(math.pi * min(1.0, (step - warmup_steps) / span)))

    return f


def subset_video(video: VideoOutput, idx: torch.Tensor) -> VideoOutput:
    seq = TokenSequence(video.seq.features[idx], video.seq.origin[idx], video.seq.layer_tag)
    return VideoOutput(seq, video.v[idx], AttentionTrace(video.trace.weights[idx]))


def vtm_negatives(sim: torch.Tensor, positives: torch.Tensor, mode: str, gen: torch.Generator):
    """For each text row, a non-positive video column (hardest or uniform), or -1 if none."""
    masked = sim.masked_fill(positives, -math.inf)
    if mode == "hard":
        best = masked.argmax(dim=1)
    else:
        noise = torch.rand(sim.shape, generator=gen, dtype=sim.dtype)
        best = noise.masked_fill(positives, -1.0).argmax(dim=1)
    has_neg = (~positives).any(dim=1)
    return torch.where(has_neg, best, torch.full_like(best, -1))


class Trainer:
    def __init__(self, model_config: ModelConfig, sparsity: SparsityConfig, config: TrainConfig,
                 manifest, tokenizer: Tokenizer | None = None, dtype=torch.float32):
        if not manifest:
            raise ValueError("empty manifest")
        self.manifest = list(manifest)
        self.tokenizer = tokenizer or Tokenizer.from_texts(r.text for r in self.manifest)
        if model_config.vocab_size != len(self.tokenizer):
            model_config = dataclasses.replace(model_config, vocab_size=len(self.tokenizer))
        self.config = config
        torch.manual_seed(config.seed)
        self.model = SparseVideoText(model_config, sparsity).to(dtype)
        self.dtype = dtype
        self.index = DatasetIndex(self.manifest)
        self.frames = FrameStore(dtype)
        self.steps_per_epoch = math.ceil(len(self.manifest) / config.batch_size)
        self.total_steps = self.steps_per_epoch * config.epochs
        self.optimizer = torch.optim.AdamW(self.model.parameters(), lr=config.lr,
                                           betas=(config.beta1, config.beta2),
                                           weight_decay=config.weight_decay)
        warmup = max(1, round(config.warmup_epochs * self.steps_per_epoch))
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, lr_lambda(warmup, self.total_steps))
        self.step = 0
        self.epoch = 0
        self.gen = torch.Generator().manual_seed(config.seed)

    def batches(self, epoch: int):
        order = np.random.default_rng([self.config.seed, epoch]).permutation(len(self.manifest))
        bs = self.config.batch_size
        for i in range(0, len(order), bs):
            yield [self.manifest[j] for j in order[i:i + bs]]

    def losses(self, batch, epoch: int) -> dict[str, torch.Tensor]:
        cfg, model = self.config, self.model
        mcfg = model.config
        if cfg.objective == "egonce":
            aug = build_augmented_batch(batch, self.index, seed=cfg.seed * 100003 + epoch,
                                        adjacency_k=cfg.adjacency_k)
            records, hard_pairs = aug.records, aug.hard_pairs
            positives = torch.from_numpy(aug.positives)
        else:
            records, hard_pairs = batch, {}
            positives = torch.eye(len(batch), dtype=torch.bool)
        frames = self.frames.get(records)
        ids = self.tokenizer.batch([r.text for r in records], mcfg.max_text_len)
        video = model.encode_video(frames, step=self.step)
        text = model.encode_text(ids)
        if cfg.objective == "egonce":
            nce = egonce_loss(ContrastiveBatch(video.v, text.t, positives, hard_pairs, len(batch)),
                              mcfg.temperature, cfg.symmetric)
        else:
            nce = infonce_loss(video.v, text.t, mcfg.temperature, cfg.symmetric)
        zero = nce.new_zeros(())
        out = {"loss_nce": nce, "loss_vtm": zero, "loss_mlm": zero}

        if cfg.w_vtm > 0:
            with torch.no_grad():
                neg = vtm_negatives(text.t @ video.v.T, positives, cfg.vtm_negatives, self.gen)
            rows = torch.arange(len(records))
            has = neg >= 0
            t_idx = torch.cat([rows, rows[has]])
            v_idx = torch.cat([rows, neg[has]])
            labels = torch.cat([torch.ones(len(rows)), torch.zeros(int(has.sum()))])
            paired_text = type(text)(text.hidden[t_idx], text.padding[t_idx], text.t[t_idx])
            fused = model.fuse(paired_text, subset_video(video, v_idx))
            out["loss_vtm"] = vtm_loss(fused[:, 0], labels.to(fused.dtype), model.vtm_head)

        if cfg.w_mlm > 0:
            masked, labels = mask_tokens(ids, cfg.mask_rate, mcfg.vocab_size, (PAD, CLS, SEP, MASK, UNK),
                                         MASK, self.gen)
            fused = model.fuse(model.encode_text(masked), video)
            out["loss_mlm"] = mlm_loss(model.mlm_head(fused), labels)

        out["loss_total"] = cfg.w_nce * out["loss_nce"] + cfg.w_vtm * out["loss_vtm"] + cfg.w_mlm * out["loss_mlm"]
        return out

    def train_step(self, batch, epoch: int) -> dict:
        self.model.train()
        lr = self.optimizer.param_groups[0]["lr"]
        losses = self.losses(batch, epoch)
        total = losses["loss_total"]
        if not torch.isfinite(total):
            raise NonFiniteLoss(self.step, [r.clip_id for r in batch], {k: float(v.detach()) for k, v in losses.items()})
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        self.scheduler.step()
        rec = {"step": self.step, "epoch": epoch, "lr": lr}
        rec.update({k: float(v.detach()) for k, v in losses.items()})
        self.step += 1
        return rec

    def fit(self, out_dir=None, max_steps: int | None = None, log_every: int = 0) -> list[dict]:
        from ..checkpoint import save_checkpoint

        out = Path(out_dir) if out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
        metrics = []
        fh = open(out / "metrics.jsonl", "w") if out else None
        try:
            for epoch in range(self.config.epochs):
                self.epoch = epoch
                for batch in self.batches(epoch):
                    if max_steps is not None and self.step >= max_steps:
                        break
                    try:
                        rec = self.train_step(batch, epoch)
                    except NonFiniteLoss as err:
                        if out:
                            (out / "nonfinite_batch.json").write_text(json.dumps(err.dump(), indent=2))
                        raise
                    metrics.append(rec)
                    if fh:
                        fh.write(json.dumps(rec) + "\n")
                        fh.flush()
                    if log_every and rec["step"] % log_every == 0:
                        log.info("step %d lr %.2e loss %.4f", rec["step"], rec["lr"], rec["loss_total"])
                if out and self.config.checkpoint_every_epoch:
                    save_checkpoint(out / f"checkpoint_epoch{epoch}.npz", self.model, self.tokenizer,
                                    {"epoch": epoch, "step": self.step})
            if out:
                save_checkpoint(out / "checkpoint.npz", self.model, self.tokenizer,
                                {"epoch": self.epoch, "step": self.step})
        finally:
            if fh:
                fh.close()
        return metrics


class NonFiniteLoss(FloatingPointError):
    def __init__(self, step: int, clip_ids, losses: dict):
        super().__init__(f"non-finite loss at step {step}: {losses}")
        self.step, self.clip_ids, self.losses = step, clip_ids, losses

    def dump(self) -> dict:
        return {"step": self.step, "clip_ids": self.clip_ids, "losses": self.losses}


def train(model_config: ModelConfig, sparsity: SparsityConfig, config: TrainConfig, manifest,
          taxonomy=None, out_dir=None, max_steps: int | None = None) -> Trainer:
    """Fit a fresh model; ``taxonomy`` is accepted for interface parity, records already carry class ids."""
    trainer = Trainer(model_config, sparsity, config, manifest)
    trainer.fit(out_dir, max_steps)
    return trainer
