"""Five-way multiple-choice clip retrieval (inter- and intra-video)."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .train import FrameStore

N_CHOICES = 5


@dataclass(frozen=True)
class McqItem:
    query_text: str
    candidates: tuple[str, ...]
    correct_index: int
    kind: str

    def __post_init__(self):
        if len(self.candidates) != N_CHOICES:
            raise ValueError(f"need exactly {N_CHOICES} candidates")
        if not 0 <= self.correct_index < N_CHOICES:
            raise ValueError("correct_index out of range")
        if self.kind not in ("inter", "intra"):
            raise ValueError(f"unknown kind {self.kind!r}")


def build_mcq_items(manifest, n_items: int, intra_fraction: float = 0.5, seed: int = 0) -> list[McqItem]:
    by_video = defaultdict(list)
    for r in manifest:
        by_video[r.video_id].append(r)
    videos = sorted(by_video)
    n_intra = round(n_items * intra_fraction)
    if n_intra:
        for v in videos:
            if len(by_video[v]) < N_CHOICES:
                raise ValueError(f"video {v} has {len(by_video[v])} clips; intra items need {N_CHOICES}")
    if n_items - n_intra and len(videos) < N_CHOICES:
        raise ValueError(f"inter items need {N_CHOICES} videos, manifest has {len(videos)}")

    rng = np.random.default_rng([seed, 31337])
    items = []
    for i in range(n_items):
        correct = int(rng.integers(N_CHOICES))
        if i < n_intra:
            clips = by_video[videos[int(rng.integers(len(videos)))]]
            chosen = [clips[j] for j in rng.choice(len(clips), N_CHOICES, replace=False)]
            query = chosen[0]
            others = chosen[1:]
            kind = "intra"
        else:
            vids = [videos[j] for j in rng.choice(len(videos), N_CHOICES, replace=False)]
            picks = [by_video[v][int(rng.integers(len(by_video[v])))] for v in vids]
            query, others = picks[0], picks[1:]
            kind = "inter"
        cands = others[:correct] + [query] + others[correct:]
        items.append(McqItem(query.text, tuple(c.clip_id for c in cands), correct, kind))
    return items


def save_items(items, path) -> None:
    with open(path, "w") as fh:
        for it in items:
            fh.write(json.dumps(asdict(it)) + "\n")


def load_items(path) -> list[McqItem]:
    with open(path) as fh:
        return [McqItem(d["query_text"], tuple(d["candidates"]), d["correct_index"], d["kind"])
                for d in map(json.loads, filter(str.strip, fh))]


def first_argmax(scores: torch.Tensor) -> torch.Tensor:
    """Row-wise argmax with ties resolved to the lowest index."""
    hit = scores == scores.max(dim=-1, keepdim=True).values
    return hit.to(torch.int64).argmax(dim=-1)


@torch.no_grad()
def embed_clips(model, records, frames: FrameStore | None = None, batch_size: int = 64) -> dict[str, torch.Tensor]:
    frames = frames or FrameStore(next(model.parameters()).dtype)
    out = {}
    for i in range(0, len(records), batch_size):
        chunk = records[i:i + batch_size]
        v = model.encode_video(frames.get(chunk)).v
        out.update({r.clip_id: v[j] for j, r in enumerate(chunk)})
    return out


@torch.no_grad()
def embed_texts(model, tokenizer, texts, batch_size: int = 256) -> dict[str, torch.Tensor]:
    out = {}
    texts = sorted(set(texts))
    for i in range(0, len(texts), batch_size):
        chunk = texts[i:i + batch_size]
        t = model.encode_text(tokenizer.batch(chunk, model.config.max_text_len)).t
        out.update({s: t[j] for j, s in enumerate(chunk)})
    return out


def evaluate_mcq(model, tokenizer, items, manifest, frames: FrameStore | None = None) -> dict:
    """Accuracy per kind using dual-encoder cosine similarity."""
    model.eval()
    by_id = {r.clip_id: r for r in manifest}
    needed = sorted({c for it in items for c in it.candidates})
    clip_emb = embed_clips(model, [by_id[c] for c in needed], frames)
    text_emb = embed_texts(model, tokenizer, [it.query_text for it in items])
    hits = defaultdict(list)
    for it in items:
        cands = torch.stack([clip_emb[c] for c in it.candidates])
        pred = int(first_argmax(cands @ text_emb[it.query_text]))
        hits[it.kind].append(pred == it.correct_index)
    res = {}
    for kind in ("inter", "intra"):
        h = hits.get(kind, [])
        res[kind] = float(np.mean(h)) if h else math.nan
        res[f"n_{kind}"] = len(h)
    return res
