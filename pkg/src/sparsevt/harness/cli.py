"""Command line entry point: gen-data, train, eval-mcq, bench, masks, prune-viz."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import torch

from ..config import format_config, load_config
from ..datagen import generate_dataset, load_manifest, save_manifest, write_ppm, render_clip
from ..sparsity import SparsityConfig, format_mask, mask_for_tokens
from .bench import bench_cost, to_csv
from .mcq import build_mcq_items, evaluate_mcq, save_items
from .train import FrameStore, Trainer

log = logging.getLogger("sparsevt")


def prune_grids(kept: dict, frames: int, grid: int) -> str:
    """Per prune layer and frame, a 0/1 grid of surviving patches."""
    lines = []
    for layer, origin in sorted(kept.items()):
        keep = torch.zeros(frames, grid, grid, dtype=torch.int64)
        o = origin[0]
        o = o[o[:, 0] >= 0]
        keep[o[:, 0], o[:, 1], o[:, 2]] = 1
        lines.append(f"layer {layer} kept={int(keep.sum())}/{frames * grid * grid}")
        for f in range(frames):
            lines.append(f"frame {f}")
            lines += [" ".join(str(int(x)) for x in row) for row in keep[f]]
    return "\n".join(lines) + "\n"


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args, cfg):
    spec = cfg["data"]
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    if args.n_videos:
        spec = dataclasses.replace(spec, n_videos=args.n_videos)
    spec.check_patch(cfg["model"].patch_size)
    records, taxonomy = generate_dataset(spec)
    out = _out_dir(args)
    save_manifest(records, out / "manifest.jsonl")
    taxonomy.save(out / "taxonomy.txt")
    if args.dump_ppm:
        for r in records[: args.dump_ppm]:
            write_ppm(render_clip(r), out / r.clip_id)
    print(f"wrote {len(records)} clips to {out / 'manifest.jsonl'}")


def cmd_train(args, cfg):
    tcfg = cfg["train"]
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.objective:
        overrides["objective"] = args.objective
    if args.directional:
        overrides["symmetric"] = False
    if args.epochs:
        overrides["epochs"] = args.epochs
    tcfg = dataclasses.replace(tcfg, **overrides)
    manifest = load_manifest(Path(args.data) / "manifest.jsonl")
    out = _out_dir(args)
    (out / "config.ini").write_text(format_config({**cfg, "train": tcfg}))
    trainer = Trainer(cfg["model"], cfg["sparsity"], tcfg, manifest)
    metrics = trainer.fit(out, max_steps=args.max_steps, log_every=args.log_every)
    print(json.dumps({"steps": len(metrics), "first_loss": metrics[0]["loss_total"],
                      "final_loss": metrics[-1]["loss_total"], "checkpoint": str(out / "checkpoint.npz")}))


def _model_for(args, cfg):
    from ..checkpoint import load_checkpoint
    from ..model import SparseVideoText, Tokenizer

    if args.checkpoint:
        model, tok, _ = load_checkpoint(args.checkpoint)
        return model, tok
    manifest = load_manifest(Path(args.data) / "manifest.jsonl")
    tok = Tokenizer.from_texts(r.text for r in manifest)
    torch.manual_seed(args.seed or 0)
    mcfg = dataclasses.replace(cfg["model"], vocab_size=len(tok))
    return SparseVideoText(mcfg, cfg["sparsity"]), tok


def cmd_eval_mcq(args, cfg):
    manifest = load_manifest(Path(args.data) / "manifest.jsonl")
    model, tok = _model_for(args, cfg)
    items = build_mcq_items(manifest, args.n_items, args.intra_fraction, args.seed or 0)
    res = evaluate_mcq(model, tok, items, manifest, FrameStore())
    if args.out:
        out = _out_dir(args)
        save_items(items, out / "mcq_items.jsonl")
        (out / "mcq_results.json").write_text(json.dumps(res, indent=2))
    print(json.dumps(res))


def cmd_bench(args, cfg):
    mcfg = cfg["model"]
    if args.full_res:
        mcfg = dataclasses.replace(mcfg, image_size=224, patch_size=16, frames_per_clip=4)
    if args.configs:
        configs = [dict(zip(("k_local", "k_random", "block_size"), map(int, c.split(","))))
                   for c in args.configs]
        sps = [dataclasses.replace(cfg["sparsity"], prune_layers=(), q_vision=1.0, **c) for c in configs]
        names = [f"({c['k_local']},{c['k_random']},{c['block_size']})" for c in configs]
    else:
        sps, names = [cfg["sparsity"]], ["config"]
    rows = bench_cost(mcfg, sps, names, seed=args.seed or 0, measure=not args.no_time)
    text = to_csv(rows)
    if args.out:
        (_out_dir(args) / "bench.csv").write_text(text)
    sys.stdout.write(text)


def cmd_masks(args, cfg):
    sp = cfg["sparsity"]
    if args.seed is not None:
        sp = dataclasses.replace(sp, seed=args.seed)
    layout, mask, _ = mask_for_tokens(args.n_tokens, sp)
    if mask is None:
        raise SystemExit("sequence holds only global tokens")
    text = format_mask(mask, layout)
    if args.out:
        (_out_dir(args) / "mask.txt").write_text(text)
        sys.stdout.write(text.splitlines()[-1] + "\n")
    else:
        sys.stdout.write(text)


@torch.no_grad()
def cmd_prune_viz(args, cfg):
    manifest = load_manifest(Path(args.data) / "manifest.jsonl")
    model, _ = _model_for(args, cfg)
    records = [r for r in manifest if r.clip_id == args.clip] if args.clip else manifest[:1]
    if not records:
        raise SystemExit(f"clip {args.clip!r} not in manifest")
    frames = FrameStore().get(records)
    out = model.eval().encode_video(frames)
    mcfg = model.config
    text = f"clip {records[0].clip_id}: {records[0].text}\n" + prune_grids(
        out.kept, frames.shape[1], mcfg.image_size // mcfg.patch_size)
    if args.out:
        (_out_dir(args) / f"prune_{records[0].clip_id}.txt").write_text(text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="sparsevt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="write a synthetic manifest + taxonomy")
    s.add_argument("--n-videos", type=int)
    s.add_argument("--dump-ppm", type=int, default=0, metavar="N", help="also dump frames of the first N clips")
    s.set_defaults(func=cmd_gen_data, out_required=True)

    s = sub.add_parser("train", parents=[common], help="train on a generated dataset")
    s.add_argument("--data", required=True, help="directory holding manifest.jsonl")
    s.add_argument("--objective", choices=("egonce", "infonce"))
    s.add_argument("--directional", action="store_true", help="video-to-text direction only")
    s.add_argument("--epochs", type=int)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--log-every", type=int, default=0)
    s.set_defaults(func=cmd_train, out_required=True)

    s = sub.add_parser("eval-mcq", parents=[common], help="five-way MCQ accuracy")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint", help="omit to score a randomly initialised model")
    s.add_argument("--n-items", type=int, default=2000)
    s.add_argument("--intra-fraction", type=float, default=0.5)
    s.set_defaults(func=cmd_eval_mcq)

    s = sub.add_parser("bench", parents=[common], help="attention cost table as CSV")
    s.add_argument("--configs", nargs="*", metavar="KL,KR,G")
    s.add_argument("--full-res", action="store_true", help="use 4 x 224x224 frames, patch 16 (785 tokens)")
    s.add_argument("--no-time", action="store_true", help="skip the measured forward pass")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("masks", parents=[common], help="dump a token-level edge mask")
    s.add_argument("--n-tokens", type=int, required=True, help="sequence length including CLS")
    s.set_defaults(func=cmd_masks)

    s = sub.add_parser("prune-viz", parents=[common], help="kept/dropped patch grids per prune layer")
    s.add_argument("--data", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--clip", help="clip id (default: first clip)")
    s.set_defaults(func=cmd_prune_viz)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out_required", False) and not args.out:
        parser.error(f"{args.command} requires --out")
    cfg = load_config(args.config)
    args.func(args, cfg)
    return 0
