"""Attention pair counts, estimated bytes and forward time for several sparsity settings at 785 tokens."""

import argparse
import sys

from sparsevt.harness.bench import bench_cost, to_csv
from sparsevt.model import ModelConfig
from sparsevt.sparsity import SparsityConfig

SETTINGS = {
    "dense": SparsityConfig.dense(),
    "(1,3,56)": SparsityConfig(k_local=1, k_random=3, block_size=56, prune_layers=(), q_vision=1.0),
    "(1,5,56)": SparsityConfig(k_local=1, k_random=5, block_size=56, prune_layers=(), q_vision=1.0),
    "(1,3,56)+prune": SparsityConfig.full_scale(k_random=3),
}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--layers", type=int, default=12)
    p.add_argument("--no-time", action="store_true")
    args = p.parse_args()
    cfg = ModelConfig(frames_per_clip=4, image_size=224, patch_size=16, video_layers=args.layers)
    rows = bench_cost(cfg, list(SETTINGS.values()), list(SETTINGS), measure=not args.no_time)
    sys.stdout.write(to_csv(rows))


if __name__ == "__main__":
    main()
