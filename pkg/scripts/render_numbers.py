"""Render belief maps for the digit-tuple world as PGM images, then a
sparse-information demo (five pixels per step from a blank start).

Usage: python scripts/render_numbers.py CHECKPOINT_DIR [OUT_DIR]
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from make_digit_pool import build_digit_pool  # noqa: E402

from worldlab import checkpoint  # noqa: E402
from worldlab.envs import make_env  # noqa: E402
from worldlab.envs.numbers import load_mnist  # noqa: E402
from worldlab.evaluation import render_beliefs  # noqa: E402


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("checkpoint")
    parser.add_argument("out", nargs="?", default="renders")
    parser.add_argument("--pool", default=".cache/digit_pool")
    parser.add_argument("--steps", type=int, default=8)
    parser.add_argument("--sparse", type=int, default=5,
                        help="pixels per step in the sparse demo")
    args = parser.parse_args()
    pool = load_mnist(build_digit_pool(args.pool))
    model, _ = checkpoint.load_model(args.checkpoint)

    env = make_env("numbers", seed=1, pool=pool)
    state = model.init_world_state()
    for t in range(1, args.steps + 1):
        packet = env.advance()
        state = model.update_with_keys(state, packet.instruction_keys(),
                                       packet.instruction_flags())
        render_beliefs(model, state, env, args.out, tag=f"full_step{t:02d}")

    # sparse demo: a handful of pixels per step, nothing else
    env = make_env("numbers", seed=2, pool=pool,
                   t1_max_instructions=args.sparse, max_instructions=args.sparse)
    state = model.init_world_state()
    for t in range(1, args.steps + 1):
        packet = env.advance()
        state = model.update_with_keys(state, packet.instruction_keys(),
                                       packet.instruction_flags())
        render_beliefs(model, state, env, args.out, tag=f"sparse_step{t:02d}")
    print(f"renders written under {args.out}")


if __name__ == "__main__":
    main()
