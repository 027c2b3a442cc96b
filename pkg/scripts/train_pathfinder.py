"""Train the progressive pathfinder model: recall previously observed
pixels and classify the instance.

Usage: python scripts/train_pathfinder.py [OUT_DIR]
"""

import argparse
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from worldlab import checkpoint  # noqa: E402
from worldlab.envs import make_env  # noqa: E402
from worldlab.model import ModelConfig, UpdaterExtractor, model_config_dict  # noqa: E402
from worldlab.training import (MetricsCsv, TrainConfig, evaluate_heldout,  # noqa: E402
                               run_training)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("out", nargs="?", default="pathfinder_out")
    parser.add_argument("--cycles", type=int, default=1500)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    def factory(seed):
        return make_env("pathfinder", seed=seed)

    model = UpdaterExtractor(
        ModelConfig(m=16, d=64, n_heads=4, updater_layers=1, extractor_layers=1,
                    ff_width=256),
        factory(0).key_space, seed=args.seed)
    config = TrainConfig(k_worlds=32, t_steps=8, n_cycles=args.cycles,
                         update_freq=1, lr=1e-3, seed=args.seed,
                         env_kind="pathfinder", eval_worlds=32)
    sink = MetricsCsv(os.path.join(args.out, "metrics.csv"))
    run_training(config, model, factory, metrics_sink=sink)
    sink.close()
    checkpoint.save_model(model, os.path.join(args.out, "checkpoint"),
                          model_config_dict(model))
    evals = evaluate_heldout(config, model, factory, cycle=config.n_cycles)
    recall = [r.acc_by_bucket.get("recall") for r in evals[1:]]
    cls = [r.acc_by_bucket.get("class") for r in evals]
    print(f"held-out observed-pixel recall: {np.mean(recall):.4f}, "
          f"class accuracy by step: {[round(c, 3) for c in cls]}")


if __name__ == "__main__":
    main()
