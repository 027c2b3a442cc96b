"""Train the Game of Life world model (plain or interventions mode)
and report trajectory stability.

Usage: python scripts/train_life.py [OUT_DIR] [--mode interventions]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from worldlab import checkpoint  # noqa: E402
from worldlab.envs import make_env  # noqa: E402
from worldlab.evaluation import rollout_eval, stability_delta, write_rollout_csv  # noqa: E402
from worldlab.model import ModelConfig, UpdaterExtractor, model_config_dict  # noqa: E402
from worldlab.training import MetricsCsv, TrainConfig, run_training  # noqa: E402


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("out", nargs="?", default="life_out")
    parser.add_argument("--mode", default="plain", choices=["plain", "interventions"])
    parser.add_argument("--cycles", type=int, default=2500)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    def factory(seed):
        return make_env("life", seed=seed, mode=args.mode)

    model = UpdaterExtractor(
        ModelConfig(m=16, d=64, n_heads=4, updater_layers=1, extractor_layers=1,
                    ff_width=256),
        factory(0).key_space, seed=args.seed)
    config = TrainConfig(k_worlds=64, t_steps=8, n_cycles=args.cycles,
                         update_freq=1, lr=1e-3, seed=args.seed,
                         env_kind="life", env_params={"mode": args.mode})
    sink = MetricsCsv(os.path.join(args.out, "metrics.csv"))
    run_training(config, model, factory, metrics_sink=sink)
    sink.close()
    ckpt = os.path.join(args.out, "checkpoint")
    checkpoint.save_model(model, ckpt, model_config_dict(model))

    report = rollout_eval(model, factory(10_001), 64)
    print(f"acc@8={report.acc_at(8):.4f} acc@64={report.acc_at(64):.4f} "
          f"delta={stability_delta(report, 64):+.4f}")
    write_rollout_csv(os.path.join(args.out, "rollout.csv"), report)
    long_report = rollout_eval(model, factory(10_002), 10_000, record_every=250)
    print(f"acc@10000={long_report.acc[-1]:.4f} "
          f"norm@10000={long_report.state_norm[-1]:.2f} "
          f"finite={all(long_report.finite)}")


if __name__ == "__main__":
    main()
