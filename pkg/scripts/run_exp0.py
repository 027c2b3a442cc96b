"""Run the full recall-lab scenario suite (A..E) and write one results
CSV. Scenario E sweeps the gap values.

Usage: python scripts/run_exp0.py [OUT_DIR] [--batches N]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from worldlab.recall_lab import run_experiment0, write_exp0_csv  # noqa: E402


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("out", nargs="?", default="exp0_out")
    parser.add_argument("--batches", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for scenario in ("A", "B", "C", "D"):
        row = run_experiment0(scenario, seed=args.seed, n_batches=args.batches)
        print(f"{scenario}: copy={row['copy_acc']:.4f} recall={row['recall_acc']:.4f} "
              f"clean={row['recall_acc_clean']:.4f}")
        rows.append(row)
    for g in (1, 2, 4, 6):
        row = run_experiment0("E", gap=g, seed=args.seed, n_batches=args.batches)
        print(f"E g={g}: recall_clean={row['recall_acc_clean']:.4f}")
        rows.append(row)
    write_exp0_csv(os.path.join(args.out, "exp0_results.csv"), rows)
    print(f"wrote {args.out}/exp0_results.csv")


if __name__ == "__main__":
    main()
