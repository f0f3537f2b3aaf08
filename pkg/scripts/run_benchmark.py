"""Train several tracking presets/seeds through the CLI and tabulate the results.

    python scripts/run_benchmark.py --presets case3-l1 case3-l2 case2 --seeds 0 1 --out runs/bench
"""

import argparse
import csv
import json
import os
import time

from cehhmm.cli import PRESETS, main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--presets", nargs="+", default=["case3-l1", "case3-l2", "case2"], choices=sorted(PRESETS))
    ap.add_argument("--seeds", nargs="+", type=int, default=[0])
    ap.add_argument("--rollouts", type=int, default=500)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="runs/benchmark")
    args = ap.parse_args()

    rows = []
    for preset in args.presets:
        for seed in args.seeds:
            out = os.path.join(args.out, f"{preset}-seed{seed}")
            t0 = time.time()
            code = cli_main(["train", "--preset", preset, "--seed", str(seed), "--rollouts", str(args.rollouts),
                             "--threads", str(args.threads), "--out", out])
            if code:
                raise SystemExit(code)
            with open(os.path.join(out, "summary.json")) as fh:
                summary = json.load(fh)
            ev = summary["evaluation"]
            rows.append({"preset": preset, "seed": seed, "mean": ev["mean"], "stderr": ev["stderr"],
                         "iterations": summary["iterations"], "best_iteration": summary["best_iteration"],
                         "minutes": round((time.time() - t0) / 60, 2)})
            print(rows[-1], flush=True)

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "results.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
