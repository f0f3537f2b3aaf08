"""Fixed-target scenario: replay hand-written plans, compute the true optimum by BFS, then train.

    python scripts/case1_study.py --seeds 0 1 2 --smoothing 0
"""

import argparse
from collections import deque

import numpy as np

from cehhmm.ce import CEConfig, GenerativeSource, run_ce
from cehhmm.policy import HhmmStructure
from cehhmm.tracking import (DOWN, FORWARD, NO_MOVE, TURN_LEFT, TURN_RIGHT, MobilePose, TrackingConfig,
                             TrackingEnv, joint_action, mobile_move)

PLAN_B = [TURN_LEFT] + [FORWARD] * 7 + [TURN_LEFT] + [FORWARD] * 6   # 15 moves, ends 3 cells from the target
PLAN_C = [TURN_RIGHT] + [FORWARD] * 6 + [TURN_RIGHT] + [FORWARD] * 6  # 14 moves


def replay(plan_b, plan_c, horizon=100):
    env = TrackingEnv(TrackingConfig(case=1, horizon=horizon))
    pad = lambda plan: plan + [NO_MOVE] * (horizon - len(plan))
    actions = np.array([[joint_action(b, c) for b, c in zip(pad(plan_b), pad(plan_c))]])
    s = env.sample_initial(np.zeros((1, 2)))
    rows = [s]
    for t in range(1, horizon):
        s = env.sample_transition(s, actions[:, t - 1], np.zeros((1, 2)))
        rows.append(s)
    return float(env.score(actions, None, np.stack(rows, axis=1))[0])


def fewest_moves(start, target=(10, 10), radius=3):
    seen, queue = {start: 0}, deque([start])
    while queue:
        pose = queue.popleft()
        if max(abs(pose.i - target[0]), abs(pose.j - target[1])) <= radius:
            return seen[pose]
        for move in range(4):
            nxt = mobile_move(pose, move)
            if nxt not in seen:
                seen[nxt] = seen[pose] + 1
                queue.append(nxt)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", nargs="+", type=int, default=[0])
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--patience", type=int, default=100)
    ap.add_argument("--smoothing", type=float, default=0.0)
    ap.add_argument("--rollouts", type=int, default=200)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    kb, kc = fewest_moves(MobilePose(0, 19, DOWN)), fewest_moves(MobilePose(19, 19, DOWN))
    print(f"plan for B scores {replay(PLAN_B, []):g}; plan for C scores {replay([], PLAN_C):g}")
    print(f"BFS: B needs {kb} moves, C needs {kc}; optimum {100 - min(kb, kc)}")
    env = TrackingEnv(TrackingConfig(case=1))
    for seed in args.seeds:
        cfg = CEConfig(samples_per_iteration=args.samples, convergence_patience=args.patience,
                       smoothing=args.smoothing, seed=seed, evaluation_rollouts=args.rollouts, workers=args.threads)
        res = run_ce(GenerativeSource(env), HhmmStructure((16, 16), 16, 16), cfg)
        print(f"seed {seed}: mean {res.best_mean_score:.2f} +/- {res.best_mean_stderr:.2f} "
              f"after {res.iterations_run} iterations (best at {res.best_iteration})", flush=True)


if __name__ == "__main__":
    main()
