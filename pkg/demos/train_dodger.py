"""Train a recurrent pixel policy on corridor-dodge and watch it improve.

PPO on a conv+GRU actor-critic, four stacked frames. The default budget is
small enough for a coffee break; pass --steps 500000 for a policy that
survives most episodes (score within reach of a scripted dodger, ~98).

Usage: python demos/train_dodger.py [--steps 150000] [--out agent.ckpt]
"""
import argparse
import time

import numpy as np

from tsci.agent import PpoConfig, greedy_episode, train_agent
from tsci.checkpoint import save_agent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=150_000)
    ap.add_argument("--env", default="corridor-dodge")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="agent.ckpt")
    args = ap.parse_args()

    cfg = PpoConfig(total_steps=args.steps, n_envs=16, horizon=64)
    print(f"training on {args.env} for {args.steps} steps (seed {args.seed}) ...")
    t0 = time.time()
    last_print = 0.0

    def report(row):
        nonlocal last_print
        if time.time() - last_print > 15:
            last_print = time.time()
            print(f"  step {row['step']:>8}: window mean return {row['mean_return']:7.2f}, "
                  f"entropy {row['entropy']:.3f}")

    net, curve = train_agent(args.env, cfg, seed=args.seed, on_update=report)
    print(f"done in {(time.time() - t0) / 60:.1f} min")

    evals = [greedy_episode(net, args.env, 1000 + k)["return"] for k in range(10)]
    print(f"greedy evaluation over 10 fresh seeds: mean {np.mean(evals):.2f}, "
          f"median {np.median(evals):.2f}, worst {min(evals):.2f}")
    save_agent(net, args.out, meta={"env": args.env, "steps": args.steps,
                                    "seed": args.seed})
    print(f"saved to {args.out}")


if __name__ == "__main__":
    main()
