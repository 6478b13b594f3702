"""Physically delete history from the agent's eyes and watch returns move.

The stacked observation holds frames 1 (oldest) to 4 (newest). An
intervention scheme blacks out the moving objects in a chosen subset of
those frames before every policy call - the agent itself is untouched. If
the policy truly uses temporal context, deleting older frames should hurt
less than deleting newer ones, and deleting more frames should hurt
monotonically more.

Usage: python demos/intervention_ladder.py --agent agent.ckpt
"""
import argparse

from tsci.checkpoint import load_agent, load_meta
from tsci.evaluation import intervention_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--agent", default="agent.ckpt")
    ap.add_argument("--episodes", type=int, default=20)
    ap.add_argument("--schemes", default="None,1,2,3,4,34,123,234,1234")
    args = ap.parse_args()

    agent = load_agent(args.agent)
    meta = load_meta(args.agent) or {}
    env_id = meta.get("env", "corridor-dodge")
    schemes = tuple(args.schemes.split(","))

    print(f"greedy returns on {env_id}, {args.episodes} episodes per condition")
    print("(scheme = which stacked frames lose their moving objects; 1 = oldest)\n")
    rows = intervention_study(agent, env_id, schemes=schemes,
                              episodes_per_scheme=args.episodes)
    print(f"{'scheme':>8} | {'mean':>8} | {'median':>8} | {'std':>7}")
    print("-" * 40)
    for r in rows:
        print(f"{r['scheme']:>8} | {r['mean_return']:8.2f} | {r['median_return']:8.2f} | "
              f"{r['std_return']:7.2f}")

    by = {r["scheme"]: r["median_return"] for r in rows}
    if {"4", "1"} <= by.keys():
        print(f"\ndeleting only the oldest frame ('1': {by['1']:.2f}) should cost")
        print(f"far less than deleting the newest ('4': {by['4']:.2f}): recent")
        print("pixels carry position, older ones only refine velocity.")


if __name__ == "__main__":
    main()
