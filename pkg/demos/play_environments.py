"""A first look at the two pixel games, no learning involved.

Rolls a random player and a simple scripted player through each game,
prints the reward anatomy, and writes a few raw frames as PGM files so you
can see exactly what the agents see (32x32 grayscale, one intensity per
object class).

Usage: python demos/play_environments.py [--out-dir frames]
"""
import argparse
import os

import numpy as np

from tsci.envs import make_env
from tsci.images import write_pgm


def roll(env, policy, seed):
    frame, state = env.reset(seed)
    total, steps, done = 0.0, 0, False
    while not done:
        frame, r, done, state = env.step(state, policy(state, env))
        total += r
        steps += 1
    return total, steps


def random_policy(rng):
    return lambda state, env: int(rng.integers(env.n_actions))


def corridor_scripted(state, env):
    # flee any lane with a car two rows above the agent, else hold center
    threats = {lane for lane, row, _s in state.cars if row in (20, 21)}
    for action in (1, 0, 2):
        lane = min(max(state.agent_lane + (action - 1), 0), 7)
        if lane not in threats:
            return action
    return 1


def pellet_scripted(state, env):
    if not state.pellets:
        return 4
    ar, ac = state.agent
    tr, tc = min(state.pellets, key=lambda p: abs(p[0] - ar) + abs(p[1] - ac))
    if abs(tr - ar) >= abs(tc - ac):
        return 0 if tr < ar else 1
    return 2 if tc < ac else 3


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="frames")
    ap.add_argument("--episodes", type=int, default=10)
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    rng = np.random.default_rng(0)

    print("corridor-dodge: +1 per car that passes you, +0.05 per step survived,")
    print("-1 and game over on collision. Cars fall 1 or 2 cells per step; a")
    print("single frame shows where they are but not how fast they move.\n")
    env = make_env("corridor-dodge")
    for name, pol in [("random", random_policy(rng)), ("scripted dodge", corridor_scripted)]:
        scores = [roll(env, pol, s) for s in range(args.episodes)]
        rets, lens = zip(*scores)
        print(f"  {name:>15}: return {np.mean(rets):7.2f} +- {np.std(rets):6.2f}, "
              f"survives {np.mean(lens):5.1f}/256 steps")

    print("\npellet-pursuit: +1 per pellet, -1 and game over when the chaser")
    print("catches you. The chaser re-aims every third step; its heading is")
    print("invisible in any single frame.\n")
    env = make_env("pellet-pursuit")
    for name, pol in [("random", random_policy(rng)), ("greedy pellets", pellet_scripted)]:
        scores = [roll(env, pol, s) for s in range(args.episodes)]
        rets, lens = zip(*scores)
        print(f"  {name:>15}: return {np.mean(rets):7.2f} +- {np.std(rets):6.2f}, "
              f"lasts {np.mean(lens):5.1f}/256 steps")

    print(f"\nwriting sample frames to {args.out_dir}/ ...")
    for env_id in ("corridor-dodge", "pellet-pursuit"):
        env = make_env(env_id)
        frame, state = env.reset(7)
        for t in range(3):
            frame, _, _, state = env.step(state, 1)
        path = os.path.join(args.out_dir, f"{env_id}.pgm")
        write_pgm(path, frame)
        print(f"  {path}: intensities {sorted(set(np.round(frame[frame > 0], 2)))}")


if __name__ == "__main__":
    main()
