"""Command-line pipeline driver.

Every stage reads one strict JSON run config plus file-path flags, writes its
artifacts (checkpoints, CSVs, images) tagged with the config's run id, and
never prompts. Exit codes: 0 success, 1 runtime failure, 2 usage error.
TSCI_THREADS caps the rollout worker pool (default 1: fully sequential).
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .agent import collect_episodes, train_agent
from .baselines import train_baseline_explainer
from .causal import train_tsci
from .checkpoint import (_atomic_write, load_agent, load_episodes, load_meta,
                         save_agent, save_episodes, save_explainer,
                         load_explainer)
from .config import load_config, run_id
from .envs import StackedState, parse_scheme
from .errors import TsciError
from .evaluation import (DEFAULT_SCHEMES, GradientSaliencyExplainer,
                         IdentityExplainer, InterventionTransform,
                         MaskNetworkExplainer, PerturbationSaliencyExplainer,
                         greedy_trace, intervention_study, masked_retrain_eval,
                         metrics_record, paired_rollout, stacking_ablation)
from .images import render_overlay
from .rng import derive_seed


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("TSCI_THREADS", "1")))
    except ValueError:
        return 1


def _pool_map(fn, items: list) -> list:
    """Map in input order; parallel only when TSCI_THREADS allows it, so the
    merged results are identical either way."""
    workers = min(_max_workers(), max(1, len(items)))
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _eval_seeds(cfg) -> list[int]:
    return [derive_seed(cfg.seed, f"eval-ep{k}") for k in range(cfg.eval.episodes)]


def _parse_seed_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x != ""]


def _load_explainer_arg(args, cfg, agent):
    """Explainer from --explainer checkpoint or a built-in --saliency kind."""
    if getattr(args, "explainer", None):
        label = "tsci"
        meta = load_meta(args.explainer)
        if meta and "kind" in meta:
            label = str(meta["kind"])
        return MaskNetworkExplainer(load_explainer(args.explainer, agent)), label
    kind = getattr(args, "saliency", None) or "gradient"
    if kind == "gradient":
        return GradientSaliencyExplainer(agent), "gradient"
    if kind == "gaussian":
        return PerturbationSaliencyExplainer(agent), "gaussian"
    if kind == "identity":
        return IdentityExplainer(), "identity"
    raise TsciError(f"unknown saliency kind {kind!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_train_agent(args) -> int:
    cfg = load_config(args.config)
    rid = run_id(cfg)
    net, curve = train_agent(cfg.env, cfg.agent, seed=cfg.seed, structure=cfg.structure,
                             m=cfg.m, algo=cfg.algo)
    save_agent(net, args.out, meta={"run_id": rid, "env": cfg.env, "algo": cfg.algo,
                                    "structure": cfg.structure, "m": cfg.m,
                                    "seed": cfg.seed})
    if args.curve:
        header = ["run_id", "update", "step", "mean_return", "loss", "policy_loss",
                  "value_loss", "entropy", "grad_norm"]
        write_csv(args.curve, header,
                  [[rid] + [row[k] for k in header[1:]] for row in curve])
    final = curve[-1]["mean_return"] if curve else float("nan")
    print(f"trained {cfg.env} agent ({rid}): final mean return {final:.3f} -> {args.out}")
    return 0


def cmd_collect(args) -> int:
    cfg = load_config(args.config)
    agent = load_agent(args.agent)
    transform = None
    if args.scheme != "None":
        transform = InterventionTransform(parse_scheme(args.scheme, agent.m))
    episodes = collect_episodes(agent, cfg.env, args.episodes, args.horizon,
                                seed=cfg.seed, n_envs=cfg.agent.n_envs,
                                obs_transform=transform)
    save_episodes(episodes, args.out,
                  meta={"run_id": run_id(cfg), "env": cfg.env, "scheme": args.scheme,
                        "episodes": args.episodes, "horizon": args.horizon,
                        "seed": cfg.seed})
    print(f"collected {len(episodes)} x {args.horizon} steps (scheme {args.scheme}) "
          f"-> {args.out}")
    return 0


def _train_explainer(args, kind: str) -> int:
    cfg = load_config(args.config)
    rid = run_id(cfg)
    agent = load_agent(args.agent)
    dataset = load_episodes(args.data)
    if kind == "tsci":
        net = train_tsci(agent, dataset, cfg.tsci, seed=cfg.seed)
    else:
        net = train_baseline_explainer(kind, agent, dataset, cfg.tsci, seed=cfg.seed)
    save_explainer(net, args.out, meta={"run_id": rid, "kind": kind, "env": cfg.env,
                                        "exclude_scheme": cfg.tsci.exclude_scheme,
                                        "seed": cfg.seed})
    if args.curve:
        write_csv(args.curve, ["run_id", "epoch", "loss"],
                  [[rid, row["epoch"], row["loss"]] for row in net.train_curve])
    last = net.train_curve[-1]["loss"] if net.train_curve else float("nan")
    print(f"trained {kind} explainer ({rid}): final loss {last:.5f} -> {args.out}")
    return 0


def cmd_train_tsci(args) -> int:
    return _train_explainer(args, "tsci")


def cmd_train_baseline(args) -> int:
    return _train_explainer(args, args.kind)


def cmd_eval_metrics(args) -> int:
    cfg = load_config(args.config)
    rid = run_id(cfg)
    agent = load_agent(args.agent)
    explainer, label = _load_explainer_arg(args, cfg, agent)
    seeds = _eval_seeds(cfg)
    rollouts = _pool_map(
        lambda s: paired_rollout(agent, explainer, cfg.env, s, cfg.eval.t_eval), seeds)
    records = [metrics_record(ro, agent, alpha=cfg.tsci.alpha,
                              distance=cfg.tsci.distance) for ro in rollouts]
    os.makedirs(args.out_dir, exist_ok=True)
    metric_rows = []
    for seed, rec in zip(seeds, records):
        for t in range(len(rec.e_a)):
            metric_rows.append([rid, cfg.env, label, "None", seed, t,
                                float(rec.e_a[t]), float(rec.e_s[t])])
    write_csv(os.path.join(args.out_dir, "metrics.csv"),
              ["run_id", "env", "explainer", "scheme", "seed", "t", "e_a", "e_s"],
              metric_rows)
    r_bars = [rec.r_bar for rec in records if rec.r_bar is not None]
    e_tc = float(np.mean([rec.e_tc for rec in records]))
    r_bar = float(np.median(r_bars)) if r_bars else float("nan")
    mean_ret = float(np.mean([ro.masked.rewards.sum() for ro in rollouts]))
    write_csv(os.path.join(args.out_dir, "summary.csv"),
              ["run_id", "e_tc", "R_bar", "mean_return"],
              [[rid, e_tc, r_bar, mean_ret]])
    print(f"{label} on {cfg.env} ({rid}): e_tc={e_tc:.4f} R_bar={r_bar:.3f} "
          f"masked return {mean_ret:.3f} -> {args.out_dir}")
    return 0


def cmd_eval_intervene(args) -> int:
    cfg = load_config(args.config)
    rid = run_id(cfg)
    agent = load_agent(args.agent)
    schemes = tuple(args.schemes.split(",")) if args.schemes else DEFAULT_SCHEMES
    rows = intervention_study(agent, cfg.env, schemes=schemes,
                              episodes_per_scheme=args.episodes, seeds=(cfg.seed,))
    write_csv(args.out,
              ["run_id", "env", "scheme", "episodes", "mean_return", "std_return",
               "median_return"],
              [[rid, r["env"], r["scheme"], r["episodes"], r["mean_return"],
                r["std_return"], r["median_return"]] for r in rows])
    print(f"intervention study on {cfg.env} ({rid}): {len(rows)} schemes -> {args.out}")
    return 0


def cmd_eval_retrain(args) -> int:
    cfg = load_config(args.config)
    rid = run_id(cfg)
    agent = load_agent(args.agent)
    explainer, label = _load_explainer_arg(args, cfg, agent)
    seeds = _parse_seed_list(args.seeds) if args.seeds else [cfg.seed]
    rows = masked_retrain_eval(explainer, cfg.env, cfg.agent, seeds,
                               eval_episodes=cfg.eval.episodes,
                               structure=cfg.structure, m=cfg.m, algo=cfg.algo)
    write_csv(args.out,
              ["run_id", "env", "explainer", "seed", "mean_return",
               "final_train_return"],
              [[rid, r["env"], label, r["seed"], r["mean_return"],
                r["final_train_return"]] for r in rows])
    med = float(np.median([r["mean_return"] for r in rows]))
    print(f"{label}-masked retraining on {cfg.env} ({rid}): median return {med:.3f} "
          f"-> {args.out}")
    return 0


def cmd_eval_stacking(args) -> int:
    cfg = load_config(args.config)
    rid = run_id(cfg)
    seeds = _parse_seed_list(args.seeds) if args.seeds else [cfg.seed]
    m_values = tuple(int(x) for x in args.m_values.split(","))
    rows = stacking_ablation(cfg.env, cfg.agent, seeds, m_values=m_values,
                             eval_episodes=cfg.eval.episodes, algo=cfg.algo)
    write_csv(args.out,
              ["run_id", "env", "structure", "m", "seeds", "mean_return",
               "median_return"],
              [[rid, r["env"], r["structure"], r["m"],
                ";".join(str(s) for s in r["seeds"]), r["mean_return"],
                r["median_return"]] for r in rows])
    print(f"stacking ablation on {cfg.env} ({rid}): {len(rows)} configurations "
          f"-> {args.out}")
    return 0


def cmd_render(args) -> int:
    cfg = load_config(args.config)
    agent = load_agent(args.agent)
    explainer, label = _load_explainer_arg(args, cfg, agent)
    trace = greedy_trace(agent, cfg.env, args.seed if args.seed is not None else cfg.seed,
                         t_eval=args.state_idx + 1)
    if trace.length <= args.state_idx:
        raise TsciError(f"episode ended after {trace.length} steps, "
                        f"no state {args.state_idx}")
    frames = trace.states[args.state_idx]
    saliency = explainer(StackedState(frames))
    paths = render_overlay(frames, saliency, args.out_prefix)
    print(f"rendered {label} overlay for state {args.state_idx}: "
          + ", ".join(paths))
    return 0


def cmd_version(_args) -> int:
    print(__version__)
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsci", description="train, explain, and evaluate recurrent pixel policies")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=fn)
        return p

    p = add("train-agent", cmd_train_agent, help="train a policy from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curve", default=None, help="optional training-curve CSV")

    p = add("collect", cmd_collect, help="roll out a trained agent into a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--scheme", default="None", help="intervention scheme to bake in")
    p.add_argument("--out", required=True)

    for name, fn in (("train-tsci", cmd_train_tsci), ("train-baseline", cmd_train_baseline)):
        p = add(name, fn, help=f"fit a mask decoder ({name.split('-')[1]} objective)")
        p.add_argument("--config", required=True)
        p.add_argument("--agent", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--curve", default=None)
        if name == "train-baseline":
            p.add_argument("--kind", choices=["cxplain", "il"], required=True)

    p = add("eval-metrics", cmd_eval_metrics, help="paired-rollout reliability metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--explainer", default=None, help="mask-decoder checkpoint")
    p.add_argument("--saliency", default=None,
                   choices=["gradient", "gaussian", "identity"],
                   help="built-in explainer when no checkpoint is given")
    p.add_argument("--out-dir", required=True)

    p = add("eval-intervene", cmd_eval_intervene, help="counterfactual frame study")
    p.add_argument("--config", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--schemes", default=None, help="comma-separated scheme labels")
    p.add_argument("--episodes", type=int, default=20, help="episodes per scheme")
    p.add_argument("--out", required=True)

    p = add("eval-retrain", cmd_eval_retrain, help="retrain on masked observations")
    p.add_argument("--config", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--explainer", default=None)
    p.add_argument("--saliency", default=None,
                   choices=["gradient", "gaussian", "identity"])
    p.add_argument("--seeds", default=None, help="comma-separated training seeds")
    p.add_argument("--out", required=True)

    p = add("eval-stacking", cmd_eval_stacking, help="frame-stacking ablation")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default=None)
    p.add_argument("--m-values", default="1,2,3,4")
    p.add_argument("--out", required=True)

    p = add("render", cmd_render, help="write mask/saliency images for one state")
    p.add_argument("--config", required=True)
    p.add_argument("--agent", required=True)
    p.add_argument("--explainer", default=None)
    p.add_argument("--saliency", default=None,
                   choices=["gradient", "gaussian", "identity"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--state-idx", type=int, default=0)
    p.add_argument("--out-prefix", required=True)

    add("version", cmd_version, help="print the package version")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except TsciError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
