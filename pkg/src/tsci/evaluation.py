"""Reliability metrics and studies for mask explainers.

Paired rollouts play the same seeded episode twice, once with the raw
observations and once with the explainer's masks applied, and the metrics
compare the two behavior streams: temporal causality error (the discounted
deviation at gamma = 1), normalized return, per-step action mismatch (KL),
and per-step squared value mismatch. On top of those sit three studies:
counterfactual frame interventions, mask retraining under an intervention
scheme, and policy retraining on explainer-masked observations.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .agent import (GRU_WIDTH, Episode, PolicyNetwork, PpoConfig,
                    collect_episodes, greedy_episode, policy_forward,
                    train_agent)
from .baselines import (gaussian_perturbation_saliency, gradient_saliency,
                        gradient_saliency_batch)
from .causal import (CausalDiscoveryNetwork, TsciConfig, action_distance_batch,
                     apply_mask, delta_eps_hat, generate_mask, train_tsci)
from .envs import StackedState, apply_intervention, make_env, parse_scheme, stack_push
from .errors import ConfigError, UndefinedRatioError
from .rng import derive_seed

# the counterfactual conditions compared in the intervention study
DEFAULT_SCHEMES = ("None", "1", "2", "3", "4", "34", "123", "234", "1234")


# ---------------------------------------------------------------------------
# explainers: anything callable StackedState -> (m, H, W) mask in [0,1]


class MaskNetworkExplainer:
    """Masks from a trained decoder; batch-aware for collector streams."""

    def __init__(self, net: CausalDiscoveryNetwork):
        self.net = net

    def __call__(self, state: StackedState) -> np.ndarray:
        return generate_mask(self.net, state)

    def mask_batch(self, stacks: list[StackedState]) -> np.ndarray:
        arr = np.stack([s.frames for s in stacks])
        return self.net.masks(ad.tensor(arr)).data


class GradientSaliencyExplainer:
    """Saliency of a frozen reference agent, taken statelessly per state."""

    def __init__(self, agent: PolicyNetwork):
        self.agent = agent

    def __call__(self, state: StackedState) -> np.ndarray:
        return gradient_saliency(self.agent, state)

    def mask_batch(self, states: list[StackedState]) -> np.ndarray:
        return gradient_saliency_batch(self.agent, states)


class PerturbationSaliencyExplainer:
    def __init__(self, agent: PolicyNetwork, sigma: float = 3.0, grid_stride: int = 2):
        self.agent = agent
        self.sigma = sigma
        self.grid_stride = grid_stride

    def __call__(self, state: StackedState) -> np.ndarray:
        return gaussian_perturbation_saliency(self.agent, state, sigma=self.sigma,
                                              grid_stride=self.grid_stride)


class IdentityExplainer:
    def __call__(self, state: StackedState) -> np.ndarray:
        return np.ones_like(state.frames)


class ZeroExplainer:
    def __call__(self, state: StackedState) -> np.ndarray:
        return np.zeros_like(state.frames)


class MaskedObservation:
    """Observation transform: the policy sees apply_mask(s, explainer(s))."""

    def __init__(self, explainer):
        self.explainer = explainer

    def __call__(self, state: StackedState) -> StackedState:
        return apply_mask(state, self.explainer(state))

    def transform_batch(self, stacks: list[StackedState]) -> list[StackedState]:
        if hasattr(self.explainer, "mask_batch"):
            masks = self.explainer.mask_batch(stacks)
            return [apply_mask(s, mk) for s, mk in zip(stacks, masks)]
        return [self(s) for s in stacks]


class InterventionTransform:
    """Observation transform that blacks out foreground on scheme frames."""

    def __init__(self, scheme):
        self.scheme = scheme

    def __call__(self, state: StackedState) -> StackedState:
        return apply_intervention(state, self.scheme)


# ---------------------------------------------------------------------------
# paired rollouts


@dataclass
class Trace:
    """One greedy trajectory: raw observations plus what the policy did."""

    states: np.ndarray   # (T, m, H, W) raw stacked observations
    masks: np.ndarray    # (T, m, H, W) masks applied before the policy (ones if none)
    dists: np.ndarray    # (T, |A|) policy output on the (masked) observation
    values: np.ndarray   # (T,)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    ended: bool          # env terminated at the final recorded step

    @property
    def length(self) -> int:
        return self.states.shape[0]


@dataclass
class PairedRollout:
    env_id: str
    seed: int
    t_eval: int
    full: Trace
    masked: Trace

    @property
    def truncated(self) -> bool:
        """Either branch hit termination before the evaluation horizon."""
        return ((self.full.ended and self.full.length < self.t_eval)
                or (self.masked.ended and self.masked.length < self.t_eval))


def greedy_trace(agent: PolicyNetwork, env_id: str, seed: int, t_eval: int | None = None,
                 explainer=None, env_kwargs: dict | None = None) -> Trace:
    """Greedy rollout recording raw states; the policy acts on masked ones."""
    env = make_env(env_id, **(env_kwargs or {}))
    frame, state = env.reset(seed)
    stack = StackedState.from_frame(frame, agent.m)
    hidden = agent.zero_hidden()
    cap = min(t_eval, env.step_cap) if t_eval is not None else env.step_cap
    states, masks, dists, values, actions, rewards = [], [], [], [], [], []
    ended = False
    for _ in range(cap):
        mask = (explainer(stack) if explainer is not None
                else np.ones_like(stack.frames))
        obs = apply_mask(stack, mask)
        probs, value, hidden = policy_forward(agent, obs, hidden)
        a = int(np.argmax(probs))
        states.append(stack.frames)
        masks.append(mask)
        dists.append(probs)
        values.append(value)
        actions.append(a)
        frame, r, ended, state = env.step(state, a)
        rewards.append(r)
        if ended:
            break
        stack = stack_push(stack, frame)
    return Trace(states=np.stack(states), masks=np.stack(masks).astype(np.float32),
                 dists=np.stack(dists), values=np.asarray(values, dtype=np.float32),
                 actions=np.asarray(actions, dtype=np.int64),
                 rewards=np.asarray(rewards, dtype=np.float32), ended=bool(ended))


def paired_rollout(agent: PolicyNetwork, explainer, env_id: str, seed: int,
                   t_eval: int | None = None, env_kwargs: dict | None = None) -> PairedRollout:
    """Two greedy rollouts from one seeded initial state: raw and masked."""
    full = greedy_trace(agent, env_id, seed, t_eval, None, env_kwargs)
    masked = greedy_trace(agent, env_id, seed, t_eval, explainer, env_kwargs)
    cap = t_eval if t_eval is not None else make_env(env_id, **(env_kwargs or {})).step_cap
    return PairedRollout(env_id=env_id, seed=seed, t_eval=cap, full=full, masked=masked)


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsRecord:
    """Per-rollout reliability readings of one explainer."""

    e_tc: float          # undiscounted behavior deviation on the masked branch
    r_bar: float | None  # masked-to-full return ratio; None when undefined
    e_a: np.ndarray      # per-step KL(masked-branch dist, full-branch dist)
    e_s: np.ndarray      # per-step squared value gap between branches
    truncated: bool


def _masked_branch_episode(trace: Trace) -> Episode:
    dones = np.zeros(trace.length, dtype=bool)
    dones[-1] = trace.ended
    return Episode(states=trace.states, dists=trace.dists, actions=trace.actions,
                   values=trace.values, rewards=trace.rewards,
                   hiddens=np.zeros((trace.length, GRU_WIDTH), dtype=np.float32),
                   dones=dones)


def rollout_tce(rollout: PairedRollout, agent: PolicyNetwork, alpha: float = 0.1,
                distance: str = "wasserstein-discrete") -> float:
    """Undiscounted deviation between the masked policy and the raw policy,
    both replayed over the masked trajectory's states from a zero hidden."""
    cfg = TsciConfig(alpha=alpha, gamma=1.0, distance=distance)
    ep = _masked_branch_episode(rollout.masked)
    return delta_eps_hat(ep, rollout.masked.masks, agent, cfg)


def compute_tce(rollouts: list[PairedRollout], agent: PolicyNetwork, alpha: float = 0.1,
                distance: str = "wasserstein-discrete") -> float:
    """Mean per-rollout TCE over a batch of paired rollouts."""
    if not rollouts:
        raise ConfigError("compute_tce needs at least one rollout")
    return float(np.mean([rollout_tce(ro, agent, alpha, distance) for ro in rollouts]))


def compute_normalized_return(rollout: PairedRollout) -> float:
    """Masked return over full return for one paired rollout."""
    denom = float(rollout.full.rewards.sum())
    if denom == 0.0:
        raise UndefinedRatioError(
            f"full rollout (env={rollout.env_id}, seed={rollout.seed}) has zero return")
    return float(rollout.masked.rewards.sum()) / denom


def normalized_returns(rollouts: list[PairedRollout]) -> list[float]:
    """R-bar per rollout, excluding (with a warning) zero-denominator ones."""
    out = []
    for ro in rollouts:
        try:
            out.append(compute_normalized_return(ro))
        except UndefinedRatioError as err:
            warnings.warn(f"excluding rollout from normalized return: {err}")
    return out


def compute_ame(rollout: PairedRollout) -> np.ndarray:
    """Per-step KL between the masked-branch and full-branch action
    distributions, truncated to the shorter trajectory."""
    t = min(rollout.full.length, rollout.masked.length)
    return action_distance_batch(rollout.masked.dists[:t], rollout.full.dists[:t], "kl")


def compute_sme(rollout: PairedRollout) -> np.ndarray:
    """Per-step squared value gap between the branches, truncated likewise."""
    t = min(rollout.full.length, rollout.masked.length)
    gap = (rollout.masked.values[:t].astype(np.float64)
           - rollout.full.values[:t].astype(np.float64))
    return gap ** 2


def metrics_record(rollout: PairedRollout, agent: PolicyNetwork, alpha: float = 0.1,
                   distance: str = "wasserstein-discrete") -> MetricsRecord:
    try:
        r_bar = compute_normalized_return(rollout)
    except UndefinedRatioError:
        r_bar = None
    return MetricsRecord(e_tc=rollout_tce(rollout, agent, alpha, distance),
                         r_bar=r_bar, e_a=compute_ame(rollout),
                         e_s=compute_sme(rollout), truncated=rollout.truncated)


def evaluate_explainer(agent: PolicyNetwork, explainer, env_id: str, seeds,
                       t_eval: int | None = None, alpha: float = 0.1,
                       distance: str = "wasserstein-discrete",
                       env_kwargs: dict | None = None) -> dict:
    """Paired rollouts on each seed plus aggregate reliability metrics."""
    rollouts = [paired_rollout(agent, explainer, env_id, s, t_eval, env_kwargs)
                for s in seeds]
    records = [metrics_record(ro, agent, alpha, distance) for ro in rollouts]
    r_bars = [r.r_bar for r in records if r.r_bar is not None]
    dropped = len(records) - len(r_bars)
    if dropped:
        warnings.warn(f"{dropped} rollout(s) excluded from normalized return")
    return {
        "env": env_id,
        "seeds": list(seeds),
        "rollouts": rollouts,
        "records": records,
        "e_tc": float(np.mean([r.e_tc for r in records])),
        "r_bar_median": float(np.median(r_bars)) if r_bars else float("nan"),
        "r_bar_mean": float(np.mean(r_bars)) if r_bars else float("nan"),
        "mean_full_return": float(np.mean([ro.full.rewards.sum() for ro in rollouts])),
        "mean_masked_return": float(np.mean([ro.masked.rewards.sum() for ro in rollouts])),
    }


# ---------------------------------------------------------------------------
# counterfactual intervention study


def intervention_study(agent: PolicyNetwork, env_id: str, schemes=DEFAULT_SCHEMES,
                       episodes_per_scheme: int = 20, seeds=(0,),
                       env_kwargs: dict | None = None) -> list[dict]:
    """Mean greedy return per intervention scheme; the agent is untouched,
    only its input is blacked out before every policy call."""
    rows = []
    for label in schemes:
        transform = InterventionTransform(parse_scheme(label, agent.m))
        returns = []
        for seed in seeds:
            for k in range(episodes_per_scheme):
                ep_seed = derive_seed(seed, f"intervene-ep{k}")
                res = greedy_episode(agent, env_id, ep_seed, env_kwargs=env_kwargs,
                                     obs_transform=transform)
                returns.append(res["return"])
        arr = np.asarray(returns, dtype=np.float64)
        rows.append({"scheme": label, "env": env_id, "episodes": int(arr.size),
                     "mean_return": float(arr.mean()), "std_return": float(arr.std()),
                     "median_return": float(np.median(arr)), "returns": arr})
    return rows


def retrain_tsci_under_scheme(agent: PolicyNetwork, env_id: str, scheme_label: str,
                              cfg: TsciConfig, n_episodes: int, horizon: int,
                              seed: int, n_envs: int = 8,
                              env_kwargs: dict | None = None) -> CausalDiscoveryNetwork:
    """Recollect a dataset with the scheme blacked out of every observation,
    then fit a fresh mask decoder; blacked-out pixels leave the sparsity norm
    (they are zero in the stored states, so carry no behavior to explain)."""
    transform = InterventionTransform(parse_scheme(scheme_label, agent.m))
    dataset = collect_episodes(agent, env_id, n_episodes, horizon, seed=seed,
                               n_envs=n_envs, env_kwargs=env_kwargs,
                               obs_transform=transform)
    return train_tsci(agent, dataset, replace(cfg, exclude_scheme=scheme_label), seed=seed)


# ---------------------------------------------------------------------------
# masked-retrain feature-quality study


def masked_retrain_eval(explainer, env_id: str, cfg: PpoConfig, seeds,
                        eval_episodes: int = 7, structure: str = "recurrent",
                        m: int = 4, algo: str = "ppo",
                        env_kwargs: dict | None = None) -> list[dict]:
    """Train fresh policies that only ever see explainer-masked observations;
    one row per seed with the greedy evaluation return."""
    transform = MaskedObservation(explainer) if explainer is not None else None
    rows = []
    for seed in seeds:
        net, curve = train_agent(env_id, cfg, seed=seed, structure=structure, m=m,
                                 algo=algo, env_kwargs=env_kwargs,
                                 obs_transform=transform)
        evals = [greedy_episode(net, env_id, derive_seed(seed, f"retrain-eval{k}"),
                                env_kwargs=env_kwargs, obs_transform=transform)["return"]
                 for k in range(eval_episodes)]
        rows.append({"env": env_id, "seed": seed, "structure": structure, "m": m,
                     "mean_return": float(np.mean(evals)),
                     "returns": np.asarray(evals, dtype=np.float64),
                     "final_train_return": curve[-1]["mean_return"] if curve else float("nan")})
    return rows


# ---------------------------------------------------------------------------
# frame-stacking ablation


def stacking_ablation(env_id: str, cfg: PpoConfig, seeds, m_values=(1, 2, 3, 4),
                      eval_episodes: int = 7, algo: str = "ppo",
                      env_kwargs: dict | None = None) -> list[dict]:
    """Train the feedforward m=4 agent and recurrent agents at each stack
    depth; one row per configuration with per-seed evaluation returns."""
    configs = [("feedforward", max(m_values))] + [("recurrent", mm) for mm in m_values]
    rows = []
    for structure, mm in configs:
        per_seed = []
        for seed in seeds:
            net, _curve = train_agent(env_id, cfg, seed=seed, structure=structure,
                                      m=mm, algo=algo, env_kwargs=env_kwargs)
            evals = [greedy_episode(net, env_id, derive_seed(seed, f"ablate-eval{k}"),
                                    env_kwargs=env_kwargs)["return"]
                     for k in range(eval_episodes)]
            per_seed.append(float(np.mean(evals)))
        arr = np.asarray(per_seed, dtype=np.float64)
        rows.append({"env": env_id, "structure": structure, "m": mm,
                     "seeds": list(seeds), "returns": arr,
                     "mean_return": float(arr.mean()),
                     "median_return": float(np.median(arr))})
    return rows
