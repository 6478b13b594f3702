"""Recurrent conv actor-critic, PPO/A2C updates, and fixed-horizon collection.

The policy is a 3-layer stride-2 conv encoder into a GRU (width 128) with
linear actor/critic heads; a feedforward variant swaps the GRU for an equally
wide linear+ReLU layer. Updates treat each stored step's input hidden as a
constant (single-step gradients, no backprop through time): cheap, stable,
and sufficient for these short-memory tasks.

Collection slices continuous environment streams into fixed-length windows.
The live GRU hidden at each window start is recorded with the window, so a
later consumer can replay the recurrence exactly as the agent experienced it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .envs import StackedState, make_env, stack_push
from .errors import ConfigError, ContractViolation, DimensionError
from .rng import derive_generator, derive_seed

GRU_WIDTH = 128
ENC_CHANNELS = (16, 32, 32)
ENC_FLAT = 32 * 3 * 3

STRUCTURES = ("recurrent", "feedforward")


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 128
    lr: float = 2.5e-4
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    total_steps: int = 2_000_000
    n_envs: int = 8
    horizon: int = 64
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0,1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0,1], got {self.lam}")
        if self.clip_eps <= 0.0:
            raise ConfigError(f"clip epsilon must be > 0, got {self.clip_eps}")


@dataclass
class Episode:
    """One fixed-horizon window of agent experience, all sequences length T."""

    states: np.ndarray   # (T, m, H, W) float32
    dists: np.ndarray    # (T, |A|) float32, policy output at collection time
    actions: np.ndarray  # (T,) int64
    values: np.ndarray   # (T,) float32
    rewards: np.ndarray  # (T,) float32
    hiddens: np.ndarray  # (T, 128) float32, GRU input hidden at each step
    dones: np.ndarray    # (T,) bool, True where the env terminated after the step
    bootstrap_value: float = 0.0  # critic value of the state after the window

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


class PolicyNetwork:
    """Conv encoder + GRU (or linear) core + actor/critic heads."""

    def __init__(self, m: int, n_actions: int, structure: str = "recurrent", seed: int = 0):
        if structure not in STRUCTURES:
            raise ConfigError(f"structure must be one of {STRUCTURES}, got {structure!r}")
        self.m = m
        self.n_actions = n_actions
        self.structure = structure
        self.params = ad.ParamStore()
        rng = derive_generator(seed, "policy-init")
        p = self.params

        def conv_w(co, ci, k):
            return _orthogonal(rng, (co, ci * k * k), gain=np.sqrt(2)).reshape(co, ci, k, k)

        chans = (m,) + ENC_CHANNELS
        for i in range(3):
            p.add(f"enc.conv{i + 1}.w", ad.tensor(conv_w(chans[i + 1], chans[i], 3)))
            p.add(f"enc.conv{i + 1}.b", ad.tensor(np.zeros(chans[i + 1], dtype=np.float32)))
        if structure == "recurrent":
            for gate in ("z", "r", "n"):
                p.add(f"gru.w{gate}", ad.tensor(_orthogonal(rng, (ENC_FLAT, GRU_WIDTH), 1.0)))
                p.add(f"gru.u{gate}", ad.tensor(_orthogonal(rng, (GRU_WIDTH, GRU_WIDTH), 1.0)))
                p.add(f"gru.b{gate}", ad.tensor(np.zeros(GRU_WIDTH, dtype=np.float32)))
        else:
            p.add("fc.w", ad.tensor(_orthogonal(rng, (ENC_FLAT, GRU_WIDTH), np.sqrt(2))))
            p.add("fc.b", ad.tensor(np.zeros(GRU_WIDTH, dtype=np.float32)))
        p.add("actor.w", ad.tensor(_orthogonal(rng, (GRU_WIDTH, n_actions), 0.01)))
        p.add("actor.b", ad.tensor(np.zeros(n_actions, dtype=np.float32)))
        p.add("critic.w", ad.tensor(_orthogonal(rng, (GRU_WIDTH, 1), 1.0)))
        p.add("critic.b", ad.tensor(np.zeros(1, dtype=np.float32)))

    def gru_params(self) -> ad.GruParams:
        p = self.params
        return ad.GruParams(wz=p["gru.wz"], uz=p["gru.uz"], bz=p["gru.bz"],
                            wr=p["gru.wr"], ur=p["gru.ur"], br=p["gru.br"],
                            wn=p["gru.wn"], un=p["gru.un"], bn=p["gru.bn"])

    def zero_hidden(self, n: int | None = None) -> np.ndarray:
        if n is None:
            return np.zeros(GRU_WIDTH, dtype=np.float32)
        return np.zeros((n, GRU_WIDTH), dtype=np.float32)


def _orthogonal(rng: np.random.Generator, shape: tuple, gain: float) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).astype(np.float32)


def encoder_features(net: PolicyNetwork, states: ad.Tensor) -> list[ad.Tensor]:
    """Per-layer encoder activations for a (N, m, H, W) batch, shallowest first."""
    if states.data.ndim != 4 or states.data.shape[1] != net.m:
        raise DimensionError(
            f"expected states (N, {net.m}, H, W), got {states.shape}")
    p = net.params
    feats = []
    x = states
    for i in range(3):
        x = ad.relu(ad.conv2d(x, p[f"enc.conv{i + 1}.w"], p[f"enc.conv{i + 1}.b"], stride=2))
        feats.append(x)
    return feats


def forward_core(net: PolicyNetwork, flat: ad.Tensor, hiddens: ad.Tensor) -> ad.Tensor:
    if net.structure == "recurrent":
        return ad.gru_cell(flat, hiddens, net.gru_params())
    return ad.relu(ad.add(ad.matmul(flat, net.params["fc.w"]), net.params["fc.b"]))


def head_outputs(net: PolicyNetwork, core: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Actor logits and critic values from a (N, 128) core activation."""
    p = net.params
    n = core.data.shape[0]
    logits = ad.add(ad.matmul(core, p["actor.w"]), p["actor.b"])
    values = ad.reshape(ad.add(ad.matmul(core, p["critic.w"]), p["critic.b"]), (n,))
    return logits, values


def forward_batch(net: PolicyNetwork, states: ad.Tensor, hiddens: ad.Tensor) -> dict:
    """Full policy pass on a batch: returns logits, probs, values, new hidden."""
    feats = encoder_features(net, states)
    n = states.data.shape[0]
    flat = ad.reshape(feats[-1], (n, ENC_FLAT))
    core = forward_core(net, flat, hiddens)
    logits, values = head_outputs(net, core)
    return {"logits": logits, "probs": ad.softmax(logits), "values": values,
            "hidden": core, "features": feats}


def policy_forward(net: PolicyNetwork, state: StackedState, hidden: np.ndarray):
    """Single-state inference: (action distribution, value, next hidden)."""
    if state.frames.shape[0] != net.m:
        raise DimensionError(f"state has {state.frames.shape[0]} frames, net expects {net.m}")
    if hidden.shape != (GRU_WIDTH,):
        raise DimensionError(f"hidden must be ({GRU_WIDTH},), got {hidden.shape}")
    out = forward_batch(net, ad.tensor(state.frames[None]), ad.tensor(hidden[None]))
    return out["probs"].data[0], float(out["values"].data[0]), out["hidden"].data[0]


def compute_gae(rewards, values, dones, gamma: float, lam: float,
                bootstrap_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over one window; returns (adv, returns)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not len(rewards) == len(values) == len(dones):
        raise DimensionError("rewards, values, dones must share length")
    t_len = len(rewards)
    adv = np.zeros(t_len, dtype=np.float64)
    acc = 0.0
    for t in range(t_len - 1, -1, -1):
        keep = 0.0 if dones[t] else 1.0
        next_v = bootstrap_value if t == t_len - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_v * keep - values[t]
        acc = delta + gamma * lam * keep * acc
        adv[t] = acc
    return adv.astype(np.float32), (adv + values).astype(np.float32)


def _flatten_batch(episodes: list[Episode], cfg: PpoConfig):
    states, hiddens, actions, old_logp, advs, rets = [], [], [], [], [], []
    for ep in episodes:
        adv, ret = compute_gae(ep.rewards, ep.values, ep.dones, cfg.gamma, cfg.lam,
                               ep.bootstrap_value)
        states.append(ep.states)
        hiddens.append(ep.hiddens)
        actions.append(ep.actions)
        probs = np.maximum(ep.dists[np.arange(ep.horizon), ep.actions], 1e-12)
        old_logp.append(np.log(probs))
        advs.append(adv)
        rets.append(ret)
    return (np.concatenate(states), np.concatenate(hiddens),
            np.concatenate(actions), np.concatenate(old_logp).astype(np.float32),
            np.concatenate(advs), np.concatenate(rets))


def clip_grad_norm(params: ad.ParamStore, max_norm: float) -> float:
    grads = params.grads()
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-8)
        for g in grads.values():
            g *= scale
    return total


def _minibatch_step(net, cfg, adam, states, hiddens, actions, old_logp, advs, rets,
                    clipped: bool) -> dict:
    net.params.zero_grads()
    with ad.Tape() as tape:
        out = forward_batch(net, ad.tensor(states), ad.tensor(hiddens))
        logp_all = ad.log_softmax(out["logits"])
        logp_a = ad.gather_rows(logp_all, actions)
        adv_t = ad.tensor(advs)
        if clipped:
            ratio = ad.exp(ad.sub(logp_a, ad.tensor(old_logp)))
            surr = ad.minimum(ad.mul(ratio, adv_t),
                              ad.mul(ad.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv_t))
            policy_loss = ad.neg(ad.reduce_mean(surr))
        else:
            policy_loss = ad.neg(ad.reduce_mean(ad.mul(logp_a, adv_t)))
        v_err = ad.sub(out["values"], ad.tensor(rets))
        value_loss = ad.reduce_mean(ad.mul(v_err, v_err))
        entropy = ad.neg(ad.reduce_mean(ad.reduce_sum(ad.mul(out["probs"], logp_all), axis=-1)))
        loss = ad.sub(ad.add(policy_loss, ad.mul(value_loss, cfg.vf_coef)),
                      ad.mul(entropy, cfg.ent_coef))
    stats = {"policy_loss": float(policy_loss.data), "value_loss": float(value_loss.data),
             "entropy": float(entropy.data), "loss": float(loss.data)}
    if not np.isfinite(stats["loss"]):
        raise ContractViolation(f"non-finite loss during update: {stats}")
    ad.backward(tape, loss)
    stats["grad_norm"] = clip_grad_norm(net.params, cfg.max_grad_norm)
    ad.adam_step(net.params, net.params.grads(), adam)
    return stats


def ppo_update(net: PolicyNetwork, episodes: list[Episode], cfg: PpoConfig,
               adam: ad.AdamState, rng: np.random.Generator) -> dict:
    """Clipped-surrogate PPO over the episode batch; returns mean loss stats."""
    if not episodes:
        raise ContractViolation("ppo_update needs a non-empty episode batch")
    states, hiddens, actions, old_logp, advs, rets = _flatten_batch(episodes, cfg)
    advs = (advs - advs.mean()) / (advs.std() + 1e-8)
    n = len(states)
    all_stats: list[dict] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = order[lo:lo + cfg.minibatch_size]
            all_stats.append(_minibatch_step(
                net, cfg, adam, states[idx], hiddens[idx], actions[idx],
                old_logp[idx], advs[idx], rets[idx], clipped=True))
    return {k: float(np.mean([s[k] for s in all_stats])) for k in all_stats[0]}


def a2c_update(net: PolicyNetwork, episodes: list[Episode], cfg: PpoConfig,
               adam: ad.AdamState, rng: np.random.Generator) -> dict:
    """Single-epoch advantage actor-critic (no ratio clipping) on the batch."""
    if not episodes:
        raise ContractViolation("a2c_update needs a non-empty episode batch")
    states, hiddens, actions, old_logp, advs, rets = _flatten_batch(episodes, cfg)
    advs = (advs - advs.mean()) / (advs.std() + 1e-8)
    return _minibatch_step(net, cfg, adam, states, hiddens, actions, old_logp,
                           advs, rets, clipped=False)


# ---------------------------------------------------------------------------
# collection


def apply_obs_transform(transform, stacks: list[StackedState]) -> list[StackedState]:
    """Map an observation transform over stacks; None is the identity.

    A transform is a callable StackedState -> StackedState; one that also
    offers transform_batch(list) gets the whole list at once (lets mask
    networks run a single batched forward instead of per-stream passes)."""
    if transform is None:
        return stacks
    if hasattr(transform, "transform_batch"):
        return transform.transform_batch(stacks)
    return [transform(s) for s in stacks]


class StreamCollector:
    """n_envs parallel environment streams sliced into fixed-T windows.

    Streams persist across calls: the GRU hidden carries over (zeroed on env
    reset), so consecutive windows from one stream are one continuous life.
    """

    def __init__(self, net: PolicyNetwork, env_id: str, n_envs: int, horizon: int,
                 seed: int, env_kwargs: dict | None = None, obs_transform=None):
        self.net = net
        self.env = make_env(env_id, **(env_kwargs or {}))
        if net.n_actions != self.env.n_actions:
            raise DimensionError(
                f"net has {net.n_actions} actions but {env_id} has {self.env.n_actions}")
        self.n_envs = n_envs
        self.horizon = horizon
        self.obs_transform = obs_transform
        self.rngs = [derive_generator(seed, f"actions-{i}") for i in range(n_envs)]
        self.seeds = [derive_seed(seed, f"env-{i}") for i in range(n_envs)]
        self.states = []
        self.stacks = []
        for i in range(n_envs):
            frame, st = self.env.reset(self.seeds[i])
            self.states.append(st)
            self.stacks.append(StackedState.from_frame(frame, net.m))
        self.hidden = net.zero_hidden(n_envs)
        self.episode_return = np.zeros(n_envs, dtype=np.float64)
        self.finished_returns: list[float] = []
        self.total_steps = 0

    def _reset_stream(self, i: int) -> None:
        self.seeds[i] = (self.seeds[i] + 1) & 0xFFFFFFFFFFFFFFFF
        frame, st = self.env.reset(self.seeds[i])
        self.states[i] = st
        self.stacks[i] = StackedState.from_frame(frame, self.net.m)
        self.hidden[i] = 0.0

    def _observed(self) -> list[StackedState]:
        """What the policy sees: raw stacks run through the observation
        transform (interventions, explainer masking). Stacks stay raw so
        frame-position semantics survive the FIFO shift."""
        return apply_obs_transform(self.obs_transform, self.stacks)

    def collect_window(self) -> list[Episode]:
        """Advance every stream T steps; returns one Episode per stream."""
        n, t_len, m = self.n_envs, self.horizon, self.net.m
        hw = self.stacks[0].frames.shape[1:]
        states = np.empty((t_len, n, m) + hw, dtype=np.float32)
        dists = np.empty((t_len, n, self.env.n_actions), dtype=np.float32)
        actions = np.empty((t_len, n), dtype=np.int64)
        values = np.empty((t_len, n), dtype=np.float32)
        rewards = np.empty((t_len, n), dtype=np.float32)
        hiddens = np.empty((t_len, n, GRU_WIDTH), dtype=np.float32)
        dones = np.empty((t_len, n), dtype=bool)
        for t in range(t_len):
            batch = np.stack([s.frames for s in self._observed()])
            hiddens[t] = self.hidden
            out = forward_batch(self.net, ad.tensor(batch), ad.tensor(self.hidden))
            probs = out["probs"].data
            self.hidden = out["hidden"].data.copy()
            states[t] = batch
            dists[t] = probs
            values[t] = out["values"].data
            for i in range(n):
                cdf = np.cumsum(probs[i].astype(np.float64))
                a = int(np.searchsorted(cdf, self.rngs[i].random() * cdf[-1]))
                a = min(a, self.env.n_actions - 1)
                actions[t, i] = a
                frame, r, done, st = self.env.step(self.states[i], a)
                rewards[t, i] = r
                dones[t, i] = done
                self.episode_return[i] += r
                if done:
                    self.finished_returns.append(float(self.episode_return[i]))
                    self.episode_return[i] = 0.0
                    self._reset_stream(i)
                else:
                    self.states[i] = st
                    self.stacks[i] = stack_push(self.stacks[i], frame)
        self.total_steps += n * t_len
        batch = np.stack([s.frames for s in self._observed()])
        boot = forward_batch(self.net, ad.tensor(batch), ad.tensor(self.hidden))["values"].data
        return [Episode(states=states[:, i], dists=dists[:, i], actions=actions[:, i],
                        values=values[:, i], rewards=rewards[:, i], hiddens=hiddens[:, i],
                        dones=dones[:, i], bootstrap_value=float(boot[i]))
                for i in range(n)]


def collect_episodes(net: PolicyNetwork, env_id: str, m_episodes: int, horizon: int,
                     seed: int, n_envs: int = 8, env_kwargs: dict | None = None,
                     obs_transform=None) -> list[Episode]:
    """Collect m_episodes fixed-horizon windows, interleaved over streams in
    time order (window index major, stream index minor). Recorded states are
    the transformed observations: exactly what the policy saw."""
    n_envs = min(n_envs, m_episodes)
    collector = StreamCollector(net, env_id, n_envs, horizon, seed, env_kwargs,
                                obs_transform=obs_transform)
    out: list[Episode] = []
    while len(out) < m_episodes:
        out.extend(collector.collect_window())
    return out[:m_episodes]


# ---------------------------------------------------------------------------
# training loop


def train_agent(env_id: str, cfg: PpoConfig, seed: int, structure: str = "recurrent",
                m: int = 4, algo: str = "ppo", env_kwargs: dict | None = None,
                log_every: int = 10, on_update=None,
                obs_transform=None) -> tuple[PolicyNetwork, list[dict]]:
    """Train a policy from scratch; returns (net, training-curve rows)."""
    if algo not in ("ppo", "a2c"):
        raise ConfigError(f"algo must be 'ppo' or 'a2c', got {algo!r}")
    env = make_env(env_id, **(env_kwargs or {}))
    net = PolicyNetwork(m, env.n_actions, structure, seed=derive_seed(seed, "init"))
    collector = StreamCollector(net, env_id, cfg.n_envs, cfg.horizon, seed, env_kwargs,
                                obs_transform=obs_transform)
    adam = ad.AdamState(lr=cfg.lr)
    shuffle_rng = derive_generator(seed, "update-shuffle")
    update_fn = ppo_update if algo == "ppo" else a2c_update
    curve: list[dict] = []
    n_updates = max(1, cfg.total_steps // (cfg.n_envs * cfg.horizon))
    for u in range(1, n_updates + 1):
        episodes = collector.collect_window()
        stats = update_fn(net, episodes, cfg, adam, shuffle_rng)
        if u % log_every == 0 or u == n_updates:
            recent = collector.finished_returns[-20:]
            row = {"update": u, "step": collector.total_steps,
                   "mean_return": float(np.mean(recent)) if recent else float("nan")}
            row.update(stats)
            curve.append(row)
            if on_update is not None:
                on_update(row)
    return net, curve


def greedy_episode(net: PolicyNetwork, env_id: str, seed: int,
                   env_kwargs: dict | None = None, max_steps: int | None = None,
                   obs_transform=None) -> dict:
    """Play one full episode with argmax actions; returns summary arrays."""
    env = make_env(env_id, **(env_kwargs or {}))
    frame, state = env.reset(seed)
    stack = StackedState.from_frame(frame, net.m)
    hidden = net.zero_hidden()
    rewards = []
    actions = []
    cap = max_steps if max_steps is not None else env.step_cap
    for _ in range(cap):
        (obs,) = apply_obs_transform(obs_transform, [stack])
        probs, _value, hidden = policy_forward(net, obs, hidden)
        a = int(np.argmax(probs))
        frame, r, done, state = env.step(state, a)
        rewards.append(r)
        actions.append(a)
        if done:
            break
        stack = stack_push(stack, frame)
    return {"return": float(np.sum(rewards)), "length": len(rewards),
            "rewards": np.asarray(rewards, dtype=np.float32),
            "actions": np.asarray(actions, dtype=np.int64)}
