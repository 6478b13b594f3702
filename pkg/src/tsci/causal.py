"""Temporal-causal mask discovery for a frozen recurrent policy.

A mask network scores every pixel of every stacked frame for whether the
policy's behavior depends on it. It reuses the frozen agent encoder and
trains only a skip-connected transposed-conv decoder, by minimizing the
discounted behavior deviation of the agent run on masked inputs minus a
sparsity bounty on masked-out area:

    loss = sum_t gamma^t [ L(pi(s_t * g_t), pi(s_t)) + alpha * |v(s_t * g_t) - v(s_t)| ]
           - beta * sum_t |1 - g_t|_1

The masked branch replays the episode's inputs through the agent with its
own hidden chain, started from the episode's recorded initial hidden: a
counterfactual agent that always saw masked frames. (A variant that feeds
the unmasked branch's recorded hiddens instead sits behind `masked_hidden`.)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .agent import (ENC_FLAT, GRU_WIDTH, Episode, PolicyNetwork, _orthogonal,
                    encoder_features, forward_core, head_outputs)
from .envs import StackedState, parse_scheme
from .errors import ConfigError, ContractViolation, DimensionError
from .rng import derive_generator, derive_seed

DISTANCE_KINDS = ("wasserstein-discrete", "euclidean", "kl", "wasserstein-ordinal")
HIDDEN_MODES = ("counterfactual", "shared")


@dataclass
class TsciConfig:
    alpha: float = 0.1          # value-consistency weight; 0 disables the term
    beta: float = 5e-5          # sparsity bounty per masked-out unit of mask mass;
                                # sized so the deviation and sparsity terms start the
                                # same order of magnitude (raw L1 over ~32k pixels per
                                # 64-step episode vs a ~1.4 initial deviation)
    gamma: float = 0.99         # discount over the deviation horizon
    epochs: int = 10
    minibatch_episodes: int = 8
    distance: str = "wasserstein-discrete"
    lr: float = 1e-3
    masked_hidden: str = "counterfactual"
    exclude_scheme: str = "None"  # blacked-out regions to drop from the sparsity norm

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be nonnegative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0,1], got {self.gamma}")
        if self.distance not in DISTANCE_KINDS:
            raise ConfigError(f"distance must be one of {DISTANCE_KINDS}, got {self.distance!r}")
        if self.masked_hidden not in HIDDEN_MODES:
            raise ConfigError(f"masked_hidden must be one of {HIDDEN_MODES}")


# ---------------------------------------------------------------------------
# action distances


def _distance_np(p: np.ndarray, q: np.ndarray, kind: str) -> np.ndarray:
    """Distance along the last axis; broadcasts over leading axes."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1]:
        raise DimensionError(f"distributions have supports {p.shape[-1]} vs {q.shape[-1]}")
    if kind == "wasserstein-discrete":
        # W1 under the 0/1 ground metric equals total variation
        return 0.5 * np.abs(p - q).sum(axis=-1)
    if kind == "euclidean":
        return np.sqrt(((p - q) ** 2).sum(axis=-1))
    if kind == "kl":
        pf = np.maximum(p, 1e-12)
        qf = np.maximum(q, 1e-12)
        return (p * (np.log(pf) - np.log(qf))).sum(axis=-1)
    if kind == "wasserstein-ordinal":
        # actions read as ordered bins: W1 = sum of |CDF differences|; the
        # final CDF entry is sum(p)-sum(q) = 0 on the simplex and only injects
        # round-off subgradient noise, so it is dropped
        return np.abs(np.cumsum(p - q, axis=-1)[..., :-1]).sum(axis=-1)
    raise ConfigError(f"unknown distance kind {kind!r}")


def action_distance(p, q, kind: str) -> float:
    """Distance between two action distributions (scalar convenience form)."""
    return float(_distance_np(p, q, kind))


def action_distance_batch(p: np.ndarray, q: np.ndarray, kind: str) -> np.ndarray:
    return _distance_np(p, q, kind)


def _distance_t(p: ad.Tensor, q_const: np.ndarray, kind: str) -> ad.Tensor:
    """Taped distance of each row of p to the constant rows q; (N,) output."""
    q = ad.tensor(q_const, dtype=p.dtype)
    diff = ad.sub(p, q)
    if kind == "wasserstein-discrete":
        return ad.mul(ad.reduce_sum(ad.absolute(diff), axis=-1), 0.5)
    if kind == "euclidean":
        return ad.sqrt(ad.reduce_sum(ad.mul(diff, diff), axis=-1))
    if kind == "kl":
        logp = ad.log(p)
        logq = np.log(np.maximum(q_const, 1e-12))
        return ad.reduce_sum(ad.mul(p, ad.sub(logp, ad.tensor(logq, dtype=p.dtype))), axis=-1)
    if kind == "wasserstein-ordinal":
        n_act = p.shape[-1]
        # cumsum as a matmul against an upper-triangular matrix, minus the
        # final column (zero on the simplex, see _distance_np)
        tri = np.tril(np.ones((n_act, n_act), dtype=p.data.dtype)).T[:, :-1]
        cdf = ad.matmul(diff, ad.tensor(tri, dtype=p.dtype))
        return ad.reduce_sum(ad.absolute(cdf), axis=-1)
    raise ConfigError(f"unknown distance kind {kind!r}")


def proposition1_slack(a_star, a_c, a_d, v_star, v_c, v_d, kind: str,
                       alpha: float) -> np.ndarray:
    """Slack of the deviation bound: how far the combined distance of the
    causal-vs-full branches exceeds the difference of their deviations from
    an arbitrary reference behavior. Nonnegative (up to roundoff) whenever
    the action distance is a metric."""
    d = _distance_np
    lhs = (d(a_star, a_c, kind) + alpha * np.abs(v_star - v_c)
           - d(a_star, a_d, kind) - alpha * np.abs(v_star - v_d))
    rhs = d(a_c, a_d, kind) + alpha * np.abs(v_c - v_d)
    return rhs - lhs


# ---------------------------------------------------------------------------
# mask network


class CausalDiscoveryNetwork:
    """Frozen agent encoder + trainable skip-connected transposed-conv decoder.

    The encoder is the agent's own parameter tensors, shared by reference:
    there is nothing to copy and nothing that can drift out of sync.
    """

    def __init__(self, agent: PolicyNetwork, seed: int = 0):
        self.agent = agent
        self.m = agent.m
        self.params = ad.ParamStore()
        rng = derive_generator(seed, "decoder-init")
        p = self.params

        def convt_w(ci, co, k):
            return _orthogonal(rng, (ci, co * k * k), gain=np.sqrt(2)).reshape(ci, co, k, k)

        p.add("dec.convt1.w", ad.tensor(convt_w(32, 32, 3)))
        p.add("dec.convt1.b", ad.tensor(np.zeros(32, dtype=np.float32)))
        p.add("dec.convt2.w", ad.tensor(convt_w(64, 16, 3)))
        p.add("dec.convt2.b", ad.tensor(np.zeros(16, dtype=np.float32)))
        p.add("dec.convt3.w", ad.tensor(convt_w(32, 16, 4)))
        p.add("dec.convt3.b", ad.tensor(np.zeros(16, dtype=np.float32)))
        p.add("dec.final.w", ad.tensor(
            _orthogonal(rng, (self.m, 16), gain=1.0).reshape(self.m, 16, 1, 1)))
        # positive final bias: initial masks sit near sigmoid(2) ~ 0.88,
        # starting from mostly-pass-through rather than all-masked
        p.add("dec.final.b", ad.tensor(np.full(self.m, 2.0, dtype=np.float32)))
        self.train_curve: list[dict] = []

    def masks_from_features(self, feats: list[ad.Tensor]) -> ad.Tensor:
        p = self.params
        f1, f2, f3 = feats
        x = ad.relu(ad.conv2d_transpose(f3, p["dec.convt1.w"], p["dec.convt1.b"], stride=2))
        x = ad.concat([x, f2], axis=1)
        x = ad.relu(ad.conv2d_transpose(x, p["dec.convt2.w"], p["dec.convt2.b"], stride=2))
        x = ad.concat([x, f1], axis=1)
        x = ad.relu(ad.conv2d_transpose(x, p["dec.convt3.w"], p["dec.convt3.b"], stride=2))
        return ad.sigmoid(ad.conv2d(x, p["dec.final.w"], p["dec.final.b"]))

    def masks(self, states: ad.Tensor) -> ad.Tensor:
        """Masks for a (N, m, H, W) batch of states."""
        return self.masks_from_features(encoder_features(self.agent, states))


def generate_mask(net: CausalDiscoveryNetwork, state: StackedState) -> np.ndarray:
    """Mask (m, H, W) in [0,1] for one stacked state."""
    if state.frames.shape[0] != net.m:
        raise DimensionError(f"state has {state.frames.shape[0]} frames, net expects {net.m}")
    return net.masks(ad.tensor(state.frames[None])).data[0]


def apply_mask(state: StackedState, mask: np.ndarray) -> StackedState:
    """f_exp: elementwise product of the stacked frames with the mask."""
    if mask.shape != state.frames.shape:
        raise DimensionError(f"mask shape {mask.shape} vs state {state.frames.shape}")
    return StackedState(state.frames * mask.astype(state.frames.dtype))


# ---------------------------------------------------------------------------
# the temporal causal objective


def discounted_deviation(ea: np.ndarray, es: np.ndarray, gamma: float, alpha: float) -> float:
    """sum_t gamma^t (ea_t + alpha * es_t)."""
    ea = np.asarray(ea, dtype=np.float64)
    es = np.asarray(es, dtype=np.float64)
    if ea.shape != es.shape:
        raise ContractViolation("per-step distance and value-gap lengths differ")
    w = gamma ** np.arange(len(ea))
    return float((w * (ea + alpha * es)).sum())


def masked_branch_outputs(episode: Episode, masks: np.ndarray, agent: PolicyNetwork,
                          masked_hidden: str = "counterfactual"):
    """Run the agent over the episode's masked states; returns (dists, values).

    The hidden chain starts from the episode's recorded initial hidden and is
    zeroed after in-window terminations, mirroring collection. With
    masked_hidden="shared" the recorded unmasked hiddens are fed at every
    step instead of chaining.
    """
    if masks.shape != episode.states.shape:
        raise ContractViolation(
            f"masks shape {masks.shape} does not match states {episode.states.shape}")
    t_len = episode.horizon
    masked = (episode.states * masks).astype(episode.states.dtype)
    feats = encoder_features(agent, ad.tensor(masked))
    flat = ad.reshape(feats[-1], (t_len, ENC_FLAT)).data
    dists = np.empty((t_len, agent.n_actions), dtype=flat.dtype)
    values = np.empty(t_len, dtype=flat.dtype)
    h = episode.hiddens[0].astype(flat.dtype)
    for t in range(t_len):
        if masked_hidden == "shared":
            h = episode.hiddens[t].astype(flat.dtype)
        core = forward_core(agent, ad.tensor(flat[t][None]), ad.tensor(h[None]))
        logits, vals = head_outputs(agent, core)
        dists[t] = ad.softmax(logits).data[0]
        values[t] = vals.data[0]
        h = core.data[0] if not episode.dones[t] else np.zeros(GRU_WIDTH, dtype=flat.dtype)
    return dists, values


def delta_eps_hat(episode: Episode, masks: np.ndarray, agent: PolicyNetwork,
                  cfg: TsciConfig) -> float:
    """Discounted behavior deviation of the masked branch from the unmasked one.

    Both branches are recomputed through the same forward path, so identity
    masks give exactly zero (the recorded distributions differ from a replay
    only by batch-shape float wiggle, which would break the fixed point)."""
    r_dists, r_values = masked_branch_outputs(
        episode, np.ones_like(episode.states), agent, cfg.masked_hidden)
    m_dists, m_values = masked_branch_outputs(episode, masks, agent, cfg.masked_hidden)
    ea = action_distance_batch(m_dists, r_dists, cfg.distance)
    es = np.abs(m_values.astype(np.float64) - r_values.astype(np.float64))
    return discounted_deviation(ea, es, cfg.gamma, cfg.alpha)


def sparsity_weights(states: np.ndarray, exclude_scheme: str) -> np.ndarray | None:
    """Per-pixel weights for the sparsity norm: 1 everywhere except pixels
    blacked out by the given intervention scheme (those read 0 in the stored
    states on the scheme's frames and carry no behavior)."""
    if exclude_scheme == "None":
        return None
    scheme = parse_scheme(exclude_scheme, m=states.shape[-3])
    w = np.ones_like(states, dtype=np.float32)
    for idx in scheme.frames:
        w[..., idx - 1, :, :] = (states[..., idx - 1, :, :] != 0.0).astype(np.float32)
    return w


def _reference_chain(agent: PolicyNetwork, flat: np.ndarray, h0: np.ndarray,
                     hiddens: np.ndarray, dones: np.ndarray, masked_hidden: str):
    """Unmasked-branch distributions/values from precomputed encoder output.

    flat is (N, T, F) numpy; pure forward math, nothing taped."""
    n, t_len = flat.shape[:2]
    dists = np.empty((t_len, n, agent.n_actions), dtype=flat.dtype)
    values = np.empty((t_len, n), dtype=flat.dtype)
    h = h0.astype(flat.dtype)
    for t in range(t_len):
        if masked_hidden == "shared":
            h = hiddens[:, t].astype(flat.dtype)
        core = forward_core(agent, ad.tensor(flat[:, t]), ad.tensor(h))
        logits, vals = head_outputs(agent, core)
        dists[t] = ad.softmax(logits).data
        values[t] = vals.data
        if agent.structure == "recurrent":
            h = core.data * (1.0 - dones[:, t].astype(flat.dtype))[:, None]
    return dists, values


def batch_tsci_loss(episodes: list[Episode], net: CausalDiscoveryNetwork,
                    agent: PolicyNetwork, cfg: TsciConfig) -> ad.Tensor:
    """Taped mean loss over a minibatch of episodes (the training objective).

    The unmasked reference branch is recomputed from the shared encoder pass
    rather than read from the episode record, so identity masks give exactly
    zero deviation (see delta_eps_hat)."""
    if not episodes:
        raise ContractViolation("empty episode minibatch")
    n = len(episodes)
    t_len = episodes[0].horizon
    for ep in episodes:
        if ep.horizon != t_len:
            raise ContractViolation("episodes in a minibatch must share horizon")
    states = np.stack([ep.states for ep in episodes])          # (N,T,m,H,W)
    dones = np.stack([ep.dones for ep in episodes])            # (N,T)
    h0 = np.stack([ep.hiddens[0] for ep in episodes])          # (N,128)
    hiddens = np.stack([ep.hiddens for ep in episodes])        # (N,T,128)
    shape = states.shape[2:]
    flat_np = states.reshape((n * t_len,) + shape)
    flat = ad.tensor(flat_np)

    feats = encoder_features(agent, flat)  # constants: frozen encoder, raw states
    rflat = feats[-1].data.reshape(n, t_len, ENC_FLAT)
    ref_dists, ref_values = _reference_chain(agent, rflat, h0, hiddens, dones,
                                             cfg.masked_hidden)
    mask = net.masks_from_features(feats)
    masked = ad.mul(flat, mask)

    mfeats = encoder_features(agent, masked)
    mflat = ad.reshape(mfeats[-1], (n, t_len, ENC_FLAT))

    dtype = mask.dtype
    dev_total = None
    h = ad.tensor(h0, dtype=dtype)
    for t in range(t_len):
        if cfg.masked_hidden == "shared":
            h = ad.tensor(hiddens[:, t], dtype=dtype)
        x_t = ad.take(mflat, t, axis=1)
        core = forward_core(agent, x_t, h)
        logits, vals = head_outputs(agent, core)
        ea = _distance_t(ad.softmax(logits), ref_dists[t], cfg.distance)
        es = ad.absolute(ad.sub(vals, ad.tensor(ref_values[t], dtype=dtype)))
        term = ad.mul(ad.add(ea, ad.mul(es, cfg.alpha)), cfg.gamma ** t)
        dev_total = term if dev_total is None else ad.add(dev_total, term)
        if agent.structure == "recurrent":
            keep = (1.0 - dones[:, t].astype(np.float32))[:, None]
            h = ad.mul(core, ad.tensor(keep, dtype=dtype))

    gap = ad.sub(1.0, mask)
    w = sparsity_weights(np.asarray(flat_np, dtype=np.float32), cfg.exclude_scheme)
    if w is not None:
        gap = ad.mul(gap, ad.tensor(w, dtype=dtype))
    per_state = ad.reduce_sum(gap, axis=(1, 2, 3))
    spars = ad.reduce_sum(ad.reshape(per_state, (n, t_len)), axis=1)

    per_episode = ad.sub(dev_total, ad.mul(spars, cfg.beta))
    return ad.reduce_mean(per_episode)


def tsci_loss(episode: Episode, net: CausalDiscoveryNetwork, agent: PolicyNetwork,
              cfg: TsciConfig) -> ad.Tensor:
    """Scalar training loss for one episode (deviation minus sparsity bounty)."""
    return batch_tsci_loss([episode], net, agent, cfg)


def train_tsci(agent: PolicyNetwork, dataset: list[Episode], cfg: TsciConfig,
               seed: int, on_epoch=None) -> CausalDiscoveryNetwork:
    """Fit the mask decoder on a collected dataset; the agent stays frozen."""
    if not dataset:
        raise ConfigError("train_tsci needs a non-empty dataset")
    agent.params.freeze_all()
    net = CausalDiscoveryNetwork(agent, seed=derive_seed(seed, "decoder"))
    adam = ad.AdamState(lr=cfg.lr)
    order_rng = derive_generator(seed, "epoch-shuffle")
    nb = max(1, cfg.minibatch_episodes)
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(dataset))
        losses = []
        for lo in range(0, len(dataset), nb):
            chunk = [dataset[i] for i in order[lo:lo + nb]]
            net.params.zero_grads()
            with ad.Tape() as tape:
                loss = batch_tsci_loss(chunk, net, agent, cfg)
            if not np.isfinite(loss.data):
                raise ContractViolation(f"non-finite mask-training loss at epoch {epoch}")
            ad.backward(tape, loss)
            ad.adam_step(net.params, net.params.grads(), adam)
            losses.append(float(loss.data))
        row = {"epoch": epoch, "loss": float(np.mean(losses))}
        net.train_curve.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return net
