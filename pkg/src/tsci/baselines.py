"""Comparator explainers for the mask-discovery study.

Two saliency methods that need no training (Jacobian gradient saliency and
Gaussian-perturbation saliency) and two alternative training objectives
(a non-temporal single-step variant and an imitation log-likelihood) that
reuse the exact mask-decoder architecture, optimizer, and budget, so any
quality difference comes from the objective alone.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from . import autodiff as ad
from .agent import (ENC_FLAT, GRU_WIDTH, Episode, PolicyNetwork,
                    encoder_features, forward_batch, forward_core, head_outputs)
from .causal import (CausalDiscoveryNetwork, TsciConfig, _distance_t,
                     sparsity_weights)
from .envs import StackedState
from .errors import ConfigError, ContractViolation, DimensionError
from .rng import derive_generator, derive_seed

BASELINE_KINDS = ("cxplain", "il")


def _as_hidden(agent: PolicyNetwork, hidden, n: int, dtype) -> np.ndarray:
    if hidden is None:
        hidden = agent.zero_hidden(n)
    hidden = np.asarray(hidden, dtype=dtype)
    if hidden.ndim == 1:
        hidden = hidden[None]
    if hidden.shape == (1, GRU_WIDTH) and n > 1:
        hidden = np.repeat(hidden, n, axis=0)
    if hidden.shape != (n, GRU_WIDTH):
        raise DimensionError(f"hidden must broadcast to ({n}, {GRU_WIDTH})")
    return hidden


# ---------------------------------------------------------------------------
# gradient saliency


def greedy_logit_pixel_gradient(agent: PolicyNetwork, state: StackedState,
                                hidden=None) -> tuple[np.ndarray, int]:
    """Signed d(logit of the greedy action)/d(pixel), plus that action.

    Differentiates the pre-softmax logit rather than the probability: the
    softmax saturates for a confident policy and flattens the signal.
    """
    frames = state.frames
    if frames.shape[0] != agent.m:
        raise DimensionError(f"state has {frames.shape[0]} frames, net expects {agent.m}")
    h = _as_hidden(agent, hidden, 1, frames.dtype)
    st = ad.tensor(frames[None], requires_grad=True, dtype=frames.dtype)
    with ad.Tape() as tape:
        out = forward_batch(agent, st, ad.tensor(h))
        action = int(np.argmax(out["logits"].data[0]))
        picked = ad.reduce_sum(ad.gather_rows(out["logits"], np.array([action])))
    ad.backward(tape, picked)
    return st.grad[0].copy(), action


def gradient_saliency(agent: PolicyNetwork, state: StackedState, hidden=None) -> np.ndarray:
    """|d logit(greedy action) / d pixel| per frame, max-normalized to [0,1]."""
    grad, _ = greedy_logit_pixel_gradient(agent, state, hidden)
    sal = np.abs(grad)
    peak = float(sal.max())
    if peak > 0.0:
        sal = sal / peak
    return sal.astype(np.float32)


def gradient_saliency_batch(agent: PolicyNetwork, stacks: list[StackedState],
                            hidden=None) -> np.ndarray:
    """Saliency for a batch of states in one tape pass, (N, m, H, W).

    Each sample's greedy logit is independent of the others, so row k agrees
    with gradient_saliency on stacks[k] up to BLAS accumulation order (gemv
    vs gemm kernels sum in different orders)."""
    frames = np.stack([s.frames for s in stacks])
    n = frames.shape[0]
    h = _as_hidden(agent, hidden, n, frames.dtype)
    st = ad.tensor(frames, requires_grad=True, dtype=frames.dtype)
    with ad.Tape() as tape:
        out = forward_batch(agent, st, ad.tensor(h))
        actions = np.argmax(out["logits"].data, axis=1)
        picked = ad.reduce_sum(ad.gather_rows(out["logits"], actions))
    ad.backward(tape, picked)
    sal = np.abs(st.grad)
    peaks = sal.reshape(n, -1).max(axis=1)
    peaks[peaks == 0.0] = 1.0
    return (sal / peaks[:, None, None, None]).astype(np.float32)


# ---------------------------------------------------------------------------
# Gaussian-perturbation saliency


def perturbed_state(state: StackedState, frame_idx: int, i: int, j: int,
                    sigma: float = 3.0) -> StackedState:
    """One frame locally blurred: x*(1-g) + blur(x)*g, g a unit-peak Gaussian
    mask of width sigma centered at pixel (i, j). Other frames untouched."""
    frames = state.frames
    blurred = ndimage.gaussian_filter(frames[frame_idx], sigma=sigma, mode="nearest")
    yy, xx = np.mgrid[0:frames.shape[1], 0:frames.shape[2]]
    g = np.exp(-((yy - i) ** 2 + (xx - j) ** 2) / (2.0 * sigma ** 2)).astype(frames.dtype)
    out = frames.copy()
    out[frame_idx] = frames[frame_idx] * (1.0 - g) + blurred * g
    return StackedState(out)


def _policy_probs(agent: PolicyNetwork, states: np.ndarray, hidden: np.ndarray) -> np.ndarray:
    out = forward_batch(agent, ad.tensor(states, dtype=states.dtype),
                        ad.tensor(hidden, dtype=states.dtype))
    return out["probs"].data


def gaussian_grid_scores(agent: PolicyNetwork, state: StackedState, hidden=None,
                         sigma: float = 3.0, grid_stride: int = 2) -> np.ndarray:
    """Raw perturbation scores 0.5*|pi(s) - pi(perturbed s)|^2 on the sample grid.

    Returns (m, H/stride, W/stride). The unperturbed state rides along in each
    forward batch, so a perturbation that leaves the pixels bit-identical
    scores exactly zero (row-wise GEMMs give equal rows equal outputs).
    """
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    frames = state.frames
    m, hgt, wid = frames.shape
    if hgt % grid_stride or wid % grid_stride:
        raise ConfigError(f"grid_stride {grid_stride} must divide the frame size")
    rows = range(0, hgt, grid_stride)
    cols = range(0, wid, grid_stride)
    scores = np.zeros((m, hgt // grid_stride, wid // grid_stride), dtype=np.float32)
    for k in range(m):
        batch = [frames]
        for i in rows:
            for j in cols:
                batch.append(perturbed_state(state, k, i, j, sigma).frames)
        h = _as_hidden(agent, hidden, len(batch), frames.dtype)
        probs = _policy_probs(agent, np.stack(batch), h)
        d = 0.5 * ((probs[1:] - probs[0]) ** 2).sum(axis=1)
        scores[k] = d.reshape(scores.shape[1:])
    return scores


def gaussian_perturbation_saliency(agent: PolicyNetwork, state: StackedState,
                                   hidden=None, sigma: float = 3.0,
                                   grid_stride: int = 2) -> np.ndarray:
    """Behavior change under localized blur, bilinearly upsampled and
    max-normalized; (m, H, W) in [0,1]."""
    grid = gaussian_grid_scores(agent, state, hidden, sigma, grid_stride)
    m, hgt, wid = state.frames.shape
    # output pixel p samples grid coordinate p/stride, so full-resolution
    # positions stride*i land exactly on grid[i]; edges extend past the last
    # grid point (scipy's zoom realigns endpoints and misses the samples)
    cy, cx = np.meshgrid(np.arange(hgt) / grid_stride,
                         np.arange(wid) / grid_stride, indexing="ij")
    sal = np.stack([ndimage.map_coordinates(g, [cy, cx], order=1, mode="nearest")
                    for g in grid])
    peak = float(sal.max())
    if peak > 0.0:
        sal = sal / peak
    return sal.astype(np.float32)


# ---------------------------------------------------------------------------
# alternative training objectives (same decoder, different loss)


def _independent_step_loss(kind: str, states_np: np.ndarray,
                           net: CausalDiscoveryNetwork, agent: PolicyNetwork,
                           cfg: TsciConfig) -> ad.Tensor:
    """Taped mean loss over (N, m, H, W) independent steps.

    Each step gets a freshly zeroed hidden in both branches; the reference
    outputs are recomputed through the same forward path as the masked ones,
    so an all-ones mask costs exactly zero (matching the episode objective)."""
    n = states_np.shape[0]
    flat = ad.tensor(states_np, dtype=states_np.dtype)
    feats = encoder_features(agent, flat)  # constants: frozen encoder, raw states
    rflat = ad.tensor(feats[-1].data.reshape(n, ENC_FLAT))
    h0 = ad.tensor(np.zeros((n, GRU_WIDTH), dtype=rflat.data.dtype))
    rcore = forward_core(agent, rflat, h0)
    rlogits, rvalues = head_outputs(agent, rcore)
    ref_probs = ad.softmax(rlogits).data
    ref_values = rvalues.data

    mask = net.masks_from_features(feats)
    masked = ad.mul(flat, mask)
    mfeats = encoder_features(agent, masked)
    mflat = ad.reshape(mfeats[-1], (n, ENC_FLAT))
    core = forward_core(agent, mflat, h0)
    logits, values = head_outputs(agent, core)

    dtype = mask.dtype
    if kind == "cxplain":
        ea = _distance_t(ad.softmax(logits), ref_probs, cfg.distance)
    elif kind == "il":
        # match the reference branch's greedy action, as a classification task
        a_ref = np.argmax(ref_probs, axis=1)
        ea = ad.neg(ad.gather_rows(ad.log_softmax(logits), a_ref))
    else:
        raise ConfigError(f"kind must be one of {BASELINE_KINDS}, got {kind!r}")
    es = ad.absolute(ad.sub(values, ad.tensor(ref_values, dtype=dtype)))

    gap = ad.sub(1.0, mask)
    w = sparsity_weights(np.asarray(states_np, dtype=np.float32), cfg.exclude_scheme)
    if w is not None:
        gap = ad.mul(gap, ad.tensor(w, dtype=dtype))
    spars = ad.reduce_sum(gap, axis=(1, 2, 3))
    per_step = ad.sub(ad.add(ea, ad.mul(es, cfg.alpha)), ad.mul(spars, cfg.beta))
    return ad.reduce_mean(per_step)


def cxplain_loss(state, net: CausalDiscoveryNetwork, agent: PolicyNetwork,
                 cfg: TsciConfig) -> ad.Tensor:
    """Single-step mask objective: L(pi(s*g), pi(s)) + alpha*|dv| - beta*|1-g|_1.

    The episode objective restricted to one step with a zeroed hidden; the
    discount never enters (gamma^0 = 1)."""
    frames = state.frames if isinstance(state, StackedState) else np.asarray(state)
    return _independent_step_loss("cxplain", frames[None], net, agent, cfg)


def il_loss(state, net: CausalDiscoveryNetwork, agent: PolicyNetwork,
            cfg: TsciConfig) -> ad.Tensor:
    """Imitation variant: -log pi(s*g)[argmax pi(s)] + alpha*|dv| - beta*|1-g|_1."""
    frames = state.frames if isinstance(state, StackedState) else np.asarray(state)
    return _independent_step_loss("il", frames[None], net, agent, cfg)


def train_baseline_explainer(kind: str, agent: PolicyNetwork, dataset: list[Episode],
                             cfg: TsciConfig, seed: int,
                             on_epoch=None) -> CausalDiscoveryNetwork:
    """Fit the mask decoder with a comparator objective on independent steps.

    Architecture, init seed path, optimizer, epochs, and per-epoch optimizer
    step count all match train_tsci on the same dataset; only the loss and
    the episode-vs-step sampling differ.
    """
    if kind not in BASELINE_KINDS:
        raise ConfigError(f"kind must be one of {BASELINE_KINDS}, got {kind!r}")
    if not dataset:
        raise ConfigError("train_baseline_explainer needs a non-empty dataset")
    agent.params.freeze_all()
    net = CausalDiscoveryNetwork(agent, seed=derive_seed(seed, "decoder"))
    adam = ad.AdamState(lr=cfg.lr)
    order_rng = derive_generator(seed, "epoch-shuffle")
    steps = np.concatenate([ep.states for ep in dataset])
    n_batches = math.ceil(len(dataset) / max(1, cfg.minibatch_episodes))
    size = math.ceil(len(steps) / n_batches)
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(steps))
        losses = []
        for lo in range(0, len(steps), size):
            chunk = steps[order[lo:lo + size]]
            net.params.zero_grads()
            with ad.Tape() as tape:
                loss = _independent_step_loss(kind, chunk, net, agent, cfg)
            if not np.isfinite(loss.data):
                raise ContractViolation(f"non-finite {kind} loss at epoch {epoch}")
            ad.backward(tape, loss)
            ad.adam_step(net.params, net.params.grads(), adam)
            losses.append(float(loss.data))
        row = {"epoch": epoch, "loss": float(np.mean(losses))}
        net.train_curve.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return net
