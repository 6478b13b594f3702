"""Policy network, GAE, PPO/A2C updates, and collection tests."""
import numpy as np
import pytest

from tsci import agent as ag
from tsci import autodiff as ad
from tsci.envs import StackedState, env_reset
from tsci.errors import ConfigError, ContractViolation, DimensionError

from oracles import conv2d_naive, gae_naive, gru_cell_naive, rel_error


def _fresh_net(m=4, n_actions=3, structure="recurrent", seed=5):
    return ag.PolicyNetwork(m, n_actions, structure, seed=seed)


def _random_stack(rng, m=4):
    return StackedState(rng.random((m, 32, 32)).astype(np.float32))


def policy_forward_naive(net, state, hidden):
    """Layer-by-layer scalar reference using the net's raw arrays."""
    arrays = net.params.state_arrays()
    x = state.frames[None].astype(np.float64)
    for i in (1, 2, 3):
        w = arrays[f"enc.conv{i}.w"].astype(np.float64)
        b = arrays[f"enc.conv{i}.b"].astype(np.float64)
        x = np.maximum(conv2d_naive(x, w, b, stride=2, pad=0), 0.0)
    flat = x.reshape(-1)
    if net.structure == "recurrent":
        gp = {k: arrays[f"gru.{k}"].astype(np.float64)
              for k in ("wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn")}
        core = gru_cell_naive(flat, hidden.astype(np.float64), gp)
    else:
        core = np.maximum(flat @ arrays["fc.w"] + arrays["fc.b"], 0.0)
    logits = core @ arrays["actor.w"] + arrays["actor.b"]
    z = logits - logits.max()
    probs = np.exp(z) / np.exp(z).sum()
    value = float((core @ arrays["critic.w"] + arrays["critic.b"])[0])
    return probs, value, core


def test_policy_forward_matches_scalar_oracle():
    rng = np.random.default_rng(2)
    for structure in ("recurrent", "feedforward"):
        net = _fresh_net(structure=structure)
        state = _random_stack(rng)
        hidden = rng.standard_normal(128).astype(np.float32)
        probs, value, hidden2 = ag.policy_forward(net, state, hidden)
        want_p, want_v, want_h = policy_forward_naive(net, state, hidden)
        assert rel_error(probs.astype(np.float64), want_p) < 1e-5
        assert abs(value - want_v) < 1e-5
        assert rel_error(hidden2.astype(np.float64), want_h) < 1e-5


def test_policy_forward_simplex_and_determinism():
    rng = np.random.default_rng(3)
    net = _fresh_net()
    state = _random_stack(rng)
    hidden = net.zero_hidden()
    p1, v1, h1 = ag.policy_forward(net, state, hidden)
    p2, v2, h2 = ag.policy_forward(net, state, hidden)
    assert abs(p1.sum() - 1.0) < 1e-6 and np.all(p1 >= 0)
    np.testing.assert_array_equal(p1, p2)
    assert v1 == v2
    np.testing.assert_array_equal(h1, h2)


def test_policy_forward_shape_errors():
    net = _fresh_net(m=4)
    with pytest.raises(DimensionError):
        ag.policy_forward(net, StackedState(np.zeros((2, 32, 32), dtype=np.float32)),
                          net.zero_hidden())
    with pytest.raises(DimensionError):
        ag.policy_forward(net, StackedState(np.zeros((4, 32, 32), dtype=np.float32)),
                          np.zeros(64, dtype=np.float32))


def test_encoder_features_shapes_and_sharing():
    rng = np.random.default_rng(4)
    net = _fresh_net()
    batch = ad.tensor(rng.random((2, 4, 32, 32)).astype(np.float32))
    feats = ag.encoder_features(net, batch)
    assert [f.shape for f in feats] == [(2, 16, 15, 15), (2, 32, 7, 7), (2, 32, 3, 3)]
    out = ag.forward_batch(net, batch, ad.tensor(net.zero_hidden(2)))
    for a, b in zip(feats, out["features"]):
        np.testing.assert_array_equal(a.data, b.data)


def test_feedforward_and_recurrent_share_encoder_shapes():
    r = _fresh_net(structure="recurrent")
    f = _fresh_net(structure="feedforward")
    for i in (1, 2, 3):
        assert r.params[f"enc.conv{i}.w"].shape == f.params[f"enc.conv{i}.w"].shape


def test_bad_structure_rejected():
    with pytest.raises(ConfigError):
        ag.PolicyNetwork(4, 3, "transformer")


# ---------------------------------------------------------------------------
# GAE


def test_gae_zero_inputs():
    adv, ret = ag.compute_gae(np.zeros(5), np.zeros(5), np.zeros(5, dtype=bool), 0.99, 0.95)
    np.testing.assert_array_equal(adv, np.zeros(5))
    np.testing.assert_array_equal(ret, np.zeros(5))


def test_gae_gamma_zero_collapses_to_td():
    rng = np.random.default_rng(5)
    r = rng.standard_normal(6)
    v = rng.standard_normal(6)
    adv, _ = ag.compute_gae(r, v, np.zeros(6, dtype=bool), 0.0, 0.95)
    np.testing.assert_allclose(adv, (r - v).astype(np.float32), rtol=1e-6)


def test_gae_terminal_example():
    adv, ret = ag.compute_gae([1.0, 1.0], [0.0, 0.0], [False, True], 1.0, 1.0)
    np.testing.assert_allclose(adv, [2.0, 1.0])
    np.testing.assert_allclose(ret, [2.0, 1.0])


def test_gae_matches_reference_with_dones_and_bootstrap():
    rng = np.random.default_rng(6)
    r = rng.standard_normal(20)
    v = rng.standard_normal(20)
    d = rng.random(20) < 0.2
    adv, ret = ag.compute_gae(r, v, d, 0.97, 0.9, bootstrap_value=0.4)
    want_adv, want_ret = gae_naive(r, v, d, 0.4, 0.97, 0.9)
    assert rel_error(adv.astype(np.float64), want_adv) < 1e-6
    assert rel_error(ret.astype(np.float64), want_ret) < 1e-6


# ---------------------------------------------------------------------------
# updates


def _toy_episodes(net, rng, t_len=8, n_eps=2, env_id="corridor-dodge"):
    """Short real windows collected from fresh streams."""
    return ag.collect_episodes(net, env_id, n_eps, t_len, seed=int(rng.integers(1 << 30)),
                               n_envs=n_eps)


def test_clipped_surrogate_properties():
    # per-sample: min(r*A, clip(r)*A) <= r*A, and zero gradient once clipped
    for ratio_val, adv_val, expect_zero_grad in [(1.5, 1.0, True), (0.5, -1.0, True),
                                                 (1.0, 1.0, False), (1.1, 1.0, False)]:
        logp = ad.tensor(np.array([np.log(0.3)], dtype=np.float64), requires_grad=True)
        old_logp = np.log(0.3) - np.log(ratio_val)
        with ad.Tape() as tape:
            ratio = ad.exp(ad.sub(logp, ad.tensor(np.array([old_logp]), dtype=np.float64)))
            adv = ad.tensor(np.array([adv_val]), dtype=np.float64)
            surr = ad.minimum(ad.mul(ratio, adv),
                              ad.mul(ad.clamp(ratio, 0.8, 1.2), adv))
            loss = ad.neg(ad.reduce_sum(surr))
        assert surr.data[0] <= ratio.data[0] * adv_val + 1e-12
        ad.backward(tape, loss)
        if expect_zero_grad:
            np.testing.assert_allclose(logp.grad, 0.0, atol=1e-12)
        else:
            assert abs(logp.grad[0]) > 1e-8


def test_update_moves_probability_toward_positive_advantage():
    rng = np.random.default_rng(7)
    net = _fresh_net(seed=11)
    eps = _toy_episodes(net, rng)
    states = np.concatenate([e.states for e in eps])
    hiddens = np.concatenate([e.hiddens for e in eps])
    actions = np.concatenate([e.actions for e in eps])
    old_logp = np.log(np.concatenate([e.dists[np.arange(e.horizon), e.actions] for e in eps]))
    rets = np.concatenate([e.values for e in eps])
    cfg = ag.PpoConfig(lr=1e-3, ent_coef=0.0, vf_coef=1e-8)
    before = ag.forward_batch(net, ad.tensor(states), ad.tensor(hiddens))["probs"].data
    p_before = before[np.arange(len(actions)), actions].mean()
    adam = ad.AdamState(lr=cfg.lr)
    for sign in (1.0,) * 3:
        ag._minibatch_step(net, cfg, adam, states, hiddens, actions,
                           old_logp.astype(np.float32),
                           sign * np.ones(len(actions), dtype=np.float32),
                           rets, clipped=False)
    after = ag.forward_batch(net, ad.tensor(states), ad.tensor(hiddens))["probs"].data
    p_after = after[np.arange(len(actions)), actions].mean()
    assert p_after > p_before


def test_a2c_matches_ppo_at_theta_old():
    # with epochs=1, full-batch minibatch, and a huge clip band the two
    # updates compute the same gradient at the collection parameters
    rng = np.random.default_rng(8)
    net_a = _fresh_net(seed=21)
    net_b = _fresh_net(seed=21)
    eps = _toy_episodes(net_a, rng, t_len=6, n_eps=2)
    cfg = ag.PpoConfig(epochs=1, minibatch_size=10_000, clip_eps=1e9, lr=1e-3)
    sa = ad.AdamState(lr=cfg.lr)
    sb = ad.AdamState(lr=cfg.lr)
    ag.ppo_update(net_a, eps, cfg, sa, np.random.default_rng(0))
    ag.a2c_update(net_b, eps, cfg, sb, np.random.default_rng(0))
    for name, t in net_a.params.items():
        assert rel_error(t.data.astype(np.float64),
                         net_b.params[name].data.astype(np.float64)) < 1e-4, name


def test_zero_advantages_give_zero_policy_gradient():
    rng = np.random.default_rng(9)
    net = _fresh_net(seed=31)
    eps = _toy_episodes(net, rng, t_len=4, n_eps=1)
    states = eps[0].states
    hiddens = eps[0].hiddens
    actions = eps[0].actions
    old_logp = np.log(eps[0].dists[np.arange(4), actions]).astype(np.float32)
    cfg = ag.PpoConfig(ent_coef=0.0, vf_coef=1.0)
    before = net.params["actor.w"].data.copy()
    ag._minibatch_step(net, cfg, ad.AdamState(lr=0.0), states, hiddens, actions,
                       old_logp, np.zeros(4, dtype=np.float32), eps[0].values,
                       clipped=False)
    # lr=0 so params frozen; check the actor gradient itself vanished
    np.testing.assert_array_equal(net.params["actor.w"].data, before)
    assert np.abs(net.params["actor.w"].grad).max() < 1e-7


def test_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    logits = ad.tensor(rng.standard_normal((3, 4)), requires_grad=True, dtype=np.float64)

    def entropy_val(x):
        z = x - x.max(axis=-1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=-1, keepdims=True)
        return -(p * np.log(p)).sum(axis=-1).mean()

    with ad.Tape() as tape:
        probs = ad.softmax(logits)
        ent = ad.neg(ad.reduce_mean(ad.reduce_sum(ad.mul(probs, ad.log_softmax(logits)), axis=-1)))
    ad.backward(tape, ent)
    from oracles import fd_gradient
    num = fd_gradient(entropy_val, logits.data.copy())
    assert rel_error(logits.grad, num) < 1e-6


@pytest.mark.filterwarnings("ignore:invalid value")
def test_update_rejects_empty_batch_and_nan():
    net = _fresh_net()
    cfg = ag.PpoConfig()
    with pytest.raises(ContractViolation):
        ag.ppo_update(net, [], cfg, ad.AdamState(lr=1e-3), np.random.default_rng(0))
    rng = np.random.default_rng(11)
    eps = _toy_episodes(net, rng, t_len=4, n_eps=1)
    eps[0].rewards[2] = np.inf
    with pytest.raises(ContractViolation):
        ag.ppo_update(net, eps, cfg, ad.AdamState(lr=1e-3), np.random.default_rng(0))


def test_simplex_invariant_after_updates():
    rng = np.random.default_rng(12)
    net = _fresh_net(seed=41)
    cfg = ag.PpoConfig(epochs=2, minibatch_size=8, lr=1e-3)
    adam = ad.AdamState(lr=cfg.lr)
    eps = _toy_episodes(net, rng, t_len=8, n_eps=2)
    ag.ppo_update(net, eps, cfg, adam, np.random.default_rng(1))
    state = _random_stack(rng)
    probs, _, _ = ag.policy_forward(net, state, net.zero_hidden())
    assert abs(probs.sum() - 1.0) < 1e-6 and np.all(probs >= 0)


def test_ppo_config_validation():
    with pytest.raises(ConfigError):
        ag.PpoConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        ag.PpoConfig(lam=-0.1)
    with pytest.raises(ConfigError):
        ag.PpoConfig(clip_eps=0.0)


# ---------------------------------------------------------------------------
# collection


def test_collect_single_window_alignment():
    net = _fresh_net()
    eps = ag.collect_episodes(net, "corridor-dodge", 1, 8, seed=3)
    assert len(eps) == 1
    ep = eps[0]
    assert ep.states.shape == (8, 4, 32, 32)
    assert ep.dists.shape == (8, 3)
    for arr in (ep.actions, ep.values, ep.rewards, ep.dones):
        assert len(arr) == 8
    assert ep.hiddens.shape == (8, 128)
    np.testing.assert_array_equal(ep.hiddens[0], 0.0)  # fresh stream starts blank


def test_collect_is_deterministic():
    net = _fresh_net(n_actions=5, seed=7)
    a = ag.collect_episodes(net, "pellet-pursuit", 3, 10, seed=9, n_envs=2)
    b = ag.collect_episodes(net, "pellet-pursuit", 3, 10, seed=9, n_envs=2)
    for ea, eb in zip(a, b):
        np.testing.assert_array_equal(ea.states, eb.states)
        np.testing.assert_array_equal(ea.dists, eb.dists)
        np.testing.assert_array_equal(ea.actions, eb.actions)
        np.testing.assert_array_equal(ea.hiddens, eb.hiddens)
        assert ea.bootstrap_value == eb.bootstrap_value


def test_hidden_resets_after_done_and_chains_across_windows():
    net = _fresh_net(seed=13)
    collector = ag.StreamCollector(net, "corridor-dodge", 1, 16, seed=17)
    # drive plenty of windows so at least one in-window termination occurs
    seen_done = False
    prev_last_hidden = None
    for _ in range(12):
        (ep,) = collector.collect_window()
        if prev_last_hidden is not None and not prev_done:
            np.testing.assert_array_equal(ep.hiddens[0], prev_last_hidden)
        where = np.flatnonzero(ep.dones[:-1])
        for t in where:
            np.testing.assert_array_equal(ep.hiddens[t + 1], 0.0)
            seen_done = True
        prev_done = bool(ep.dones[-1])
        prev_last_hidden = collector.hidden[0].copy()
    assert seen_done


def test_stream_values_match_recorded_dists():
    # recorded dists/values must be the net's own outputs on the recorded inputs
    net = _fresh_net(seed=19)
    (ep,) = ag.collect_episodes(net, "corridor-dodge", 1, 6, seed=23)
    out = ag.forward_batch(net, ad.tensor(ep.states), ad.tensor(ep.hiddens))
    np.testing.assert_allclose(out["probs"].data, ep.dists, atol=2e-6)
    np.testing.assert_allclose(out["values"].data, ep.values, atol=2e-6)


def test_train_agent_smoke_and_determinism():
    cfg = ag.PpoConfig(total_steps=256, n_envs=2, horizon=16, minibatch_size=16,
                       epochs=2, lr=1e-3)
    net1, curve1 = ag.train_agent("corridor-dodge", cfg, seed=31, log_every=4)
    net2, curve2 = ag.train_agent("corridor-dodge", cfg, seed=31, log_every=4)
    assert curve1 and curve1[-1]["step"] == 256
    for name, t in net1.params.items():
        np.testing.assert_array_equal(t.data, net2.params[name].data)


def test_greedy_episode_runs():
    net = _fresh_net(n_actions=5, seed=23)
    out = ag.greedy_episode(net, "pellet-pursuit", seed=5)
    assert out["length"] >= 1
    assert np.isfinite(out["return"])
