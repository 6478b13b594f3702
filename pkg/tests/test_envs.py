"""Environment rules, determinism, stacking, and intervention tests."""
import numpy as np
import pytest

from tsci import envs
from tsci.envs import (CorridorDodge, CorridorState, PelletPursuit, PelletState,
                       StackedState, apply_intervention, env_reset, env_step,
                       make_env, parse_scheme, stack_push)
from tsci.errors import ConfigError, ContractViolation, SchemeParseError


def _rollout(env, seed, actions):
    frame, state = env.reset(seed)
    frames = [frame]
    rewards = []
    dones = []
    for a in actions:
        frame, r, done, state = env.step(state, a)
        frames.append(frame)
        rewards.append(r)
        dones.append(done)
        if done:
            break
    return frames, rewards, dones


def test_unknown_env_id_raises():
    with pytest.raises(ConfigError):
        make_env("mystery-cave")


def test_reset_is_pure_function_of_seed():
    for env_id in envs.ENV_IDS:
        f1, s1 = env_reset(env_id, 123)
        f2, s2 = env_reset(env_id, 123)
        np.testing.assert_array_equal(f1, f2)
        assert s1 == s2


def test_adjacent_seeds_differ():
    # direct comparison on two seeds
    for env_id in envs.ENV_IDS:
        f1, _ = env_reset(env_id, 7)
        f2, _ = env_reset(env_id, 8)
        assert not np.array_equal(f1, f2)


def test_replay_is_bit_identical():
    rng = np.random.default_rng(0)
    for env_id in envs.ENV_IDS:
        env = make_env(env_id)
        actions = rng.integers(0, env.n_actions, size=80).tolist()
        a = _rollout(env, 42, actions)
        b = _rollout(env, 42, actions)
        for fa, fb in zip(a[0], b[0]):
            np.testing.assert_array_equal(fa, fb)
        assert a[1] == b[1] and a[2] == b[2]


def test_frames_stay_in_unit_interval():
    rng = np.random.default_rng(1)
    for env_id in envs.ENV_IDS:
        env = make_env(env_id)
        frames, _, _ = _rollout(env, 5, rng.integers(0, env.n_actions, size=120).tolist())
        for f in frames:
            assert f.dtype == np.float32 and f.shape == (32, 32)
            assert f.min() >= 0.0 and f.max() <= 1.0


def test_reset_counter_back_to_zero():
    env = make_env("corridor-dodge")
    _, state = env.reset(3)
    for _ in range(5):
        _, _, _, state = env.step(state, 1)
    assert state.t == 5
    _, fresh = env.reset(3)
    assert fresh.t == 0


# ---------------------------------------------------------------------------
# corridor-dodge rules


def test_corridor_boundary_clamp():
    _, state = env_reset("corridor-dodge", 11)
    state = CorridorState(agent_lane=0, cars=(), t=0, lcg=state.lcg)
    _, _, _, s2 = env_step(state, 0)  # left at lane 0
    assert s2.agent_lane == 0
    state = CorridorState(agent_lane=7, cars=(), t=0, lcg=state.lcg)
    _, _, _, s2 = env_step(state, 2)  # right at lane 7
    assert s2.agent_lane == 7


def test_corridor_collision_is_terminal_minus_one():
    # car one row above the agent at speed 1 lands exactly on the agent row
    state = CorridorState(agent_lane=3, cars=((3, 21, 1),), t=0, lcg=99)
    env = CorridorDodge(spawn_period=1000)
    _, reward, done, _ = env.step(state, 1)
    assert done and reward == -1.0


def test_corridor_survival_and_pass_rewards():
    env = CorridorDodge(spawn_period=1000)
    # empty corridor: only the survival bonus
    state = CorridorState(agent_lane=3, cars=(), t=0, lcg=99)
    _, reward, done, _ = env.step(state, 1)
    assert not done and reward == pytest.approx(0.05)
    # car at the agent row in another lane moves past it: +1 pass bonus
    state = CorridorState(agent_lane=3, cars=((5, 22, 1),), t=0, lcg=99)
    _, reward, done, state = env.step(state, 1)
    assert not done and reward == pytest.approx(1.05)
    assert state.cars == ((5, 23, 1),)


def test_corridor_car_despawns_past_bottom():
    env = CorridorDodge(spawn_period=1000)
    state = CorridorState(agent_lane=0, cars=((5, 23, 1),), t=0, lcg=99)
    _, _, _, s2 = env.step(state, 1)
    assert s2.cars == ()


def test_corridor_frame_layout():
    state = CorridorState(agent_lane=2, cars=((4, 10, 1),), t=0, lcg=1)
    f = envs.render_corridor(state)
    assert np.all(f[26, 8:12] == 1.0)  # agent row 22 -> y 26, lane 2 -> x 8..11
    assert np.all(f[14, 16:20] == 0.7)  # car row 10 -> y 14, lane 4
    assert f[4, 0] == pytest.approx(0.3)  # dashed marker, top corridor row
    assert np.all(f[:4] <= 0.3) and np.all(f[28:] == 0.0)  # margins


def test_corridor_step_cap():
    env = CorridorDodge(spawn_period=1000)
    state = CorridorState(agent_lane=0, cars=(), t=255, lcg=1)
    _, _, done, s2 = env.step(state, 1)
    assert done and s2.t == 256


def test_corridor_out_of_range_action():
    _, state = env_reset("corridor-dodge", 1)
    with pytest.raises(ContractViolation):
        env_step(state, 3)


def test_corridor_partial_observability_fixture():
    # identical current frames, different car speeds, different outcomes
    env = CorridorDodge(spawn_period=1000)
    slow = CorridorState(agent_lane=3, cars=((3, 20, 1),), t=0, lcg=99)
    fast = CorridorState(agent_lane=3, cars=((3, 20, 2),), t=0, lcg=99)
    np.testing.assert_array_equal(envs.render_corridor(slow), envs.render_corridor(fast))
    outcomes = []
    for state in (slow, fast):
        done_at = None
        for t in range(3):
            _, _, done, state = env.step(state, 1)
            if done:
                done_at = t
                break
        outcomes.append(done_at)
    assert outcomes[0] != outcomes[1]  # speed 2 collides a step earlier


# ---------------------------------------------------------------------------
# pellet-pursuit rules


def test_pellet_pickup_reward_and_removal():
    state = PelletState(agent=(5, 5), chaser=(15, 15), heading=(0, 0),
                        pellets=frozenset({(5, 6), (0, 0)}), t=1, lcg=7)
    env = PelletPursuit()
    _, reward, done, s2 = env.step(state, 3)  # right onto the pellet
    assert reward == pytest.approx(1.0) and not done
    assert s2.pellets == frozenset({(0, 0)})


def test_pellet_capture_terminal():
    state = PelletState(agent=(5, 5), chaser=(5, 7), heading=(0, -1),
                        pellets=frozenset({(0, 0)}), t=1, lcg=7)
    env = PelletPursuit()
    _, reward, done, _ = env.step(state, 3)  # agent steps right into the chaser's path
    assert done and reward == pytest.approx(-1.0)


def test_pellet_chaser_reaims_every_three_steps():
    env = PelletPursuit()
    state = PelletState(agent=(0, 0), chaser=(8, 8), heading=(0, 0),
                        pellets=frozenset({(15, 15)}), t=0, lcg=7)
    # t=0 re-aims (agent is up-left, vertical gap == horizontal -> horizontal)
    _, _, _, s1 = env.step(state, 4)
    assert s1.heading == (0, -1) and s1.chaser == (8, 7)
    # t=1,2 keep heading even though the agent has not moved
    _, _, _, s2 = env.step(s1, 4)
    _, _, _, s3 = env.step(s2, 4)
    assert s2.heading == s3.heading == (0, -1)
    assert s3.chaser == (8, 5)
    # t=3 re-aims: now the vertical gap (8) beats horizontal (5)
    _, _, _, s4 = env.step(s3, 4)
    assert s4.heading == (-1, 0)


def test_pellet_initial_layout():
    f, state = env_reset("pellet-pursuit", 9)
    assert len(state.pellets) == 10
    assert state.agent not in state.pellets and state.chaser not in state.pellets
    cheb = max(abs(state.agent[0] - state.chaser[0]), abs(state.agent[1] - state.chaser[1]))
    assert cheb >= 6
    # x2 upscale: every sprite is a 2x2 block
    r, c = state.agent
    assert np.all(f[2 * r:2 * r + 2, 2 * c:2 * c + 2] == 1.0)
    assert (f == 0.5).sum() == 40  # 10 pellets x 4 px


def test_pellet_wall_clamp():
    env = PelletPursuit()
    state = PelletState(agent=(0, 0), chaser=(15, 15), heading=(1, 1),
                        pellets=frozenset({(9, 9)}), t=1, lcg=7)
    _, _, _, s2 = env.step(state, 0)  # up against the top wall
    assert s2.agent == (0, 0)
    assert s2.chaser == (15, 15)  # chaser clamped in the corner too


# ---------------------------------------------------------------------------
# stacking


def test_stack_repeat_fill_and_fifo():
    f1 = np.full((32, 32), 0.25, dtype=np.float32)
    st = StackedState.from_frame(f1, 4)
    assert st.frames.shape == (4, 32, 32)
    for i in range(4):
        np.testing.assert_array_equal(st.frames[i], f1)
    f2 = np.full((32, 32), 0.5, dtype=np.float32)
    st2 = stack_push(st, f2)
    np.testing.assert_array_equal(st2.frames[:3], st.frames[1:])
    np.testing.assert_array_equal(st2.frames[3], f2)


def test_stack_m1_equals_latest():
    f1 = np.zeros((32, 32), dtype=np.float32)
    st = StackedState.from_frame(f1, 1)
    f2 = np.ones((32, 32), dtype=np.float32)
    st = stack_push(st, f2)
    assert st.frames.shape == (1, 32, 32)
    np.testing.assert_array_equal(st.frames[0], f2)


def test_stack_push_size_mismatch():
    st = StackedState.from_frame(np.zeros((32, 32), dtype=np.float32), 4)
    with pytest.raises(Exception):
        stack_push(st, np.zeros((16, 16), dtype=np.float32))


# ---------------------------------------------------------------------------
# schemes and interventions


def test_parse_scheme_examples():
    assert parse_scheme("None").frames == frozenset()
    assert parse_scheme("34").frames == {3, 4}
    assert parse_scheme("123").frames == {1, 2, 3}
    assert parse_scheme("1234").frames == {1, 2, 3, 4}


def test_parse_scheme_rejects_bad_input():
    for bad in ("33", "43", "05", "12345", "", "a3"):
        with pytest.raises(SchemeParseError):
            parse_scheme(bad)


def test_intervention_zeroes_foreground_not_agent():
    _, state = env_reset("corridor-dodge", 21)
    frame = envs.render_corridor(state)
    st = StackedState.from_frame(frame, 4)
    out = apply_intervention(st, parse_scheme("34"))
    for i in (0, 1):
        np.testing.assert_array_equal(out.frames[i], frame)
    for i in (2, 3):
        kept = out.frames[i]
        assert not np.any((kept >= 0.3) & (kept != 1.0))  # cars and markers gone
        np.testing.assert_array_equal(kept == 1.0, frame == 1.0)  # agent kept


def test_intervention_none_is_identity_and_idempotent():
    _, state = env_reset("pellet-pursuit", 4)
    st = StackedState.from_frame(envs.render_pellet(state), 4)
    same = apply_intervention(st, parse_scheme("None"))
    np.testing.assert_array_equal(same.frames, st.frames)
    once = apply_intervention(st, parse_scheme("1234"))
    twice = apply_intervention(once, parse_scheme("1234"))
    np.testing.assert_array_equal(once.frames, twice.frames)
    np.testing.assert_array_equal(st.frames[0], envs.render_pellet(state))  # input untouched
