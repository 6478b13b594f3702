"""Two deterministic 32x32 pixel control tasks plus stacking/intervention wrappers.

Both games are pure functions of (state, action): every draw comes from a
64-bit LCG word stored in the state, so replaying a seed and action sequence
reproduces frames, rewards, and termination bit-for-bit.

corridor-dodge: eight 4-px lanes, cars fall at 1 or 2 cells/step toward a
dodging agent pinned to row 22. A single frame shows car positions but not
speeds, so telling "will it land on me next step" apart requires frame
history. pellet-pursuit: a 16x16 pellet field (upscaled x2) with a chaser
that re-aims at the agent every third step and otherwise keeps heading;
heading is likewise invisible in any single frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractViolation, DimensionError, SchemeParseError
from .rng import lcg_next

FRAME_HW = 32

AGENT_INTENSITY = 1.0
CAR_INTENSITY = 0.7
CHASER_INTENSITY = 0.8
PELLET_INTENSITY = 0.5
MARKER_INTENSITY = 0.3
# intervention "foreground": everything at or above marker level except the agent
FOREGROUND_MIN = 0.3

# corridor-dodge geometry: 8 lanes x 24 rows of 4x1-px cells, 4-px margins
CD_LANES = 8
CD_ROWS = 24
CD_CELL_W = 4
CD_TOP = 4
CD_AGENT_ROW = 22
CD_STEP_CAP = 256
CD_ACTIONS = ("left", "stay", "right")

PP_GRID = 16
PP_N_PELLETS = 10
PP_REAIM_EVERY = 3
PP_STEP_CAP = 256
PP_ACTIONS = ("up", "down", "left", "right", "noop")
PP_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

ENV_IDS = ("corridor-dodge", "pellet-pursuit")


@dataclass(frozen=True)
class CorridorState:
    agent_lane: int
    cars: tuple  # ((lane, row, speed), ...)
    t: int
    lcg: int


@dataclass(frozen=True)
class PelletState:
    agent: tuple  # (row, col) on the 16x16 grid
    chaser: tuple
    heading: tuple  # chaser's (drow, dcol)
    pellets: frozenset
    t: int
    lcg: int


def _lcg_bits(state: int, nbits: int) -> tuple[int, int]:
    """Advance the LCG once and return (new_state, top nbits)."""
    state = lcg_next(state)
    return state, state >> (64 - nbits)


def render_corridor(state: CorridorState) -> np.ndarray:
    f = np.zeros((FRAME_HW, FRAME_HW), dtype=np.float32)
    ys = CD_TOP + np.arange(CD_ROWS)
    # dashed lane markers on each lane's left edge, 2-on/2-off
    dash = ys[(np.arange(CD_ROWS) % 4) < 2]
    for lane in range(CD_LANES):
        f[dash, lane * CD_CELL_W] = MARKER_INTENSITY
    for lane, row, _speed in state.cars:
        if 0 <= row < CD_ROWS:
            x = lane * CD_CELL_W
            f[CD_TOP + row, x:x + CD_CELL_W] = CAR_INTENSITY
    x = state.agent_lane * CD_CELL_W
    f[CD_TOP + CD_AGENT_ROW, x:x + CD_CELL_W] = AGENT_INTENSITY
    return f


def render_pellet(state: PelletState) -> np.ndarray:
    g = np.zeros((PP_GRID, PP_GRID), dtype=np.float32)
    for r, c in state.pellets:
        g[r, c] = PELLET_INTENSITY
    g[state.chaser] = CHASER_INTENSITY
    g[state.agent] = AGENT_INTENSITY
    return np.kron(g, np.ones((2, 2), dtype=np.float32))


class CorridorDodge:
    """Lane-dodging game; see module docstring for the rules."""

    env_id = "corridor-dodge"
    n_actions = len(CD_ACTIONS)
    action_names = CD_ACTIONS
    step_cap = CD_STEP_CAP

    def __init__(self, spawn_period: int = 3, pre_roll: int = 24):
        if spawn_period < 1:
            raise ConfigError(f"spawn_period must be >= 1, got {spawn_period}")
        self.spawn_period = spawn_period
        self.pre_roll = pre_roll

    def _spawn(self, lcg: int, cars: tuple) -> tuple[int, tuple]:
        lcg, lane = _lcg_bits(lcg, 3)
        lcg, fast = _lcg_bits(lcg, 1)
        return lcg, cars + ((lane, 0, 1 + fast),)

    @staticmethod
    def _advance_cars(cars: tuple) -> tuple[tuple, int]:
        """Move cars down; returns (surviving cars, passes beyond the agent row)."""
        out = []
        passes = 0
        for lane, row, speed in cars:
            new = row + speed
            if new > CD_AGENT_ROW >= row:
                passes += 1
            if new < CD_ROWS:
                out.append((lane, new, speed))
        return tuple(out), passes

    def reset(self, seed: int) -> tuple[np.ndarray, CorridorState]:
        lcg = lcg_next(seed & 0xFFFFFFFFFFFFFFFF)
        lcg, lane = _lcg_bits(lcg, 3)
        cars: tuple = ()
        # pre-roll so the starting corridor already carries seed-dependent traffic
        for tick in range(1, self.pre_roll + 1):
            cars, _ = self._advance_cars(cars)
            if tick % self.spawn_period == 0:
                lcg, cars = self._spawn(lcg, cars)
        state = CorridorState(agent_lane=lane, cars=cars, t=0, lcg=lcg)
        return render_corridor(state), state

    def step(self, state: CorridorState, action: int) -> tuple[np.ndarray, float, bool, CorridorState]:
        if not 0 <= action < self.n_actions:
            raise ContractViolation(f"corridor-dodge action must be in [0,3), got {action}")
        lane = min(max(state.agent_lane + (action - 1), 0), CD_LANES - 1)
        cars, passes = self._advance_cars(state.cars)
        collided = any(c_lane == lane and row == CD_AGENT_ROW for c_lane, row, _ in cars)
        lcg = state.lcg
        t = state.t + 1
        if t % self.spawn_period == 0:
            lcg, cars = self._spawn(lcg, cars)
        reward = float(passes)
        if collided:
            reward -= 1.0
        else:
            reward += 0.05
        done = collided or t >= self.step_cap
        new = CorridorState(agent_lane=lane, cars=cars, t=t, lcg=lcg)
        return render_corridor(new), reward, done, new


class PelletPursuit:
    """Pellet-collection game; see module docstring for the rules."""

    env_id = "pellet-pursuit"
    n_actions = len(PP_ACTIONS)
    action_names = PP_ACTIONS
    step_cap = PP_STEP_CAP

    @staticmethod
    def _draw_cell(lcg: int) -> tuple[int, tuple]:
        lcg, byte = _lcg_bits(lcg, 8)
        return lcg, (byte >> 4, byte & 15)

    def reset(self, seed: int) -> tuple[np.ndarray, PelletState]:
        lcg = lcg_next(seed & 0xFFFFFFFFFFFFFFFF)
        lcg, agent = self._draw_cell(lcg)
        chaser = agent
        while max(abs(chaser[0] - agent[0]), abs(chaser[1] - agent[1])) < 6:
            lcg, chaser = self._draw_cell(lcg)
        taken = {agent, chaser}
        pellets = set()
        while len(pellets) < PP_N_PELLETS:
            lcg, cell = self._draw_cell(lcg)
            if cell not in taken:
                pellets.add(cell)
                taken.add(cell)
        state = PelletState(agent=agent, chaser=chaser, heading=(0, 0),
                            pellets=frozenset(pellets), t=0, lcg=lcg)
        return render_pellet(state), state

    def step(self, state: PelletState, action: int) -> tuple[np.ndarray, float, bool, PelletState]:
        if not 0 <= action < self.n_actions:
            raise ContractViolation(f"pellet-pursuit action must be in [0,5), got {action}")
        dr, dc = PP_MOVES[action]
        agent = (min(max(state.agent[0] + dr, 0), PP_GRID - 1),
                 min(max(state.agent[1] + dc, 0), PP_GRID - 1))
        reward = 0.0
        pellets = state.pellets
        if agent in pellets:
            reward += 1.0
            pellets = pellets - {agent}
        heading = state.heading
        if state.t % PP_REAIM_EVERY == 0:
            dr = agent[0] - state.chaser[0]
            dc = agent[1] - state.chaser[1]
            # aim along the longer axis; ties go horizontal
            if abs(dr) > abs(dc):
                heading = (1 if dr > 0 else -1, 0)
            else:
                heading = (0, 1 if dc > 0 else (-1 if dc < 0 else 0))
        chaser = (min(max(state.chaser[0] + heading[0], 0), PP_GRID - 1),
                  min(max(state.chaser[1] + heading[1], 0), PP_GRID - 1))
        caught = chaser == agent
        if caught:
            reward -= 1.0
        t = state.t + 1
        done = caught or t >= self.step_cap
        new = PelletState(agent=agent, chaser=chaser, heading=heading,
                          pellets=pellets, t=t, lcg=state.lcg)
        return render_pellet(new), reward, done, new


def make_env(env_id: str, **kwargs):
    if env_id == "corridor-dodge":
        return CorridorDodge(**kwargs)
    if env_id == "pellet-pursuit":
        return PelletPursuit(**kwargs)
    raise ConfigError(f"unknown env_id {env_id!r}, expected one of {ENV_IDS}")


def env_reset(env_id: str, seed: int):
    return make_env(env_id).reset(seed)


def env_step(state, action: int):
    if isinstance(state, CorridorState):
        return CorridorDodge().step(state, action)
    if isinstance(state, PelletState):
        return PelletPursuit().step(state, action)
    raise ContractViolation(f"not an environment state: {type(state).__name__}")


# ---------------------------------------------------------------------------
# frame stacking


@dataclass(frozen=True)
class StackedState:
    """The last m frames, oldest first, as one (m, H, W) float32 array."""

    frames: np.ndarray

    @property
    def m(self) -> int:
        return self.frames.shape[0]

    @staticmethod
    def from_frame(frame: np.ndarray, m: int) -> "StackedState":
        if frame.ndim != 2:
            raise DimensionError(f"frame must be 2-D, got shape {frame.shape}")
        return StackedState(np.repeat(frame[None].astype(np.float32), m, axis=0))


def stack_push(state: StackedState, frame: np.ndarray) -> StackedState:
    if frame.shape != state.frames.shape[1:]:
        raise DimensionError(
            f"frame shape {frame.shape} does not match stack {state.frames.shape[1:]}")
    return StackedState(np.concatenate([state.frames[1:], frame[None].astype(np.float32)], axis=0))


# ---------------------------------------------------------------------------
# frame interventions


@dataclass(frozen=True)
class InterventionScheme:
    """Frame indices (1 = oldest) whose foreground gets blacked out."""

    label: str
    frames: frozenset

    def __bool__(self) -> bool:
        return bool(self.frames)


SCHEME_NONE = InterventionScheme("None", frozenset())


def parse_scheme(text: str, m: int = 4) -> InterventionScheme:
    if text == "None":
        return SCHEME_NONE
    if not text or not text.isdigit():
        raise SchemeParseError(f"scheme must be 'None' or digits over 1..{m}, got {text!r}")
    digits = [int(ch) for ch in text]
    for prev, cur in zip(digits, digits[1:]):
        if cur <= prev:
            raise SchemeParseError(f"scheme digits must be strictly increasing, got {text!r}")
    if digits[0] < 1 or digits[-1] > m:
        raise SchemeParseError(f"scheme digits must lie in 1..{m}, got {text!r}")
    return InterventionScheme(text, frozenset(digits))


def foreground_mask(frame: np.ndarray) -> np.ndarray:
    """Pixels counted as scene content: at or above marker level, agent excluded."""
    return (frame >= FOREGROUND_MIN) & (frame != AGENT_INTENSITY)


def apply_intervention(state: StackedState, scheme: InterventionScheme) -> StackedState:
    if not scheme.frames:
        return state
    frames = state.frames.copy()
    for idx in scheme.frames:
        if not 1 <= idx <= state.m:
            raise SchemeParseError(f"scheme index {idx} outside 1..{state.m}")
        f = frames[idx - 1]
        f[foreground_mask(f)] = 0.0
    return StackedState(frames)
