"""Desk-scale 2D control environments, scripted experts, surrogate pilots.

Both arenas live in the unit box [-1, 1]^2 with point-mass dynamics at
dt = 0.05 and actions clipped to [-1, 1]^2.  The copilot-visible state is the
4-vector (x, y, vx, vy) in both environments: the landing-pad position and
the goal slot are pilot-only, which is what makes the expert action
distribution multi-modal from the copilot's point of view.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .persistence import TransitionDataset

DT = 0.05
GRAVITY = 0.65
PAD_HALF_WIDTH = 0.15
V_SAFE = 0.3
SLOT_HALF_WIDTH = 0.08
WALL_X = 0.8
LANDER_MAX_STEPS = 400
SLOT_MAX_STEPS = 200

SURROGATE_KINDS = ("noisy", "laggy", "noised", "slow")


class Outcome(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    CRASH = "crash"
    OUT_OF_BOUNDS = "out_of_bounds"
    TIMEOUT = "timeout"


class UsageError(RuntimeError):
    """Stepping a terminated episode, or similar caller mistakes."""


@dataclass(frozen=True)
class LanderState:
    x: float
    y: float
    vx: float
    vy: float
    pad_x: float  # pilot-visible only


@dataclass(frozen=True)
class SlotState:
    x: float
    y: float
    vx: float
    vy: float
    goal: int  # +1 upper slot, -1 lower slot; pilot-visible only


def copilot_view(state) -> np.ndarray:
    """Goal-agnostic 4-vector the copilot is allowed to see."""
    return np.array([state.x, state.y, state.vx, state.vy], dtype=np.float32)


def _clip_action(action) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(2)
    return np.clip(a, -1.0, 1.0)


class Lander2D:
    """Descend onto a pad: success needs pad contact at a gentle speed."""

    name = "lander"
    state_dim = 4
    action_dim = 2
    max_steps = LANDER_MAX_STEPS

    def __init__(self, gravity: float = GRAVITY):
        self.gravity = gravity
        self.state: LanderState | None = None
        self.steps = 0
        self.outcome = Outcome.RUNNING

    def reset(self, rng: np.random.Generator) -> LanderState:
        self.state = LanderState(
            x=float(rng.uniform(-0.6, 0.6)),
            y=0.9,
            vx=float(rng.uniform(-0.1, 0.1)),
            vy=float(rng.uniform(-0.1, 0.0)),
            pad_x=float(rng.uniform(-0.5, 0.5)),
        )
        self.steps = 0
        self.outcome = Outcome.RUNNING
        return self.state

    def step(self, action) -> tuple[LanderState, Outcome]:
        if self.state is None or self.outcome is not Outcome.RUNNING:
            raise UsageError("step() on a terminated or unreset episode")
        ax, ay = _clip_action(action)
        s = self.state
        vx = s.vx + ax * DT
        vy = s.vy + (ay - self.gravity) * DT
        x = s.x + vx * DT
        y = s.y + vy * DT
        self.steps += 1
        outcome = Outcome.RUNNING
        if y <= 0.0:
            on_pad = abs(x - s.pad_x) <= PAD_HALF_WIDTH
            gentle = abs(vy) <= V_SAFE
            outcome = Outcome.SUCCESS if (on_pad and gentle) else Outcome.CRASH
        elif abs(x) > 1.0 or y > 1.2:
            outcome = Outcome.OUT_OF_BOUNDS
        elif self.steps >= self.max_steps:
            outcome = Outcome.TIMEOUT
        self.state = replace(s, x=x, y=y, vx=vx, vy=vy)
        self.outcome = outcome
        return self.state, outcome

    def expert_action(self, state: LanderState) -> np.ndarray:
        """PD descent: track the pad horizontally, follow a slowing vertical
        velocity profile, and hold altitude while far off the pad line."""
        dx = state.pad_x - state.x
        ax = 3.0 * dx - 3.5 * state.vx
        gate = float(np.clip(1.5 - 3.0 * abs(dx), 0.0, 1.0))
        vy_des = -(0.05 + 0.30 * max(state.y, 0.0)) * gate + 0.02 * (1.0 - gate)
        ay = self.gravity + 4.0 * (vy_des - state.vy)
        return np.clip(np.array([ax, ay]), -1.0, 1.0)


class Slot2D:
    """Cross a slotted wall through the goal aperture.

    Crossing through the goal slot succeeds; crossing through the other slot
    leaves the arena (out of bounds); reaching the wall anywhere else is a
    crash.  This is what makes full conformity without intent risky: the
    nearest expert mode is not always the pilot's mode.
    """

    name = "slot"
    state_dim = 4
    action_dim = 2
    max_steps = SLOT_MAX_STEPS

    def __init__(self):
        self.state: SlotState | None = None
        self.steps = 0
        self.outcome = Outcome.RUNNING

    def reset(self, rng: np.random.Generator, goal: int | None = None) -> SlotState:
        if goal is None:
            goal = 1 if rng.random() < 0.5 else -1
        self.state = SlotState(
            x=-0.8,
            y=float(rng.uniform(-0.2, 0.2)),
            vx=0.0,
            vy=0.0,
            goal=int(goal),
        )
        self.steps = 0
        self.outcome = Outcome.RUNNING
        return self.state

    def step(self, action) -> tuple[SlotState, Outcome]:
        if self.state is None or self.outcome is not Outcome.RUNNING:
            raise UsageError("step() on a terminated or unreset episode")
        ax, ay = _clip_action(action)
        s = self.state
        vx = s.vx + ax * DT
        vy = s.vy + ay * DT
        x = s.x + vx * DT
        y = s.y + vy * DT
        self.steps += 1
        outcome = Outcome.RUNNING
        if s.x < WALL_X <= x:
            frac = (WALL_X - s.x) / (x - s.x)
            y_cross = s.y + frac * (y - s.y)
            goal_y = 0.5 * s.goal
            if abs(y_cross - goal_y) <= SLOT_HALF_WIDTH:
                outcome = Outcome.SUCCESS
            elif abs(y_cross + goal_y) <= SLOT_HALF_WIDTH:
                outcome = Outcome.OUT_OF_BOUNDS  # left through the wrong slot
            else:
                outcome = Outcome.CRASH
        elif abs(y) > 1.0 or x < -1.0:
            outcome = Outcome.OUT_OF_BOUNDS
        elif self.steps >= self.max_steps:
            outcome = Outcome.TIMEOUT
        self.state = replace(s, x=x, y=y, vx=vx, vy=vy)
        self.outcome = outcome
        return self.state, outcome

    def expert_action(self, state: SlotState) -> np.ndarray:
        """Line up with the goal aperture, then drive through it."""
        goal_y = 0.5 * state.goal
        dy = goal_y - state.y
        ay = 4.0 * dy - 4.0 * state.vy
        vx_des = 0.5 * np.exp(-((dy / 0.1) ** 2)) + 0.05
        ax = 5.0 * (vx_des - state.vx)
        return np.clip(np.array([ax, ay]), -1.0, 1.0)


def make_env(name: str):
    if name == "lander":
        return Lander2D()
    if name == "slot":
        return Slot2D()
    raise ValueError(f"unknown environment {name!r}")


def surrogate_action(kind: str, epsilon: float, a_e: np.ndarray,
                     a_prev: np.ndarray | None,
                     rng: np.random.Generator) -> np.ndarray:
    """Corrupt an expert action with one of the four flaw rules.

    noisy:  random action with probability epsilon
    laggy:  previous surrogate action with probability epsilon
    noised: additive N(0, epsilon) noise (epsilon is a standard deviation)
    slow:   scaled to (1 - epsilon)

    The result is clipped to the action box.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon} outside [0, 1]")
    a_e = np.asarray(a_e, dtype=np.float64).reshape(2)
    if kind == "noisy":
        a = rng.uniform(-1.0, 1.0, size=2) if rng.random() < epsilon else a_e
    elif kind == "laggy":
        use_prev = rng.random() < epsilon
        a = a_prev if (use_prev and a_prev is not None) else a_e
    elif kind == "noised":
        a = a_e + rng.normal(0.0, epsilon, size=2)
    elif kind == "slow":
        a = (1.0 - epsilon) * a_e
    else:
        raise ValueError(f"unknown surrogate kind {kind!r}")
    return np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)


class ExpertPilot:
    """Scripted expert wrapped as a pilot callable."""

    def __init__(self, env):
        self.env = env

    def reset(self):
        pass

    def __call__(self, state) -> np.ndarray:
        return self.env.expert_action(state)


class SurrogatePilot:
    """Flawed pilot: applies one corruption rule on top of the expert."""

    def __init__(self, env, kind: str, epsilon: float, rng: np.random.Generator):
        if kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate kind {kind!r}")
        self.env = env
        self.kind = kind
        self.epsilon = epsilon
        self.rng = rng
        self.a_prev: np.ndarray | None = None

    def reset(self):
        self.a_prev = None

    def __call__(self, state) -> np.ndarray:
        a_e = self.env.expert_action(state)
        a_u = surrogate_action(self.kind, self.epsilon, a_e, self.a_prev, self.rng)
        self.a_prev = a_u
        return a_u


def run_pilot_episode(env, pilot, rng: np.random.Generator,
                      copilot=None, alpha: float = 0.0,
                      goal: int | None = None):
    """Roll one episode; returns (outcome, transitions) with copilot-view
    states.  Lightweight sibling of the eval harness used for calibration
    and data collection."""
    if isinstance(env, Slot2D) and goal is not None:
        state = env.reset(rng, goal=goal)
    else:
        state = env.reset(rng)
    pilot.reset()
    transitions = []
    outcome = Outcome.RUNNING
    while outcome is Outcome.RUNNING:
        a_u = pilot(state)
        if copilot is not None:
            view = copilot_view(state)
            a_exec = copilot.assist(view, a_u, alpha).action
        else:
            a_exec = a_u
        prev_view = copilot_view(state)
        state, outcome = env.step(a_exec)
        transitions.append((prev_view, np.asarray(a_exec, dtype=np.float32),
                            copilot_view(state)))
    return outcome, transitions


def measure_success(env, make_pilot, episodes: int, seed: int) -> float:
    """Unassisted success rate over seeded episodes."""
    wins = 0
    for i in range(episodes):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        pilot = make_pilot(rng)
        outcome, _ = run_pilot_episode(env, pilot, rng)
        wins += outcome is Outcome.SUCCESS
    return wins / episodes


def calibrate_epsilon(env, kind: str, episodes: int = 300, seed: int = 0,
                      target: tuple[float, float] = (0.15, 0.25),
                      max_iters: int = 12) -> tuple[float, float]:
    """Bisect the flaw level until unassisted success lands in the target band.

    Assumes success is (statistically) non-increasing in epsilon.  If the
    band cannot be hit, returns the closest point probed.
    """

    def success_at(eps: float) -> float:
        return measure_success(
            env, lambda rng: SurrogatePilot(env, kind, eps, rng), episodes, seed)

    lo, hi = 0.0, 1.0
    best = (None, np.inf)
    s_hi = success_at(hi)
    if s_hi > target[1]:
        return hi, s_hi  # even max flaw is above the band; report nearest
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        s = success_at(mid)
        gap = max(target[0] - s, s - target[1], 0.0)
        if gap == 0.0:
            return mid, s
        if gap < best[1]:
            best = ((mid, s), gap)
        if s > target[1]:
            lo = mid
        else:
            hi = mid
    return best[0]


def collect_dataset(env, n_transitions: int, rng: np.random.Generator,
                    min_rate: float = 0.10) -> TransitionDataset:
    """Expert rollouts with rejection: only success-terminated episodes kept.

    Slot2D collection alternates the goal so both action modes appear in
    roughly equal measure.  Aborts if the expert's success rate is degenerate.
    """
    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    pilot = ExpertPilot(env)
    slot = isinstance(env, Slot2D)
    buckets = {1: [], -1: []} if slot else {0: []}
    attempts = 0
    successes = 0
    next_goal = 1
    while sum(len(b) for b in buckets.values()) < n_transitions:
        goal = next_goal if slot else None
        if slot:
            next_goal = -next_goal
        outcome, transitions = run_pilot_episode(env, pilot, rng, goal=goal)
        attempts += 1
        if outcome is Outcome.SUCCESS:
            successes += 1
            buckets[goal if slot else 0].extend(transitions)
        if attempts >= 20 and successes / attempts < min_rate:
            raise RuntimeError(
                f"expert success rate {successes}/{attempts} below "
                f"{min_rate:.0%}; refusing to collect a degenerate dataset")
    rows = []
    if slot:
        # trim the larger side first so the two modes stay balanced
        excess = sum(len(b) for b in buckets.values()) - n_transitions
        while excess > 0:
            larger = max(buckets, key=lambda g: len(buckets[g]))
            buckets[larger].pop()
            excess -= 1
        for g in (1, -1):
            rows.extend(buckets[g])
    else:
        rows = buckets[0][:n_transitions]
    states = np.stack([r[0] for r in rows])
    actions = np.stack([r[1] for r in rows])
    next_states = np.stack([r[2] for r in rows])
    return TransitionDataset(states, actions, next_states)
