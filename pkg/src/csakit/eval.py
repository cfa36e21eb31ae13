"""Rollout harness, metrics aggregation, alpha sweeps, latency benchmarks.

Episodes are deterministic given their seed; metrics are pure functions of the
recorded episodes, so re-aggregating the same records reproduces the tables.
Function-evaluation counts come from instrumented counters, never estimates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .envs import (ExpertPilot, Outcome, Slot2D, SurrogatePilot, copilot_view,
                   make_env)
from .student import (AssistRequest, AssistResult, DdpmModel, ForwardModel,
                      StudentModel, csa_assist, ddpm_assist)

TABLE_COLUMNS = ("pilot", "copilot", "alpha", "success_mean", "success_std",
                 "crash_mean", "crash_std", "nfe", "lat_p50_us", "lat_p99_us")


class NoneCopilot:
    """Pass-through copilot: assisted action equals the raw action."""

    name = "none"

    def assist(self, state_vec, a_u, alpha) -> AssistResult:
        start = time.perf_counter_ns()
        a = np.asarray(a_u, dtype=np.float32).copy()
        return AssistResult(action=a, nfe=0,
                            latency_us=(time.perf_counter_ns() - start) / 1000.0)

    def reseed(self, seed):
        pass


class CsaCopilot:
    """One-step consistency copilot (plain or intent-conditioned)."""

    def __init__(self, student: StudentModel, phi: ForwardModel | None = None):
        self.student = student
        self.phi = phi
        self.name = student.cfg.mode

    def assist(self, state_vec, a_u, alpha) -> AssistResult:
        return csa_assist(self.student, self.phi,
                          AssistRequest(s=state_vec, a_u=a_u, alpha=alpha))

    def reseed(self, seed):
        pass


class DdpmCopilot:
    """Partial-diffusion baseline copilot; stochastic, so it owns an rng."""

    name = "ddpm"

    def __init__(self, model: DdpmModel, seed: int = 0):
        self.model = model
        self.rng = np.random.default_rng(seed)

    def assist(self, state_vec, a_u, alpha) -> AssistResult:
        return ddpm_assist(self.model, state_vec, a_u, alpha, self.rng)

    def reseed(self, seed):
        self.rng = np.random.default_rng(seed)


@dataclass
class EpisodeRecord:
    outcome: Outcome
    steps: int
    raw_actions: list
    assisted_actions: list
    nfe: int
    latencies_us: list


def rollout(env, pilot, copilot, alpha: float, seed: int,
            goal: int | None = None) -> EpisodeRecord:
    """One assisted episode: pilot sees the full state, the copilot only its
    goal-agnostic view."""
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    if isinstance(env, Slot2D) and goal is not None:
        state = env.reset(rng, goal=goal)
    else:
        state = env.reset(rng)
    pilot.reset()
    if copilot is not None:
        copilot.reseed(seed)
    raw, assisted, lats = [], [], []
    nfe = 0
    outcome = Outcome.RUNNING
    while outcome is Outcome.RUNNING:
        a_u = np.asarray(pilot(state), dtype=np.float32)
        if copilot is not None:
            res = copilot.assist(copilot_view(state), a_u, alpha)
            a_exec = res.action
            nfe += res.nfe
            lats.append(res.latency_us)
        else:
            a_exec = a_u
        raw.append(a_u)
        assisted.append(np.asarray(a_exec, dtype=np.float32))
        state, outcome = env.step(a_exec)
    return EpisodeRecord(outcome=outcome, steps=env.steps, raw_actions=raw,
                         assisted_actions=assisted, nfe=nfe, latencies_us=lats)


@dataclass(frozen=True)
class EvalConfig:
    env_name: str = "lander"
    pilot_kind: str = "noised"      # surrogate kind or "expert"
    epsilon: float = 0.0
    copilot_name: str = "none"
    alpha: float = 0.0
    seeds: int = 10
    rollouts: int = 30


@dataclass
class MetricsRow:
    pilot: str
    copilot: str
    alpha: float
    success_mean: float
    success_std: float
    crash_mean: float
    crash_std: float
    nfe: float
    lat_p50_us: float
    lat_p99_us: float

    def as_tuple(self):
        return (self.pilot, self.copilot, self.alpha, self.success_mean,
                self.success_std, self.crash_mean, self.crash_std, self.nfe,
                self.lat_p50_us, self.lat_p99_us)


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [",".join(TABLE_COLUMNS)]
        for r in self.rows:
            vals = r.as_tuple()
            lines.append(",".join(
                f"{v:.4f}" if isinstance(v, float) else str(v) for v in vals))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        widths = [max(len(c), 12) for c in TABLE_COLUMNS]
        head = "  ".join(c.ljust(w) for c, w in zip(TABLE_COLUMNS, widths))
        lines = [head, "-" * len(head)]
        for r in self.rows:
            cells = []
            for v, w in zip(r.as_tuple(), widths):
                cells.append((f"{v:.4f}" if isinstance(v, float) else str(v)).ljust(w))
            lines.append("  ".join(cells))
        return "\n".join(lines) + "\n"


def _make_pilot(env, kind: str, epsilon: float, rng: np.random.Generator):
    if kind == "expert":
        return ExpertPilot(env)
    return SurrogatePilot(env, kind, epsilon, rng)


def evaluate(cfg: EvalConfig, copilot=None, base_seed: int = 0) -> MetricsRow:
    """Run the seeds x rollouts grid for one configuration.

    Per-seed success/crash rates are aggregated as mean +/- std over seeds;
    identical configs produce identical rows.
    """
    env = make_env(cfg.env_name)
    succ_rates, crash_rates = [], []
    nfes, lats = [], []
    for s in range(cfg.seeds):
        wins = crashes = 0
        for r in range(cfg.rollouts):
            ep_seed = int(np.random.SeedSequence([base_seed, s, r]).generate_state(1)[0])
            pilot_rng = np.random.default_rng(
                np.random.SeedSequence([base_seed, s, r, 1]))
            pilot = _make_pilot(env, cfg.pilot_kind, cfg.epsilon, pilot_rng)
            rec = rollout(env, pilot, copilot, cfg.alpha, ep_seed)
            wins += rec.outcome is Outcome.SUCCESS
            crashes += rec.outcome is Outcome.CRASH
            if rec.latencies_us:
                nfes.append(rec.nfe / rec.steps)
                lats.extend(rec.latencies_us)
        succ_rates.append(100.0 * wins / cfg.rollouts)
        crash_rates.append(100.0 * crashes / cfg.rollouts)
    lat_arr = np.array(lats) if lats else np.array([0.0])
    return MetricsRow(
        pilot=cfg.pilot_kind,
        copilot=cfg.copilot_name if copilot is not None else "none",
        alpha=cfg.alpha,
        success_mean=float(np.mean(succ_rates)),
        success_std=float(np.std(succ_rates)),
        crash_mean=float(np.mean(crash_rates)),
        crash_std=float(np.std(crash_rates)),
        nfe=float(np.mean(nfes)) if nfes else 0.0,
        lat_p50_us=float(np.percentile(lat_arr, 50)),
        lat_p99_us=float(np.percentile(lat_arr, 99)),
    )


def alpha_sweep(cfg: EvalConfig, alphas, copilot=None,
                base_seed: int = 0) -> MetricsTable:
    """One metrics row per assistance level."""
    table = MetricsTable()
    for alpha in alphas:
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha {alpha} outside [0, 1]")
        row_cfg = EvalConfig(**{**cfg.__dict__, "alpha": float(alpha)})
        table.rows.append(evaluate(row_cfg, copilot, base_seed))
    return table


def latency_bench(copilot, state_vec, a_u, alpha: float, n_calls: int = 200,
                  warmup: int = 20) -> dict:
    """Wall-clock per-call latency percentiles plus exact NFE per call."""
    for _ in range(warmup):
        copilot.assist(state_vec, a_u, alpha)
    lats = []
    nfes = []
    for _ in range(n_calls):
        res = copilot.assist(state_vec, a_u, alpha)
        lats.append(res.latency_us)
        nfes.append(res.nfe)
    lats = np.array(lats)
    return {
        "nfe": int(nfes[0]) if len(set(nfes)) == 1 else float(np.mean(nfes)),
        "lat_p50_us": float(np.percentile(lats, 50)),
        "lat_p99_us": float(np.percentile(lats, 99)),
        "lat_mean_us": float(np.mean(lats)),
        "n_calls": n_calls,
    }
