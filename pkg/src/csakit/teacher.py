"""Multi-step teacher denoiser: training, denoising, Heun stepping, sampling.

The teacher predicts a clean action from a noisy one at a known ladder rung,
conditioned on the state (cond1) and optionally on the observed state-change
direction (cond2).  Its loss reweights the per-sample residual with a small
learnable function of the noise level:

    loss = exp(lam(sigma)) * |a - D|_2 - lam(sigma)

with the residual unsquared as the default (a config flag selects the squared
variant).  cond2 is dropped with probability gamma during training so the
same network serves both conditioning modes at inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .persistence import Checkpoint, TransitionDataset
from .schedule import (ScheduleParams, karras_sigma, log_sigma_unit,
                       precond_edm, sigma_ladder)

LAMBDA_CLAMP = 10.0
_ZERO_DIR_EPS = 1e-8


class NfeCounter:
    """Counts denoiser network evaluations (one per forward invocation)."""

    def __init__(self):
        self.n = 0

    def add(self, k: int = 1):
        self.n += k


def direction_condition(s: np.ndarray, s_n: np.ndarray) -> np.ndarray:
    """Unit state-change direction; degenerate rows become zero vectors.

    A zero row is equivalent to cond2 being absent (its projection has no
    bias), which is how stationary transitions are treated.
    """
    s = np.atleast_2d(s)
    s_n = np.atleast_2d(s_n)
    delta = s_n - s
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    out = np.where(norms > _ZERO_DIR_EPS, delta / np.maximum(norms, _ZERO_DIR_EPS), 0.0)
    return out.astype(delta.dtype)


@dataclass(frozen=True)
class TeacherConfig:
    state_dim: int
    action_dim: int
    hidden: int = 128
    layers: int = 3
    feat_dim: int = 8
    lam_hidden: int = 16
    gamma: float = 0.3            # cond2 dropout probability
    # Squared residual is the default: the closed-form optimum the oracle
    # computes is the mean (squared-loss minimizer); the unsquared variant
    # trains toward the conditional median and drifts off the oracle field.
    squared_residual: bool = True
    schedule: ScheduleParams = field(default_factory=ScheduleParams)

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")

    def mlp_config(self) -> nn.MlpConfig:
        return nn.MlpConfig(
            in_dim=self.action_dim, out_dim=self.action_dim,
            hidden=self.hidden, layers=self.layers,
            cond_dim=self.state_dim, cond2_dim=self.state_dim,
            feat_dim=self.feat_dim)


def _init_lambda_params(lam_hidden: int, rng: np.random.Generator, dtype=np.float32):
    return {
        "w1": (rng.standard_normal((1, lam_hidden))).astype(dtype),
        "b1": np.zeros(lam_hidden, dtype=dtype),
        "w2": (rng.standard_normal((lam_hidden, 1)) / np.sqrt(lam_hidden)).astype(dtype),
        "b2": np.zeros(1, dtype=dtype),
    }


def lambda_forward(lam_params: dict, u: np.ndarray, want_cache=False):
    """Adaptive weight lam(u); softly clamped to (-10, 10) so its gradient
    never vanishes to exactly zero inside the working range."""
    u = np.atleast_1d(np.asarray(u))
    z1 = u[:, None] @ lam_params["w1"] + lam_params["b1"]
    a1 = np.tanh(z1)
    raw = (a1 @ lam_params["w2"] + lam_params["b2"])[:, 0]
    th = np.tanh(raw / LAMBDA_CLAMP)
    lam = LAMBDA_CLAMP * th
    if want_cache:
        return lam, {"u": u, "a1": a1, "th": th}
    return lam


def lambda_backward(lam_params: dict, cache: dict, dlam: np.ndarray) -> dict:
    draw = dlam * (1.0 - cache["th"] ** 2)
    da1 = draw[:, None] @ lam_params["w2"].T
    dz1 = da1 * (1.0 - cache["a1"] ** 2)
    return {
        "w2": cache["a1"].T @ draw[:, None],
        "b2": np.array([draw.sum()], dtype=draw.dtype),
        "w1": cache["u"][:, None].T @ dz1,
        "b1": dz1.sum(axis=0),
    }


class TeacherModel:
    """Frozen or in-training teacher; read-only from concurrent callers."""

    def __init__(self, cfg: TeacherConfig, params: dict, lam_params: dict):
        self.cfg = cfg
        self.params = params
        self.lam_params = lam_params
        self.schedule = cfg.schedule
        T = cfg.schedule.T
        self.sigmas = sigma_ladder(cfg.schedule)
        self.u = np.array([log_sigma_unit(s, cfg.schedule) for s in self.sigmas])
        pc = [precond_edm(s, cfg.schedule.sigma_data) for s in self.sigmas]
        self.c_in = np.array([c.c_in for c in pc])
        self.c_skip = np.array([c.c_skip for c in pc])
        self.c_out = np.array([c.c_out for c in pc])
        assert len(self.sigmas) == T

    def denoise(self, a_t, t, cond1, cond2=None, counter: NfeCounter | None = None):
        return teacher_denoise(self, a_t, t, cond1, cond2, counter)


def _as_batch(a):
    a = np.asarray(a)
    return (a[None, :], True) if a.ndim == 1 else (a, False)


def teacher_denoise(model: TeacherModel, a_t, t, cond1, cond2=None,
                    counter: NfeCounter | None = None):
    """Denoised action D = c_out * F(c_in * a_t, t, cond) + c_skip * a_t.

    ``t`` may be a scalar rung or a per-sample array of rungs.
    """
    a_t, single = _as_batch(a_t)
    cond1 = np.atleast_2d(cond1)
    t_idx = np.asarray(t, dtype=int)
    c_in = model.c_in[t_idx].reshape(-1, 1).astype(a_t.dtype)
    c_skip = model.c_skip[t_idx].reshape(-1, 1).astype(a_t.dtype)
    c_out = model.c_out[t_idx].reshape(-1, 1).astype(a_t.dtype)
    u = model.u[t_idx].reshape(-1).astype(a_t.dtype)
    if u.shape[0] == 1 and a_t.shape[0] > 1:
        u = np.repeat(u, a_t.shape[0])
    out = nn.mlp_forward(model.params, model.cfg.mlp_config(),
                         c_in * a_t, u, cond1, cond2)
    if counter is not None:
        counter.add(1)
    d = c_out * out + c_skip * a_t
    return d[0] if single else d


def teacher_loss(model: TeacherModel, batch: TransitionDataset,
                 rng: np.random.Generator):
    """Mean adaptive-weighted denoising loss and gradients.

    Per sample: draw a rung uniformly, perturb the action with that rung's
    noise, drop cond2 with probability gamma, and score the denoised output.
    Returns (loss, grads) with lambda-net gradients under the "lam." prefix.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    cond2 = direction_condition(batch.states, batch.next_states)
    return _teacher_loss_arrays(model, batch.states, batch.actions, cond2, rng)


def _teacher_loss_arrays(model: TeacherModel, s, a, cond2_raw,
                         rng: np.random.Generator):
    cfg = model.cfg
    B = len(a)
    dtype = model.params["in.w"].dtype
    a = np.asarray(a, dtype=dtype)
    s = np.asarray(s, dtype=dtype)
    t_idx = rng.integers(0, cfg.schedule.T, size=B)
    z = rng.standard_normal((B, cfg.action_dim)).astype(dtype)
    sig = model.sigmas[t_idx].reshape(-1, 1).astype(dtype)
    a_t = a + sig * z

    keep = (rng.random(B) >= cfg.gamma).astype(dtype)
    cond2 = np.asarray(cond2_raw, dtype=dtype) * keep[:, None]

    c_in = model.c_in[t_idx].reshape(-1, 1).astype(dtype)
    c_skip = model.c_skip[t_idx].reshape(-1, 1).astype(dtype)
    c_out = model.c_out[t_idx].reshape(-1, 1).astype(dtype)
    u = model.u[t_idx].astype(dtype)

    mlp_cfg = cfg.mlp_config()
    out, cache = nn.mlp_forward(model.params, mlp_cfg, c_in * a_t, u, s, cond2,
                                want_cache=True)
    d = c_out * out + c_skip * a_t
    lam, lam_cache = lambda_forward(model.lam_params, u, want_cache=True)

    resid = a - d
    if cfg.squared_residual:
        # squared residual normalized per rung by c_out^2 (the standard
        # denoiser loss weight of the preconditioning framework): residuals
        # are O(1) at every sigma, so the adaptive weight's equilibrium
        # -ln(residual) stays inside the clamp and no rung starves another
        r = np.sum(resid * resid, axis=-1) / (c_out[:, 0] ** 2)
    else:
        # the as-printed variant: raw unsquared distance, no pre-weight
        r = np.linalg.norm(resid, axis=-1)
    w = np.exp(lam)
    loss = float(np.mean(w * r - lam))

    if cfg.squared_residual:
        dl_dd = (w[:, None] / (c_out ** 2) * 2.0 * (d - a)) / B
    else:
        safe_r = np.maximum(r, 1e-12)
        dl_dd = (w[:, None] * (d - a) / safe_r[:, None]) / B
    d_out = dl_dd * c_out
    grads, _ = nn.mlp_backward(model.params, mlp_cfg, cache, d_out.astype(dtype))
    dlam = (w * r - 1.0) / B
    lam_grads = lambda_backward(model.lam_params, lam_cache, dlam.astype(dtype))
    for k, g in lam_grads.items():
        grads[f"lam.{k}"] = g
    return loss, grads


def heun_step(model, a_t, t: int, cond1, cond2=None,
              counter: NfeCounter | None = None):
    """One predictor-corrector flow step to the adjacent less-noisy rung.

    Consumes rung t and produces the action at rung t + 1 (smaller sigma).
    Stepping from the schedule floor is a domain error.  Two denoiser
    evaluations per call.
    """
    T = model.schedule.T
    if t < 0 or t >= T - 1:
        raise ValueError(f"cannot Heun-step from rung {t}; valid rungs are 0..{T - 2}")
    sigma_from = karras_sigma(t, model.schedule)
    sigma_to = karras_sigma(t + 1, model.schedule)
    d1 = (a_t - model.denoise(a_t, t, cond1, cond2, counter)) / sigma_from
    h = sigma_to - sigma_from
    a_pred = a_t + h * d1
    d2 = (a_pred - model.denoise(a_pred, t + 1, cond1, cond2, counter)) / sigma_to
    return a_t + h * 0.5 * (d1 + d2)


def teacher_sample(model: TeacherModel, cond1, cond2=None, a_init=None,
                   t_init: int = 0, rng: np.random.Generator | None = None,
                   counter: NfeCounter | None = None):
    """Full recursive sampling down the remaining ladder.

    Returns (action, nfe).  nfe is exactly 2 per Heun step; t_init = T-1
    returns a_init untouched with nfe = 0.
    """
    T = model.schedule.T
    if t_init < 0 or t_init > T - 1:
        raise ValueError(f"t_init {t_init} outside [0, {T - 1}]")
    if a_init is None:
        if rng is None:
            raise ValueError("a_init or rng is required")
        a_init = (karras_sigma(t_init, model.schedule)
                  * rng.standard_normal(model.cfg.action_dim)).astype(np.float32)
    local = NfeCounter()
    a = np.asarray(a_init)
    for t in range(t_init, T - 1):
        a = heun_step(model, a, t, cond1, cond2, local)
    if counter is not None:
        counter.add(local.n)
    return a, local.n


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    batch: int = 256
    steps: int = 20000
    val_fraction: float = 0.1
    val_every: int = 1000
    patience: int = 0             # 0 disables early stopping
    seed: int = 0
    lr_decay: bool = True         # cosine decay to lr/100 over the run
    ema_decay: float = 0.9998     # weight averaging for the returned model,
                                  # ramped from 0; 0 keeps raw online weights


def _cosine_lr(cfg: TrainConfig, step: int) -> float:
    if not cfg.lr_decay:
        return cfg.lr
    frac = step / max(1, cfg.steps)
    return cfg.lr * (0.01 + 0.99 * 0.5 * (1 + np.cos(np.pi * frac)))


def _ema_decay_at(decay_max: float, step: int) -> float:
    # ramp from 0 so the average forgets the random init quickly
    return min(decay_max, (step + 1) / (step + 10))


def validation_denoise_error(model: TeacherModel, val: TransitionDataset,
                             seed: int = 1234) -> float:
    """Mean residual over the val set at fixed rungs and frozen noise draws."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(val.actions.shape).astype(np.float32)
    T = model.schedule.T
    t_idx = np.arange(len(val)) % T
    sig = model.sigmas[t_idx].reshape(-1, 1).astype(np.float32)
    a_t = val.actions + sig * z
    cond2 = direction_condition(val.states, val.next_states)
    d = teacher_denoise(model, a_t, t_idx, val.states, cond2)
    return float(np.mean(np.linalg.norm(val.actions - d, axis=-1)))


def teacher_train(ds: TransitionDataset, cfg: TeacherConfig,
                  train_cfg: TrainConfig = TrainConfig()):
    """Train a teacher; deterministic given the seed.

    Returns (model, history) where history is the validation-error trace
    [(step, val_error), ...].
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    if ds.state_dim != cfg.state_dim or ds.action_dim != cfg.action_dim:
        raise ValueError("dataset dims disagree with model config")
    rng = np.random.default_rng(train_cfg.seed)
    params = nn.init_params(cfg.mlp_config(), rng)
    lam_params = _init_lambda_params(cfg.lam_hidden, rng)
    model = TeacherModel(cfg, params, lam_params)

    train, val = ds.split(train_cfg.val_fraction, rng)
    if len(train) == 0:
        train = ds
    all_params = {**params, **{f"lam.{k}": v for k, v in lam_params.items()}}
    opt = nn.adam_init(all_params, lr=train_cfg.lr)
    ema = {k: v.copy() for k, v in params.items()} if train_cfg.ema_decay else None

    t_states = train.states.astype(np.float32)
    t_actions = train.actions.astype(np.float32)
    t_cond2 = direction_condition(t_states, train.next_states.astype(np.float32))

    history = []
    best = np.inf
    stale = 0
    for step in range(train_cfg.steps):
        idx = rng.integers(0, len(train), size=min(train_cfg.batch, len(train)))
        _, grads = _teacher_loss_arrays(model, t_states[idx], t_actions[idx],
                                        t_cond2[idx], rng)
        nn.adam_update(all_params, grads, opt, lr=_cosine_lr(train_cfg, step))
        if ema is not None:
            d = _ema_decay_at(train_cfg.ema_decay, step)
            for k, v in params.items():
                ema[k] = (d * ema[k] + (1.0 - d) * v).astype(v.dtype)
        if (step + 1) % train_cfg.val_every == 0 or step + 1 == train_cfg.steps:
            err = validation_denoise_error(model, val if len(val) else train)
            history.append((step + 1, err))
            if err < best - 1e-6:
                best, stale = err, 0
            else:
                stale += 1
                if train_cfg.patience and stale >= train_cfg.patience:
                    break
    if ema is not None:
        model = TeacherModel(cfg, ema, lam_params)
    return model, history


def teacher_to_checkpoint(model: TeacherModel, meta: dict | None = None) -> Checkpoint:
    arrays = dict(model.params)
    arrays.update({f"lam.{k}": v for k, v in model.lam_params.items()})
    cfg = model.cfg
    return Checkpoint(
        kind="teacher",
        arrays=arrays,
        schedule=cfg.schedule.to_dict(),
        config={
            "state_dim": cfg.state_dim, "action_dim": cfg.action_dim,
            "hidden": cfg.hidden, "layers": cfg.layers,
            "feat_dim": cfg.feat_dim, "lam_hidden": cfg.lam_hidden,
            "gamma": cfg.gamma, "squared_residual": cfg.squared_residual,
        },
        meta=meta or {},
    )


def teacher_from_checkpoint(ckpt: Checkpoint) -> TeacherModel:
    if ckpt.kind != "teacher":
        raise ValueError(f"expected a teacher checkpoint, got {ckpt.kind!r}")
    c = ckpt.config
    cfg = TeacherConfig(
        state_dim=int(c["state_dim"]), action_dim=int(c["action_dim"]),
        hidden=int(c["hidden"]), layers=int(c["layers"]),
        feat_dim=int(c["feat_dim"]), lam_hidden=int(c["lam_hidden"]),
        gamma=float(c["gamma"]), squared_residual=bool(c["squared_residual"]),
        schedule=ScheduleParams.from_dict(ckpt.schedule),
    )
    params = {k: v for k, v in ckpt.arrays.items() if not k.startswith("lam.")}
    lam_params = {k[4:]: v for k, v in ckpt.arrays.items() if k.startswith("lam.")}
    return TeacherModel(cfg, params, lam_params)
