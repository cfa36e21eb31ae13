"""One-step copilot: consistency student, forward model, assist paths.

The student maps any rung of the flow to the clean action in a single network
evaluation.  Its parameterization is the identity at the schedule floor, so
assistance level alpha = 0 returns the user action bit-for-bit.  The
assistance level picks the rung: alpha = 0 maps to the sigma_min rung and
alpha = 1 to the sigma_max rung.

Also hosts the partial-diffusion baseline copilot (ancestral reverse steps
with fresh noise), which exists to contrast one-evaluation inference against
k-evaluation inference and ODE mode-seeking against SDE mode-hopping.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .persistence import Checkpoint, TransitionDataset
from .schedule import ScheduleParams, karras_sigma, log_sigma_unit, precond_cm_boundary
from .teacher import (NfeCounter, TeacherModel, direction_condition, heun_step,
                      TrainConfig, _cosine_lr)

MODE_CSA = "csa"
MODE_CSA_DAGGER = "csa_dagger"


@dataclass(frozen=True)
class StudentConfig:
    state_dim: int
    action_dim: int
    mode: str = MODE_CSA
    hidden: int = 128
    layers: int = 3
    feat_dim: int = 8
    schedule: ScheduleParams = field(default_factory=ScheduleParams)

    def __post_init__(self):
        if self.mode not in (MODE_CSA, MODE_CSA_DAGGER):
            raise ValueError(f"unknown mode {self.mode!r}")

    def mlp_config(self) -> nn.MlpConfig:
        return nn.MlpConfig(
            in_dim=self.action_dim, out_dim=self.action_dim,
            hidden=self.hidden, layers=self.layers,
            cond_dim=self.state_dim,
            cond2_dim=self.state_dim if self.mode == MODE_CSA_DAGGER else 0,
            feat_dim=self.feat_dim)


class StudentModel:
    def __init__(self, cfg: StudentConfig, params: dict):
        self.cfg = cfg
        self.params = params
        self.schedule = cfg.schedule
        self.sigmas = np.array([karras_sigma(t, cfg.schedule)
                                for t in range(cfg.schedule.T)])
        self.u = np.array([log_sigma_unit(s, cfg.schedule) for s in self.sigmas])
        pc = [precond_cm_boundary(s, cfg.schedule) for s in self.sigmas]
        self.c_in = np.array([c.c_in for c in pc])
        self.c_skip = np.array([c.c_skip for c in pc])
        self.c_out = np.array([c.c_out for c in pc])


def consistency_denoise(model: StudentModel, a_t, t, cond1, cond2=None,
                        counter: NfeCounter | None = None,
                        params: dict | None = None, want_cache: bool = False):
    """Single-evaluation jump to the clean action from rung t.

    Exactly one network evaluation per call.  At the floor rung the boundary
    parameterization makes this the identity on a_t.
    """
    p = model.params if params is None else params
    a_t = np.asarray(a_t)
    single = a_t.ndim == 1
    a_b = np.atleast_2d(a_t)
    cond1 = np.atleast_2d(cond1)
    t_idx = np.asarray(t, dtype=int)
    dtype = a_b.dtype if a_b.dtype.kind == "f" else np.float32
    c_in = model.c_in[t_idx].reshape(-1, 1).astype(dtype)
    c_skip = model.c_skip[t_idx].reshape(-1, 1).astype(dtype)
    c_out = model.c_out[t_idx].reshape(-1, 1).astype(dtype)
    u = model.u[t_idx].reshape(-1).astype(dtype)
    if u.shape[0] == 1 and a_b.shape[0] > 1:
        u = np.repeat(u, a_b.shape[0])
    cond2_in = cond2 if model.cfg.mode == MODE_CSA_DAGGER else None
    res = nn.mlp_forward(p, model.cfg.mlp_config(), c_in * a_b, u, cond1,
                         cond2_in, want_cache=want_cache)
    if counter is not None:
        counter.add(1)
    if want_cache:
        out, cache = res
        return c_out * out + c_skip * a_b, (cache, c_out)
    out = res
    d = c_out * out + c_skip * a_b
    return d[0] if single else d


@dataclass(frozen=True)
class DistillConfig:
    ema_decay: float = 0.99
    target_live: bool = False   # ablation: gradient flows through both branches
    # Fraction of each batch whose noisy action is replaced by a uniform draw
    # from the deployment action box.  Consistency pairs (x, heun(x)) are valid
    # from any starting point, and inference queries the box at every rung, so
    # this densifies supervision exactly where assist calls land.  Half of the
    # replaced samples come from a narrow core around the origin, where the
    # sign of a small user action must survive the jump.  Only rungs whose
    # sigma is at least inbox_sigma_min get replacements: below that the
    # teacher has never seen mid-gap inputs and its extrapolated field would
    # poison the targets (the skip term already dominates there anyway).
    inbox_frac: float = 0.35
    inbox_half_width: float = 1.5
    inbox_core_half_width: float = 0.3
    inbox_sigma_min: float = 0.25


def distill_loss(student: StudentModel, teacher: TeacherModel,
                 batch: TransitionDataset, rng: np.random.Generator,
                 ema_params: dict | None = None,
                 distill_cfg: DistillConfig = DistillConfig()):
    """Consistency matching across one teacher Heun step.

    Per sample: draw a rung t above the floor, perturb the expert action to
    rung t, step the frozen teacher to rung t + 1, and penalize the squared
    distance between the student's jumps from the two rungs.  The target
    branch uses EMA weights with gradients blocked unless target_live is set.
    Both branches share identical conditioning inputs.
    """
    if len(batch) == 0:
        raise ValueError("batch must be nonempty")
    cfg = student.cfg
    T = cfg.schedule.T
    B = len(batch)
    dtype = student.params["in.w"].dtype
    a = batch.actions.astype(dtype)
    s = batch.states.astype(dtype)
    dagger = cfg.mode == MODE_CSA_DAGGER
    cond2 = direction_condition(s, batch.next_states.astype(dtype)) if dagger else None

    t_idx = rng.integers(0, T - 1, size=B)
    z = rng.standard_normal((B, cfg.action_dim)).astype(dtype)
    sig = student.sigmas[t_idx].reshape(-1, 1).astype(dtype)
    a_t = a + sig * z
    if distill_cfg.inbox_frac > 0:
        w = distill_cfg.inbox_half_width
        wc = distill_cfg.inbox_core_half_width
        swap = (rng.random(B) < distill_cfg.inbox_frac) \
            & (sig[:, 0] >= distill_cfg.inbox_sigma_min)
        box = rng.uniform(-w, w, size=(B, cfg.action_dim)).astype(dtype)
        core = rng.random(B) < 0.5
        box = np.where(core[:, None], (box * (wc / w)).astype(dtype), box)
        a_t = np.where(swap[:, None], box, a_t)
    a_next = heun_step_batch(teacher, a_t, t_idx, s, cond2)

    online, (cache, c_out) = consistency_denoise(
        student, a_t, t_idx, s, cond2, want_cache=True)
    if distill_cfg.target_live:
        target, (t_cache, t_c_out) = consistency_denoise(
            student, a_next, t_idx + 1, s, cond2, want_cache=True)
    else:
        tp = ema_params if ema_params is not None else student.params
        target = consistency_denoise(student, a_next, t_idx + 1, s, cond2,
                                     params=tp)

    diff = online - target
    loss = float(np.mean(diff * diff))
    scale = 2.0 / diff.size
    d_online = (scale * diff).astype(dtype)
    grads, _ = nn.mlp_backward(student.params, cfg.mlp_config(), cache,
                               d_online * c_out)
    if distill_cfg.target_live:
        t_grads, _ = nn.mlp_backward(student.params, cfg.mlp_config(), t_cache,
                                     (-d_online) * t_c_out)
        for k in grads:
            grads[k] = grads[k] + t_grads[k]
    return loss, grads


def heun_step_batch(teacher: TeacherModel, a_t, t_idx, cond1, cond2=None):
    """Vectorized teacher Heun step for per-sample rungs (training helper).

    Matches `teacher.heun_step` arithmetic exactly, rung by rung.
    """
    sig_from = teacher.sigmas[t_idx].reshape(-1, 1)
    sig_to = teacher.sigmas[t_idx + 1].reshape(-1, 1)
    d1 = (a_t - teacher.denoise(a_t, t_idx, cond1, cond2)) / sig_from
    h = sig_to - sig_from
    a_pred = a_t + h * d1
    d2 = (a_pred - teacher.denoise(a_pred, t_idx + 1, cond1, cond2)) / sig_to
    return (a_t + h * 0.5 * (d1 + d2)).astype(a_t.dtype)


def distill_train(teacher: TeacherModel, ds: TransitionDataset,
                  cfg: StudentConfig, train_cfg: TrainConfig = TrainConfig(),
                  distill_cfg: DistillConfig = DistillConfig()):
    """Distill the frozen teacher into a one-step student.

    The student is initialized from the teacher's denoiser weights (same
    trunk architecture); the EMA copy tracks the online weights with the
    configured decay.  Deterministic given the seed.  Returns
    (model, history) with history = [(step, held-out distill loss), ...].
    """
    if ds.state_dim != cfg.state_dim or ds.action_dim != cfg.action_dim:
        raise ValueError("dataset dims disagree with student config")
    if cfg.schedule != teacher.cfg.schedule:
        raise ValueError("student schedule must match the teacher's")
    rng = np.random.default_rng(train_cfg.seed)
    params = nn.init_params(cfg.mlp_config(), rng)
    for k in params:
        if k in teacher.params and teacher.params[k].shape == params[k].shape:
            params[k] = teacher.params[k].copy()
    model = StudentModel(cfg, params)
    ema = {k: v.copy() for k, v in params.items()}

    train, val = ds.split(train_cfg.val_fraction, rng)
    if len(train) == 0:
        train = ds
    opt = nn.adam_init(params, lr=train_cfg.lr)
    history = []
    val_rng_seed = int(rng.integers(0, 2**31))
    for step in range(train_cfg.steps):
        idx = rng.integers(0, len(train), size=min(train_cfg.batch, len(train)))
        batch = TransitionDataset(train.states[idx], train.actions[idx],
                                  train.next_states[idx])
        _, grads = distill_loss(model, teacher, batch, rng, ema, distill_cfg)
        nn.adam_update(params, grads, opt, lr=_cosine_lr(train_cfg, step))
        d = distill_cfg.ema_decay
        for k, v in params.items():
            ema[k] = (d * ema[k] + (1.0 - d) * v).astype(v.dtype)
        if (step + 1) % train_cfg.val_every == 0 or step + 1 == train_cfg.steps:
            vl, _ = distill_loss(model, teacher,
                                 val if len(val) else train,
                                 np.random.default_rng(val_rng_seed),
                                 ema, distill_cfg)
            history.append((step + 1, vl))
    return model, history


def student_to_checkpoint(model: StudentModel, meta: dict | None = None) -> Checkpoint:
    kind = "student_csa" if model.cfg.mode == MODE_CSA else "student_csa_dagger"
    cfg = model.cfg
    return Checkpoint(
        kind=kind, arrays=dict(model.params),
        schedule=cfg.schedule.to_dict(),
        config={"state_dim": cfg.state_dim, "action_dim": cfg.action_dim,
                "mode": cfg.mode, "hidden": cfg.hidden, "layers": cfg.layers,
                "feat_dim": cfg.feat_dim},
        meta=meta or {})


def student_from_checkpoint(ckpt: Checkpoint) -> StudentModel:
    if ckpt.kind not in ("student_csa", "student_csa_dagger"):
        raise ValueError(f"expected a student checkpoint, got {ckpt.kind!r}")
    c = ckpt.config
    cfg = StudentConfig(
        state_dim=int(c["state_dim"]), action_dim=int(c["action_dim"]),
        mode=c["mode"], hidden=int(c["hidden"]), layers=int(c["layers"]),
        feat_dim=int(c["feat_dim"]),
        schedule=ScheduleParams.from_dict(ckpt.schedule))
    return StudentModel(cfg, dict(ckpt.arrays))


# --------------------------------------------------------------------------
# Forward model: next-state regression used for intent conditioning.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ForwardConfig:
    state_dim: int
    action_dim: int
    hidden: int = 128
    layers: int = 3

    def mlp_config(self) -> nn.MlpConfig:
        return nn.MlpConfig(in_dim=self.state_dim + self.action_dim,
                            out_dim=self.state_dim, hidden=self.hidden,
                            layers=self.layers, layer_norm=True)


class ForwardModel:
    def __init__(self, cfg: ForwardConfig, params: dict):
        self.cfg = cfg
        self.params = params

    def predict(self, s, a) -> np.ndarray:
        s = np.asarray(s)
        single = s.ndim == 1
        x = np.concatenate([np.atleast_2d(s), np.atleast_2d(a)], axis=-1)
        out = nn.mlp_forward(self.params, self.cfg.mlp_config(),
                             x.astype(np.float32))
        return out[0] if single else out


def forward_train(ds: TransitionDataset, cfg: ForwardConfig,
                  train_cfg: TrainConfig = TrainConfig()):
    """Supervised (s, a) -> s_n regression with an MSE objective."""
    if ds.state_dim != cfg.state_dim or ds.action_dim != cfg.action_dim:
        raise ValueError("dataset dims disagree with forward-model config")
    rng = np.random.default_rng(train_cfg.seed)
    mlp_cfg = cfg.mlp_config()
    params = nn.init_params(mlp_cfg, rng)
    model = ForwardModel(cfg, params)
    train, val = ds.split(train_cfg.val_fraction, rng)
    if len(train) == 0:
        train = ds
    opt = nn.adam_init(params, lr=train_cfg.lr)
    history = []
    for step in range(train_cfg.steps):
        idx = rng.integers(0, len(train), size=min(train_cfg.batch, len(train)))
        x = np.concatenate([train.states[idx], train.actions[idx]], axis=-1)
        y = train.next_states[idx]
        pred, cache = nn.mlp_forward(params, mlp_cfg, x, want_cache=True)
        diff = pred - y
        scale = 2.0 / diff.size
        grads, _ = nn.mlp_backward(params, mlp_cfg, cache,
                                   (scale * diff).astype(np.float32))
        nn.adam_update(params, grads, opt, lr=_cosine_lr(train_cfg, step))
        if (step + 1) % train_cfg.val_every == 0 or step + 1 == train_cfg.steps:
            vv = val if len(val) else train
            vp = model.predict(vv.states, vv.actions)
            history.append((step + 1, float(np.mean((vp - vv.next_states) ** 2))))
    return model, history


def forward_to_checkpoint(model: ForwardModel, meta: dict | None = None) -> Checkpoint:
    cfg = model.cfg
    return Checkpoint(kind="forward", arrays=dict(model.params),
                      config={"state_dim": cfg.state_dim,
                              "action_dim": cfg.action_dim,
                              "hidden": cfg.hidden, "layers": cfg.layers},
                      meta=meta or {})


def forward_from_checkpoint(ckpt: Checkpoint) -> ForwardModel:
    if ckpt.kind != "forward":
        raise ValueError(f"expected a forward checkpoint, got {ckpt.kind!r}")
    c = ckpt.config
    cfg = ForwardConfig(state_dim=int(c["state_dim"]),
                        action_dim=int(c["action_dim"]),
                        hidden=int(c["hidden"]), layers=int(c["layers"]))
    return ForwardModel(cfg, dict(ckpt.arrays))


# --------------------------------------------------------------------------
# Assist paths.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AssistRequest:
    s: np.ndarray
    a_u: np.ndarray
    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")


@dataclass
class AssistResult:
    action: np.ndarray
    nfe: int
    latency_us: float


def alpha_to_rung(alpha: float, T: int) -> int:
    """Assistance level -> ladder rung.

    The ladder index decreases in noise, while alpha grows with assumed
    noise, so the rung is counted from the floor: alpha = 0 picks the
    sigma_min rung (identity) and alpha = 1 the sigma_max rung.
    """
    return (T - 1) - int(round(alpha * (T - 1)))


def csa_assist(student: StudentModel, phi: ForwardModel | None,
               req: AssistRequest,
               counter: NfeCounter | None = None) -> AssistResult:
    """Correct a user action with one student evaluation.

    In dagger mode the forward model turns the raw user action into a
    predicted state-change direction, giving the student a short-horizon
    intent signal; the plain mode conditions on the state alone.
    """
    dagger = student.cfg.mode == MODE_CSA_DAGGER
    if dagger and phi is None:
        raise ValueError("csa_dagger mode requires a forward model")
    t = alpha_to_rung(req.alpha, student.cfg.schedule.T)
    local = NfeCounter()
    start = time.perf_counter_ns()
    cond2 = None
    if dagger:
        s_hat = phi.predict(req.s, req.a_u)
        cond2 = direction_condition(req.s, s_hat)[0]
    a0 = consistency_denoise(student, np.asarray(req.a_u, dtype=np.float32), t,
                             req.s, cond2, counter=local)
    latency_us = (time.perf_counter_ns() - start) / 1000.0
    if counter is not None:
        counter.add(local.n)
    return AssistResult(action=a0, nfe=local.n, latency_us=latency_us)


# --------------------------------------------------------------------------
# Partial-diffusion baseline copilot.
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DdpmConfig:
    state_dim: int
    action_dim: int
    K: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.1
    hidden: int = 128
    layers: int = 3
    feat_dim: int = 8

    def mlp_config(self) -> nn.MlpConfig:
        return nn.MlpConfig(in_dim=self.action_dim, out_dim=self.action_dim,
                            hidden=self.hidden, layers=self.layers,
                            cond_dim=self.state_dim, feat_dim=self.feat_dim)


class DdpmModel:
    """Noise-prediction network over a linear beta schedule (K steps)."""

    def __init__(self, cfg: DdpmConfig, params: dict):
        self.cfg = cfg
        self.params = params
        self.betas = np.linspace(cfg.beta_min, cfg.beta_max, cfg.K)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)

    def predict_eps(self, x, k, cond1, counter: NfeCounter | None = None):
        """eps-hat at diffusion step k in {1..K} (k is 1-based)."""
        x = np.atleast_2d(x)
        k_idx = np.atleast_1d(np.asarray(k, dtype=int))
        u = (k_idx / self.cfg.K).astype(x.dtype)
        if u.shape[0] == 1 and x.shape[0] > 1:
            u = np.repeat(u, x.shape[0])
        out = nn.mlp_forward(self.params, self.cfg.mlp_config(), x, u,
                             np.atleast_2d(cond1))
        if counter is not None:
            counter.add(1)
        return out


def ddpm_train(ds: TransitionDataset, cfg: DdpmConfig,
               train_cfg: TrainConfig = TrainConfig()):
    """Standard noise-prediction MSE training."""
    if ds.state_dim != cfg.state_dim or ds.action_dim != cfg.action_dim:
        raise ValueError("dataset dims disagree with config")
    rng = np.random.default_rng(train_cfg.seed)
    mlp_cfg = cfg.mlp_config()
    params = nn.init_params(mlp_cfg, rng)
    model = DdpmModel(cfg, params)
    train, val = ds.split(train_cfg.val_fraction, rng)
    if len(train) == 0:
        train = ds
    opt = nn.adam_init(params, lr=train_cfg.lr)
    history = []
    for step in range(train_cfg.steps):
        idx = rng.integers(0, len(train), size=min(train_cfg.batch, len(train)))
        a = train.actions[idx]
        s = train.states[idx]
        B = len(a)
        k = rng.integers(1, cfg.K + 1, size=B)
        eps = rng.standard_normal(a.shape).astype(np.float32)
        ab = model.alpha_bar[k - 1].reshape(-1, 1).astype(np.float32)
        x_k = np.sqrt(ab) * a + np.sqrt(1.0 - ab) * eps
        u = (k / cfg.K).astype(np.float32)
        pred, cache = nn.mlp_forward(params, mlp_cfg, x_k, u, s, want_cache=True)
        diff = pred - eps
        scale = 2.0 / diff.size
        grads, _ = nn.mlp_backward(params, mlp_cfg, cache,
                                   (scale * diff).astype(np.float32))
        nn.adam_update(params, grads, opt, lr=_cosine_lr(train_cfg, step))
        if (step + 1) % train_cfg.val_every == 0 or step + 1 == train_cfg.steps:
            history.append((step + 1, float(np.mean(diff * diff))))
    return model, history


def ddpm_assist(model: DdpmModel, s, a_u, alpha: float,
                rng: np.random.Generator,
                counter: NfeCounter | None = None) -> AssistResult:
    """Partial forward diffusion then k reverse ancestral steps.

    k = round(alpha * K).  The forward jump is the closed-form q(x_k | x_0)
    sample; each reverse step injects fresh noise (except the last), which is
    what allows the outcome to hop between modes.  NFE = k.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    cfg = model.cfg
    k = int(round(alpha * cfg.K))
    start = time.perf_counter_ns()
    a_u = np.asarray(a_u, dtype=np.float32)
    if k == 0:
        return AssistResult(action=a_u.copy(), nfe=0,
                            latency_us=(time.perf_counter_ns() - start) / 1000.0)
    local = NfeCounter()
    ab_k = model.alpha_bar[k - 1]
    x = (np.sqrt(ab_k) * a_u
         + np.sqrt(1.0 - ab_k) * rng.standard_normal(a_u.shape)).astype(np.float32)
    for i in range(k, 0, -1):
        eps_hat = model.predict_eps(x[None, :], i, s, local)[0]
        beta = model.betas[i - 1]
        ab_i = model.alpha_bar[i - 1]
        mean = (x - beta / np.sqrt(1.0 - ab_i) * eps_hat) / np.sqrt(model.alphas[i - 1])
        if i > 1:
            ab_prev = model.alpha_bar[i - 2]
            var = beta * (1.0 - ab_prev) / (1.0 - ab_i)
            x = (mean + np.sqrt(var) * rng.standard_normal(a_u.shape)).astype(np.float32)
        else:
            x = mean.astype(np.float32)
    latency_us = (time.perf_counter_ns() - start) / 1000.0
    if counter is not None:
        counter.add(local.n)
    return AssistResult(action=x, nfe=local.n, latency_us=latency_us)


def ddpm_to_checkpoint(model: DdpmModel, meta: dict | None = None) -> Checkpoint:
    cfg = model.cfg
    return Checkpoint(kind="ddpm", arrays=dict(model.params),
                      config={"state_dim": cfg.state_dim,
                              "action_dim": cfg.action_dim, "K": cfg.K,
                              "beta_min": cfg.beta_min, "beta_max": cfg.beta_max,
                              "hidden": cfg.hidden, "layers": cfg.layers,
                              "feat_dim": cfg.feat_dim},
                      meta=meta or {})


def ddpm_from_checkpoint(ckpt: Checkpoint) -> DdpmModel:
    if ckpt.kind != "ddpm":
        raise ValueError(f"expected a ddpm checkpoint, got {ckpt.kind!r}")
    c = ckpt.config
    cfg = DdpmConfig(state_dim=int(c["state_dim"]), action_dim=int(c["action_dim"]),
                     K=int(c["K"]), beta_min=float(c["beta_min"]),
                     beta_max=float(c["beta_max"]), hidden=int(c["hidden"]),
                     layers=int(c["layers"]), feat_dim=int(c["feat_dim"]))
    return DdpmModel(cfg, dict(ckpt.arrays))
