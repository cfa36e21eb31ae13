"""Minimal trainable-MLP substrate: explicit forward/backward passes and Adam.

Parameters live in plain ``{name: ndarray}`` dicts so they can be serialized
flat, finite-difference checked in float64, and trained in float32 without any
framework.  The architecture family is fixed:

    h0 = x @ W_in + b_in                       (linear input projection)
    e  = feat(u) @ W_t + c1 @ W_c1 + b_c1 [+ c2 @ W_c2]
    hl = silu([LN](h_{l-1} @ W_l + b_l + e))   for each hidden layer
    y  = h_L @ W_out + b_out

The conditioning embedding e is re-injected into every hidden layer's
pre-activation (residual conditioning).  The step scalar u in [0, 1] is
featurized so that u = 0 yields the zero feature vector; the optional second
condition has no bias term, so an absent condition and a zero condition
produce the same embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Raised on inconsistent dimensions or malformed model config."""


@dataclass(frozen=True)
class MlpConfig:
    in_dim: int
    out_dim: int
    hidden: int = 128
    layers: int = 3
    cond_dim: int = 0      # width of cond1; 0 disables the conditioning path
    cond2_dim: int = 0     # width of the optional unit-direction condition
    feat_dim: int = 8      # step-scalar feature width (low-frequency sine basis)
    layer_norm: bool = False

    def __post_init__(self):
        if min(self.in_dim, self.out_dim, self.hidden) < 1 or self.layers < 0:
            raise ConfigError(f"bad dimensions: {self}")
        if self.cond2_dim and not self.cond_dim:
            raise ConfigError("cond2 requires the conditioning path (cond_dim > 0)")

    def to_dict(self) -> dict:
        return {
            "in_dim": self.in_dim, "out_dim": self.out_dim,
            "hidden": self.hidden, "layers": self.layers,
            "cond_dim": self.cond_dim, "cond2_dim": self.cond2_dim,
            "feat_dim": self.feat_dim, "layer_norm": self.layer_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpConfig":
        return cls(
            in_dim=int(d["in_dim"]), out_dim=int(d["out_dim"]),
            hidden=int(d["hidden"]), layers=int(d["layers"]),
            cond_dim=int(d["cond_dim"]), cond2_dim=int(d["cond2_dim"]),
            feat_dim=int(d["feat_dim"]), layer_norm=bool(d["layer_norm"]),
        )


def init_params(cfg: MlpConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict:
    """He-style initialization; biases and LN shifts start at zero."""
    p = {}

    def w(name, fan_in, fan_out):
        p[name] = (rng.standard_normal((fan_in, fan_out))
                   * np.sqrt(2.0 / fan_in)).astype(dtype)

    w("in.w", cfg.in_dim, cfg.hidden)
    p["in.b"] = np.zeros(cfg.hidden, dtype=dtype)
    if cfg.cond_dim:
        w("t.w", cfg.feat_dim, cfg.hidden)
        w("c1.w", cfg.cond_dim, cfg.hidden)
        p["c1.b"] = np.zeros(cfg.hidden, dtype=dtype)
        if cfg.cond2_dim:
            w("c2.w", cfg.cond2_dim, cfg.hidden)
    for i in range(cfg.layers):
        w(f"h{i}.w", cfg.hidden, cfg.hidden)
        p[f"h{i}.b"] = np.zeros(cfg.hidden, dtype=dtype)
        if cfg.layer_norm:
            p[f"h{i}.ln_g"] = np.ones(cfg.hidden, dtype=dtype)
            p[f"h{i}.ln_b"] = np.zeros(cfg.hidden, dtype=dtype)
    w("out.w", cfg.hidden, cfg.out_dim)
    p["out.b"] = np.zeros(cfg.out_dim, dtype=dtype)
    return p


def params_astype(params: dict, dtype) -> dict:
    return {k: v.astype(dtype) for k, v in params.items()}


def step_features(u: np.ndarray, feat_dim: int) -> np.ndarray:
    """Featurize the step scalar u in [0, 1] as [u, sin(pi u), sin(2 pi u), ...].

    All features vanish at u = 0, so the step embedding contributes nothing
    at the noisiest rung.
    """
    u = np.asarray(u)
    cols = [u]
    for k in range(1, feat_dim):
        cols.append(np.sin(np.pi * k * u))
    return np.stack(cols, axis=-1).astype(u.dtype if u.dtype.kind == "f" else np.float64)


def embed_conditions(params: dict, cfg: MlpConfig, u: np.ndarray,
                     cond1: np.ndarray, cond2: np.ndarray | None) -> np.ndarray:
    """Summed conditioning embedding for a batch.

    cond2, when given, must be unit-L2 rows (or all-zero rows, which are
    equivalent to cond2 being absent since its projection carries no bias).
    """
    if not cfg.cond_dim:
        raise ConfigError("model has no conditioning path")
    if cond1 is None:
        raise ConfigError("cond1 is required by this model")
    cond1 = np.atleast_2d(cond1)
    if cond1.shape[-1] != cfg.cond_dim:
        raise ConfigError(f"cond1 width {cond1.shape[-1]} != {cfg.cond_dim}")
    feats = step_features(np.asarray(u, dtype=cond1.dtype), cfg.feat_dim)
    feats = np.atleast_2d(feats)
    e = feats @ params["t.w"] + cond1 @ params["c1.w"] + params["c1.b"]
    if cond2 is not None:
        cond2 = np.atleast_2d(cond2)
        if not cfg.cond2_dim:
            raise ConfigError("model was built without a cond2 path")
        if cond2.shape[-1] != cfg.cond2_dim:
            raise ConfigError(f"cond2 width {cond2.shape[-1]} != {cfg.cond2_dim}")
        norms = np.linalg.norm(cond2, axis=-1)
        if np.any((np.abs(norms - 1.0) > 1e-5) & (norms > 1e-7)):
            raise ValueError("cond2 rows must be unit-norm or zero")
        e = e + cond2 @ params["c2.w"]
    return e


def _silu(z):
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def mlp_forward(params: dict, cfg: MlpConfig, x: np.ndarray,
                u: np.ndarray | None = None,
                cond1: np.ndarray | None = None,
                cond2: np.ndarray | None = None,
                want_cache: bool = False):
    """Forward pass over a batch; returns (y, cache) if want_cache else y."""
    x = np.atleast_2d(x)
    if x.shape[-1] != cfg.in_dim:
        raise ConfigError(f"input width {x.shape[-1]} != {cfg.in_dim}")
    if cfg.cond_dim:
        e = embed_conditions(params, cfg, u, cond1, cond2)
    else:
        e = None
    h = x @ params["in.w"] + params["in.b"]
    cache = {"x": x, "e": e, "h0": h, "cond1": cond1, "cond2": cond2, "u": u,
             "layers": []}
    for i in range(cfg.layers):
        z = h @ params[f"h{i}.w"] + params[f"h{i}.b"]
        if e is not None:
            z = z + e
        lc = {"h_in": h, "z": z}
        if cfg.layer_norm:
            mean = z.mean(axis=-1, keepdims=True)
            var = z.var(axis=-1, keepdims=True)
            inv = 1.0 / np.sqrt(var + 1e-5)
            zhat = (z - mean) * inv
            zn = zhat * params[f"h{i}.ln_g"] + params[f"h{i}.ln_b"]
            lc.update(zhat=zhat, inv=inv)
        else:
            zn = z
        a, s = _silu(zn)
        lc.update(zn=zn, s=s)
        cache["layers"].append(lc)
        h = a
    y = h @ params["out.w"] + params["out.b"]
    cache["h_last"] = h
    return (y, cache) if want_cache else y


def mlp_backward(params: dict, cfg: MlpConfig, cache: dict,
                 dy: np.ndarray) -> tuple[dict, np.ndarray]:
    """Backprop the upstream gradient dy; returns (param grads, dx)."""
    grads = {}
    h_last = cache["h_last"]
    grads["out.w"] = h_last.T @ dy
    grads["out.b"] = dy.sum(axis=0)
    dh = dy @ params["out.w"].T
    de = None
    for i in reversed(range(cfg.layers)):
        lc = cache["layers"][i]
        s, zn = lc["s"], lc["zn"]
        dzn = dh * (s * (1.0 + zn * (1.0 - s)))          # d silu
        if cfg.layer_norm:
            zhat, inv = lc["zhat"], lc["inv"]
            grads[f"h{i}.ln_g"] = (dzn * zhat).sum(axis=0)
            grads[f"h{i}.ln_b"] = dzn.sum(axis=0)
            dzh = dzn * params[f"h{i}.ln_g"]
            n = zhat.shape[-1]
            dz = inv * (dzh - dzh.mean(axis=-1, keepdims=True)
                        - zhat * (dzh * zhat).mean(axis=-1, keepdims=True))
            # keep shape bookkeeping honest
            assert dz.shape == (zhat.shape[0], n)
        else:
            dz = dzn
        grads[f"h{i}.w"] = lc["h_in"].T @ dz
        grads[f"h{i}.b"] = dz.sum(axis=0)
        if cache["e"] is not None:
            de = dz if de is None else de + dz
        dh = dz @ params[f"h{i}.w"].T
    grads["in.w"] = cache["x"].T @ dh
    grads["in.b"] = dh.sum(axis=0)
    dx = dh @ params["in.w"].T
    if de is not None:
        feats = np.atleast_2d(step_features(
            np.asarray(cache["u"], dtype=cache["x"].dtype), cfg.feat_dim))
        cond1 = np.atleast_2d(cache["cond1"])
        grads["t.w"] = feats.T @ de
        grads["c1.w"] = cond1.T @ de
        grads["c1.b"] = de.sum(axis=0)
        if cfg.cond2_dim:
            if cache["cond2"] is not None:
                grads["c2.w"] = np.atleast_2d(cache["cond2"]).T @ de
            else:
                grads["c2.w"] = np.zeros_like(params["c2.w"])
    for k in params:
        if k not in grads:
            grads[k] = np.zeros_like(params[k])
    return grads, dx


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    st = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    st.m = {k: np.zeros_like(v) for k, v in params.items()}
    st.v = {k: np.zeros_like(v) for k, v in params.items()}
    return st


def adam_update(params: dict, grads: dict, state: AdamState,
                lr: float | None = None) -> tuple[dict, AdamState]:
    """One bias-corrected Adam step, in place; returns (params, state)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    step_lr = state.lr if lr is None else lr
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape mismatch for {k}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= (step_lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)
    return params, state
