"""Realtime session server: one environment per connection, JSON text frames.

The server is authoritative for dynamics; clients render only what it sends.
The protocol state machine lives in `handle_message`, which is a plain
function over a Session so the same code path serves sockets and the golden
message tests.  Assisted actions are produced by the exact library assist
call the headless eval harness uses.

Inbound:  {"type":"hello","env":"lander|slot","copilot":"none|csa|csa_dagger|ddpm",
           "alpha":0.5,"seed":123}
          {"type":"pilot_action","tick":k,"a":[ax,ay]}
          {"type":"set_alpha","alpha":x}
          {"type":"reset","seed":n}
Outbound: {"type":"session_ready","session":id,"state":{...},"tick":0}
          {"type":"step_result","tick":k,"state":{...},"raw":[..],"assisted":[..],
           "outcome":"...","nfe":n,"latency_us":x,"alpha":a}
          {"type":"error","code":c,"msg":m}
          {"type":"lag","dropped":m}
"""

from __future__ import annotations

import asyncio
import itertools
import json

import numpy as np

from .envs import Lander2D, Outcome, Slot2D, copilot_view, make_env
from .eval import CsaCopilot, DdpmCopilot, NoneCopilot

ERR_BAD_MESSAGE = "BAD_MESSAGE"
ERR_EPISODE_OVER = "EPISODE_OVER"
ERR_NO_SESSION = "NO_SESSION"

_session_ids = itertools.count(1)


def state_to_dict(env) -> dict:
    """Pilot-view state frame (the human at the keyboard sees the goal)."""
    s = env.state
    base = {"x": s.x, "y": s.y, "vx": s.vx, "vy": s.vy}
    if isinstance(env, Lander2D):
        base["pad_x"] = s.pad_x
    elif isinstance(env, Slot2D):
        base["goal"] = "upper" if s.goal > 0 else "lower"
    base["outcome"] = env.outcome.value
    return base


class Session:
    """One environment + copilot + assistance level, bound to a connection."""

    def __init__(self, session_id: int, env, copilot, alpha: float, seed: int):
        self.id = session_id
        self.env = env
        self.copilot = copilot
        self.alpha = alpha
        self.pending_alpha = None
        self.seed = seed
        self.tick = 0
        # same seeding convention as the eval harness, so a scripted client
        # replay reproduces headless rollouts exactly
        self.rng = np.random.default_rng(np.random.SeedSequence([seed]))
        self.env.reset(self.rng)
        self.copilot.reseed(seed)

    def reset(self, seed: int):
        self.seed = seed
        self.tick = 0
        self.rng = np.random.default_rng(np.random.SeedSequence([seed]))
        self.env.reset(self.rng)
        self.copilot.reseed(seed)


class CopilotStore:
    """Loaded checkpoints shared read-only across sessions."""

    def __init__(self, student=None, phi=None, ddpm=None):
        self.student = student
        self.phi = phi
        self.ddpm = ddpm

    def build(self, name: str):
        if name == "none":
            return NoneCopilot()
        if name in ("csa", "csa_dagger"):
            if self.student is None:
                raise ValueError(f"no student checkpoint loaded for {name!r}")
            if name == "csa_dagger" and self.phi is None:
                raise ValueError("csa_dagger needs a forward-model checkpoint")
            return CsaCopilot(self.student,
                              self.phi if name == "csa_dagger" else None)
        if name == "ddpm":
            if self.ddpm is None:
                raise ValueError("no ddpm checkpoint loaded")
            return DdpmCopilot(self.ddpm)
        raise ValueError(f"unknown copilot {name!r}")


def _error(code: str, msg: str) -> dict:
    return {"type": "error", "code": code, "msg": msg}


def handle_message(session: Session | None, msg: dict,
                   store: CopilotStore) -> tuple[Session | None, list[dict]]:
    """Protocol state machine; returns (session, outbound messages)."""
    if not isinstance(msg, dict) or "type" not in msg:
        return session, [_error(ERR_BAD_MESSAGE, "missing message type")]
    mtype = msg["type"]

    if mtype == "hello":
        try:
            env = make_env(msg.get("env", "lander"))
            copilot = store.build(msg.get("copilot", "none"))
            alpha = float(msg.get("alpha", 0.5))
            seed = int(msg.get("seed", 0))
            if not 0.0 <= alpha <= 1.0:
                raise ValueError(f"alpha {alpha} outside [0, 1]")
        except (ValueError, TypeError) as e:
            return session, [_error(ERR_BAD_MESSAGE, str(e))]
        session = Session(next(_session_ids), env, copilot, alpha, seed)
        return session, [{"type": "session_ready", "session": session.id,
                          "state": state_to_dict(env), "tick": 0}]

    if session is None:
        return session, [_error(ERR_NO_SESSION, "send hello first")]

    if mtype == "pilot_action":
        if session.env.outcome is not Outcome.RUNNING:
            return session, [_error(ERR_EPISODE_OVER, "episode is over; reset")]
        try:
            a_u = np.asarray([float(v) for v in msg["a"]], dtype=np.float32)
            if a_u.shape != (2,) or not np.all(np.isfinite(a_u)):
                raise ValueError("action must be two finite numbers")
        except (KeyError, TypeError, ValueError) as e:
            return session, [_error(ERR_BAD_MESSAGE, f"bad pilot_action: {e}")]
        if session.pending_alpha is not None:
            session.alpha = session.pending_alpha
            session.pending_alpha = None
        res = session.copilot.assist(copilot_view(session.env.state), a_u,
                                     session.alpha)
        _, outcome = session.env.step(res.action)
        session.tick += 1
        return session, [{
            "type": "step_result",
            "tick": session.tick,
            "state": state_to_dict(session.env),
            "raw": [float(v) for v in a_u],
            "assisted": [float(v) for v in np.asarray(res.action).reshape(-1)],
            "outcome": outcome.value,
            "nfe": int(res.nfe),
            "latency_us": float(res.latency_us),
            "alpha": session.alpha,
        }]

    if mtype == "set_alpha":
        try:
            alpha = float(msg["alpha"])
            if not 0.0 <= alpha <= 1.0:
                raise ValueError(f"alpha {alpha} outside [0, 1]")
        except (KeyError, TypeError, ValueError) as e:
            return session, [_error(ERR_BAD_MESSAGE, f"bad set_alpha: {e}")]
        session.pending_alpha = alpha  # applies from the next tick
        return session, []

    if mtype == "reset":
        try:
            seed = int(msg.get("seed", session.seed))
        except (TypeError, ValueError) as e:
            return session, [_error(ERR_BAD_MESSAGE, f"bad reset: {e}")]
        session.reset(seed)
        return session, [{"type": "session_ready", "session": session.id,
                          "state": state_to_dict(session.env), "tick": 0}]

    return session, [_error(ERR_BAD_MESSAGE, f"unknown type {mtype!r}")]


def encode(msg: dict) -> str:
    """Canonical wire encoding: compact separators, insertion key order."""
    return json.dumps(msg, separators=(",", ":"))


async def _connection(websocket, store: CopilotStore):
    """One socket; if the session falls behind, stale pilot actions are
    dropped (with a lag notice) rather than replayed late."""
    session = None
    queue: asyncio.Queue = asyncio.Queue()

    async def reader():
        try:
            async for raw in websocket:
                await queue.put(raw)
        finally:
            await queue.put(None)

    reader_task = asyncio.create_task(reader())
    try:
        closed = False
        while not closed:
            batch = [await queue.get()]
            while True:
                try:
                    batch.append(queue.get_nowait())
                except asyncio.QueueEmpty:
                    break
            pilot_msgs = []
            others = []
            for raw in batch:
                if raw is None:
                    closed = True
                    continue
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError as e:
                    await websocket.send(
                        encode(_error(ERR_BAD_MESSAGE, f"bad JSON: {e}")))
                    continue
                if isinstance(msg, dict) and msg.get("type") == "pilot_action":
                    pilot_msgs.append(msg)
                else:
                    others.append(msg)
            for msg in others:
                session, outs = handle_message(session, msg, store)
                for out in outs:
                    await websocket.send(encode(out))
            if pilot_msgs:
                if len(pilot_msgs) > 1:
                    await websocket.send(
                        encode({"type": "lag", "dropped": len(pilot_msgs) - 1}))
                session, outs = handle_message(session, pilot_msgs[-1], store)
                for out in outs:
                    await websocket.send(encode(out))
    finally:
        reader_task.cancel()


def build_store(ckpt: str = "", forward_ckpt: str = "",
                ddpm_ckpt: str = "") -> CopilotStore:
    from . import persistence, student as studentmod
    student = phi = ddpm = None
    if ckpt:
        loaded = persistence.read_checkpoint(ckpt)
        if loaded.kind in ("student_csa", "student_csa_dagger"):
            student = studentmod.student_from_checkpoint(loaded)
        elif loaded.kind == "ddpm":
            ddpm = studentmod.ddpm_from_checkpoint(loaded)
        else:
            raise ValueError(f"cannot serve a {loaded.kind!r} checkpoint")
    if forward_ckpt:
        phi = studentmod.forward_from_checkpoint(
            persistence.read_checkpoint(forward_ckpt))
    if ddpm_ckpt:
        ddpm = studentmod.ddpm_from_checkpoint(
            persistence.read_checkpoint(ddpm_ckpt))
    return CopilotStore(student=student, phi=phi, ddpm=ddpm)


async def serve(host: str, port: int, store: CopilotStore):
    import websockets

    async with websockets.serve(lambda ws: _connection(ws, store), host, port):
        await asyncio.Future()


def run_server(host: str = "127.0.0.1", port: int = 8787, ckpt: str = "",
               forward_ckpt: str = "", ddpm_ckpt: str = "") -> None:
    store = build_store(ckpt, forward_ckpt, ddpm_ckpt)
    print(f"serving on ws://{host}:{port}")
    try:
        asyncio.run(serve(host, port, store))
    except KeyboardInterrupt:
        print("shutting down")
