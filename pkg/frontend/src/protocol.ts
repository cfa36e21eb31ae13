// Wire protocol: newline-free JSON text frames over a websocket.
// Key order in outbound messages is fixed so the encoded bytes match the
// golden fixtures shared with the server's test suite.

export type EnvName = "lander" | "slot";
export type CopilotName = "none" | "csa" | "csa_dagger" | "ddpm";
export type OutcomeName = "running" | "success" | "crash" | "out_of_bounds" | "timeout";

export interface StateFrame {
  x: number;
  y: number;
  vx: number;
  vy: number;
  pad_x?: number;
  goal?: "upper" | "lower";
  outcome: OutcomeName;
}

export interface SessionReady {
  type: "session_ready";
  session: number;
  state: StateFrame;
  tick: number;
}

export interface StepResult {
  type: "step_result";
  tick: number;
  state: StateFrame;
  raw: number[];
  assisted: number[];
  outcome: OutcomeName;
  nfe: number;
  latency_us: number;
  alpha: number;
}

export interface ErrorMsg {
  type: "error";
  code: string;
  msg: string;
}

export interface LagMsg {
  type: "lag";
  dropped: number;
}

export type ServerMessage = SessionReady | StepResult | ErrorMsg | LagMsg;

export class ProtocolError extends Error {}

export function encodeHello(
  env: EnvName, copilot: CopilotName, alpha: number, seed: number): string {
  return JSON.stringify({ type: "hello", env, copilot, alpha, seed });
}

export function encodePilotAction(tick: number, a: [number, number]): string {
  return JSON.stringify({ type: "pilot_action", tick, a });
}

export function encodeSetAlpha(alpha: number): string {
  return JSON.stringify({ type: "set_alpha", alpha });
}

export function encodeReset(seed: number): string {
  return JSON.stringify({ type: "reset", seed });
}

const OUTCOMES: OutcomeName[] = [
  "running", "success", "crash", "out_of_bounds", "timeout",
];

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function validateState(s: unknown): StateFrame {
  const st = s as Record<string, unknown>;
  if (
    typeof st !== "object" || st === null ||
    !isFiniteNumber(st.x) || !isFiniteNumber(st.y) ||
    !isFiniteNumber(st.vx) || !isFiniteNumber(st.vy) ||
    !OUTCOMES.includes(st.outcome as OutcomeName)
  ) {
    throw new ProtocolError("malformed state frame");
  }
  return st as unknown as StateFrame;
}

export function parseServerMessage(raw: string): ServerMessage {
  let m: Record<string, unknown>;
  try {
    m = JSON.parse(raw);
  } catch (e) {
    throw new ProtocolError(`bad JSON: ${e}`);
  }
  switch (m.type) {
    case "session_ready":
      if (!isFiniteNumber(m.session) || !isFiniteNumber(m.tick)) {
        throw new ProtocolError("malformed session_ready");
      }
      validateState(m.state);
      return m as unknown as SessionReady;
    case "step_result": {
      if (
        !isFiniteNumber(m.tick) || !Array.isArray(m.raw) ||
        !Array.isArray(m.assisted) || !isFiniteNumber(m.nfe) ||
        !isFiniteNumber(m.latency_us) || !isFiniteNumber(m.alpha) ||
        !OUTCOMES.includes(m.outcome as OutcomeName)
      ) {
        throw new ProtocolError("malformed step_result");
      }
      validateState(m.state);
      return m as unknown as StepResult;
    }
    case "error":
      if (typeof m.code !== "string") throw new ProtocolError("malformed error");
      return m as unknown as ErrorMsg;
    case "lag":
      if (!isFiniteNumber(m.dropped)) throw new ProtocolError("malformed lag");
      return m as unknown as LagMsg;
    default:
      throw new ProtocolError(`unknown message type ${String(m.type)}`);
  }
}
