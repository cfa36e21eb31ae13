// Realtime client loop: fixed 20 Hz send cadence, latest-frame-wins
// rendering.  The server is authoritative; when the socket drops, the scene
// freezes on the last server frame rather than extrapolating.

import { inputToAction } from "./input.js";
import {
  CopilotName, EnvName, OutcomeName, ProtocolError, ServerMessage, StateFrame,
  StepResult, encodeHello, encodePilotAction, encodeReset, encodeSetAlpha,
  parseServerMessage,
} from "./protocol.js";

export const TICK_MS = 50; // 20 Hz

export interface ClientState {
  connected: boolean;
  frame: StateFrame | null;
  step: StepResult | null;
  alphaSent: number;
  alphaAcked: number | null;
  episodeOver: boolean;
  malformed: boolean;
  lastError: string;
  droppedTicks: number;
}

export interface ClientEvents {
  onChange?: (state: ClientState) => void;
}

type SocketLike = {
  send(data: string): void;
  close(): void;
  readyState: number;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
};

export class GameClient {
  readonly held = new Set<string>();
  state: ClientState = {
    connected: false, frame: null, step: null, alphaSent: 0.5,
    alphaAcked: null, episodeOver: false, malformed: false, lastError: "",
    droppedTicks: 0,
  };
  private ws: SocketLike | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;
  private tick = 0;
  private events: ClientEvents;

  constructor(events: ClientEvents = {}) {
    this.events = events;
  }

  connect(url: string, env: EnvName, copilot: CopilotName, alpha: number,
          seed: number,
          makeSocket: (url: string) => SocketLike =
              (u) => new WebSocket(u) as unknown as SocketLike): void {
    this.disconnect();
    this.state.alphaSent = alpha;
    const ws = makeSocket(url);
    this.ws = ws;
    ws.onopen = () => {
      ws.send(encodeHello(env, copilot, alpha, seed));
    };
    ws.onmessage = (ev) => this.handleRaw(String(ev.data));
    ws.onclose = () => {
      this.state.connected = false;
      this.emit();
    };
  }

  disconnect(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
    if (this.ws !== null) this.ws.close();
    this.ws = null;
    this.state.connected = false;
  }

  handleRaw(raw: string): void {
    let msg: ServerMessage;
    try {
      msg = parseServerMessage(raw);
    } catch (e) {
      if (e instanceof ProtocolError) {
        this.state.malformed = true;
        this.state.lastError = e.message;
        this.emit();
        return;
      }
      throw e;
    }
    this.handleMessage(msg);
  }

  handleMessage(msg: ServerMessage): void {
    switch (msg.type) {
      case "session_ready":
        this.state.connected = true;
        this.state.frame = msg.state;
        this.state.step = null;
        this.state.episodeOver = false;
        this.state.malformed = false;
        this.tick = msg.tick;
        this.startLoop();
        break;
      case "step_result":
        // latest frame wins; stale ticks are simply overwritten
        this.state.frame = msg.state;
        this.state.step = msg;
        this.state.alphaAcked = msg.alpha;
        this.state.episodeOver = msg.outcome !== "running";
        break;
      case "error":
        this.state.lastError = `${msg.code}: ${msg.msg}`;
        if (msg.code === "EPISODE_OVER") this.state.episodeOver = true;
        break;
      case "lag":
        this.state.droppedTicks += msg.dropped;
        break;
    }
    this.emit();
  }

  private startLoop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = setInterval(() => this.sendTick(), TICK_MS);
  }

  sendTick(): void {
    if (this.ws === null || !this.state.connected || this.state.episodeOver) {
      return;
    }
    this.tick += 1;
    this.ws.send(encodePilotAction(this.tick, inputToAction(this.held)));
  }

  setAlpha(alpha: number): void {
    this.state.alphaSent = alpha;
    if (this.ws !== null && this.state.connected) {
      this.ws.send(encodeSetAlpha(alpha));
    }
    this.emit();
  }

  reset(seed: number): void {
    if (this.ws !== null && this.state.connected) {
      this.ws.send(encodeReset(seed));
    }
  }

  keyDown(key: string): void {
    this.held.add(key);
  }

  keyUp(key: string): void {
    this.held.delete(key);
  }

  outcome(): OutcomeName {
    return this.state.frame?.outcome ?? "running";
  }

  private emit(): void {
    this.events.onChange?.(this.state);
  }
}
