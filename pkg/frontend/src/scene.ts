// Pure scene construction from the latest server frame, plus a canvas
// renderer for the resulting node list.  Keeping buildScene pure (no canvas,
// no clocks) lets the tests snapshot the scene graph deterministically.
// The client never simulates: every node derives from server-sent state.

import type { EnvName, StateFrame, StepResult } from "./protocol.js";

export type SceneNode =
  | { kind: "rect"; x: number; y: number; w: number; h: number; color: string; fill: boolean }
  | { kind: "circle"; x: number; y: number; r: number; color: string; fill: boolean }
  | { kind: "line"; x1: number; y1: number; x2: number; y2: number; color: string; width: number }
  | { kind: "arrow"; x: number; y: number; dx: number; dy: number; color: string; width: number; label: string }
  | { kind: "text"; x: number; y: number; text: string; color: string; size: number }
  | { kind: "banner"; text: string; color: string };

export interface SceneInputs {
  env: EnvName;
  frame: StateFrame | null;       // latest server state, if any
  step: StepResult | null;        // latest step_result, if any
  alphaSent: number;              // slider position
  alphaAcked: number | null;      // server-acknowledged value
  connected: boolean;
  malformed: boolean;             // a frame failed validation
}

const ARENA = { xmin: -1, xmax: 1, ymin: -1, ymax: 1 };
const PAD_HALF_WIDTH = 0.15;
const SLOT_HALF_WIDTH = 0.08;
const WALL_X = 0.8;
const ARROW_SCALE = 0.25;

function round6(v: number): number {
  return Math.round(v * 1e6) / 1e6;
}

export function buildScene(inputs: SceneInputs): SceneNode[] {
  const nodes: SceneNode[] = [];
  nodes.push({ kind: "rect", x: ARENA.xmin, y: ARENA.ymin, w: 2, h: 2, color: "#444", fill: false });

  if (inputs.malformed) {
    nodes.push({ kind: "banner", text: "malformed frame from server", color: "#f33" });
    return nodes;
  }
  if (!inputs.connected) {
    nodes.push({ kind: "banner", text: "disconnected", color: "#f80" });
  }
  const frame = inputs.frame;
  if (frame === null) {
    nodes.push({ kind: "text", x: -0.95, y: 0, text: "waiting for session", color: "#999", size: 14 });
    return nodes;
  }

  if (inputs.env === "lander") {
    nodes.push({ kind: "line", x1: ARENA.xmin, y1: 0, x2: ARENA.xmax, y2: 0, color: "#666", width: 1 });
    if (frame.pad_x !== undefined) {
      nodes.push({
        kind: "rect", x: round6(frame.pad_x - PAD_HALF_WIDTH), y: -0.03,
        w: 2 * PAD_HALF_WIDTH, h: 0.03, color: "#2c2", fill: true,
      });
    }
  } else {
    const apertures = [0.5, -0.5];
    let prev = ARENA.ymax;
    for (const ay of apertures) {
      nodes.push({ kind: "line", x1: WALL_X, y1: prev, x2: WALL_X, y2: round6(ay + SLOT_HALF_WIDTH), color: "#888", width: 3 });
      prev = ay - SLOT_HALF_WIDTH;
    }
    nodes.push({ kind: "line", x1: WALL_X, y1: round6(prev), x2: WALL_X, y2: ARENA.ymin, color: "#888", width: 3 });
    if (frame.goal !== undefined) {
      const gy = frame.goal === "upper" ? 0.5 : -0.5;
      nodes.push({
        kind: "rect", x: WALL_X - 0.02, y: round6(gy - SLOT_HALF_WIDTH),
        w: 0.04, h: 2 * SLOT_HALF_WIDTH, color: "#2c2", fill: true,
      });
    }
  }

  nodes.push({ kind: "circle", x: round6(frame.x), y: round6(frame.y), r: 0.035, color: "#6af", fill: true });

  const step = inputs.step;
  if (step !== null) {
    nodes.push({
      kind: "arrow", x: round6(frame.x), y: round6(frame.y),
      dx: round6(step.raw[0] * ARROW_SCALE), dy: round6(step.raw[1] * ARROW_SCALE),
      color: "#fa0", width: 2, label: "raw",
    });
    nodes.push({
      kind: "arrow", x: round6(frame.x), y: round6(frame.y),
      dx: round6(step.assisted[0] * ARROW_SCALE), dy: round6(step.assisted[1] * ARROW_SCALE),
      color: "#0cf", width: 2, label: "assisted",
    });
    nodes.push({
      kind: "text", x: -0.98, y: -0.9,
      text: `nfe ${step.nfe}  latency ${Math.round(step.latency_us)}us`,
      color: "#ccc", size: 12,
    });
  }
  const acked = inputs.alphaAcked === null ? "-" : inputs.alphaAcked.toFixed(2);
  nodes.push({
    kind: "text", x: -0.98, y: -0.8,
    text: `alpha ${inputs.alphaSent.toFixed(2)} (acked ${acked})`,
    color: "#ccc", size: 12,
  });

  if (frame.outcome !== "running") {
    const good = frame.outcome === "success";
    nodes.push({
      kind: "banner",
      text: `${frame.outcome} - press reset`,
      color: good ? "#2c2" : "#f33",
    });
  }
  return nodes;
}

// ---------------------------------------------------------------------------
// Canvas renderer.  World coordinates are [-1, 1]^2 with y up.
// ---------------------------------------------------------------------------

export function drawScene(ctx: CanvasRenderingContext2D, nodes: SceneNode[],
                          width: number, height: number): void {
  const sx = (x: number) => ((x - ARENA.xmin) / 2) * width;
  const sy = (y: number) => height - ((y - ARENA.ymin) / 2) * height;
  const sw = (w: number) => (w / 2) * width;

  ctx.fillStyle = "#111";
  ctx.fillRect(0, 0, width, height);
  for (const n of nodes) {
    switch (n.kind) {
      case "rect":
        if (n.fill) {
          ctx.fillStyle = n.color;
          ctx.fillRect(sx(n.x), sy(n.y + n.h), sw(n.w), sw(n.h));
        } else {
          ctx.strokeStyle = n.color;
          ctx.strokeRect(sx(n.x), sy(n.y + n.h), sw(n.w), sw(n.h));
        }
        break;
      case "circle":
        ctx.beginPath();
        ctx.arc(sx(n.x), sy(n.y), sw(n.r), 0, 2 * Math.PI);
        ctx.fillStyle = n.color;
        if (n.fill) ctx.fill();
        else ctx.stroke();
        break;
      case "line":
        ctx.strokeStyle = n.color;
        ctx.lineWidth = n.width;
        ctx.beginPath();
        ctx.moveTo(sx(n.x1), sy(n.y1));
        ctx.lineTo(sx(n.x2), sy(n.y2));
        ctx.stroke();
        break;
      case "arrow": {
        const x1 = sx(n.x);
        const y1 = sy(n.y);
        const x2 = sx(n.x + n.dx);
        const y2 = sy(n.y + n.dy);
        ctx.strokeStyle = n.color;
        ctx.lineWidth = n.width;
        ctx.beginPath();
        ctx.moveTo(x1, y1);
        ctx.lineTo(x2, y2);
        const angle = Math.atan2(y2 - y1, x2 - x1);
        for (const off of [-0.5, 0.5]) {
          ctx.moveTo(x2, y2);
          ctx.lineTo(x2 - 8 * Math.cos(angle + off), y2 - 8 * Math.sin(angle + off));
        }
        ctx.stroke();
        break;
      }
      case "text":
        ctx.fillStyle = n.color;
        ctx.font = `${n.size}px monospace`;
        ctx.fillText(n.text, sx(n.x), sy(n.y));
        break;
      case "banner":
        ctx.fillStyle = n.color;
        ctx.font = "bold 22px monospace";
        ctx.textAlign = "center";
        ctx.fillText(n.text, width / 2, height / 3);
        ctx.textAlign = "start";
        break;
    }
  }
}
