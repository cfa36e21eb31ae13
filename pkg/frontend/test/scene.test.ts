import { describe, expect, it } from "vitest";
import { buildScene, SceneNode } from "../src/scene.js";
import type { StateFrame, StepResult } from "../src/protocol.js";

const frame: StateFrame = {
  x: 0.1, y: 0.5, vx: 0.02, vy: -0.1, pad_x: -0.2, outcome: "running",
};

function step(raw: number[], assisted: number[],
              outcome: StateFrame["outcome"] = "running"): StepResult {
  return {
    type: "step_result", tick: 3, state: { ...frame, outcome }, raw, assisted,
    outcome, nfe: 1, latency_us: 120, alpha: 0.5,
  };
}

const base = {
  env: "lander" as const, frame, step: step([0.4, 0.8], [0.1, 0.6]),
  alphaSent: 0.5, alphaAcked: 0.5, connected: true, malformed: false,
};

function arrows(nodes: SceneNode[]) {
  return nodes.filter((n): n is Extract<SceneNode, { kind: "arrow" }> =>
    n.kind === "arrow");
}

describe("buildScene", () => {
  it("matches the golden scene snapshot", () => {
    expect(buildScene(base)).toMatchSnapshot();
  });

  it("draws coinciding arrows when assistance is off", () => {
    const s = step([0.3, -0.2], [0.3, -0.2]);
    const nodes = buildScene({ ...base, step: s, alphaSent: 0, alphaAcked: 0 });
    const [raw, assisted] = arrows(nodes);
    expect(raw.dx).toBe(assisted.dx);
    expect(raw.dy).toBe(assisted.dy);
  });

  it("draws distinct raw and assisted arrows otherwise", () => {
    const [raw, assisted] = arrows(buildScene(base));
    expect(raw.label).toBe("raw");
    expect(assisted.label).toBe("assisted");
    expect(raw.color).not.toBe(assisted.color);
    expect(raw.dx).not.toBe(assisted.dx);
  });

  it("shows a success banner on a terminal frame", () => {
    const s = step([0, 0], [0, 0], "success");
    const nodes = buildScene({ ...base, frame: s.state, step: s });
    const banner = nodes.find((n) => n.kind === "banner");
    expect(banner && banner.kind === "banner" && banner.text).toContain("success");
  });

  it("shows an error banner and nothing else on a malformed frame", () => {
    const nodes = buildScene({ ...base, malformed: true });
    const banner = nodes.find((n) => n.kind === "banner");
    expect(banner && banner.kind === "banner" && banner.text).toContain("malformed");
    expect(arrows(nodes)).toHaveLength(0);
  });

  it("renders only server state: no agent before the first frame", () => {
    const nodes = buildScene({ ...base, frame: null, step: null });
    expect(nodes.some((n) => n.kind === "circle")).toBe(false);
  });

  it("marks the goal slot only when the server sent one", () => {
    const slotFrame: StateFrame = {
      x: -0.5, y: 0.0, vx: 0, vy: 0, goal: "upper", outcome: "running",
    };
    const nodes = buildScene({ ...base, env: "slot", frame: slotFrame, step: null });
    const goalRect = nodes.filter((n) => n.kind === "rect" && n.fill);
    expect(goalRect).toHaveLength(1);
  });

  it("is deterministic", () => {
    expect(JSON.stringify(buildScene(base)))
      .toBe(JSON.stringify(buildScene(base)));
  });
});
