// DOM wiring: canvas, controls, keyboard capture.

import { GameClient } from "./client.js";
import { TRACKED_KEYS } from "./input.js";
import type { CopilotName, EnvName } from "./protocol.js";
import { buildScene, drawScene } from "./scene.js";

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const envSel = document.getElementById("env") as HTMLSelectElement;
const copilotSel = document.getElementById("copilot") as HTMLSelectElement;
const alphaSlider = document.getElementById("alpha") as HTMLInputElement;
const alphaLabel = document.getElementById("alpha-label") as HTMLSpanElement;
const seedInput = document.getElementById("seed") as HTMLInputElement;
const urlInput = document.getElementById("url") as HTMLInputElement;
const connectBtn = document.getElementById("connect") as HTMLButtonElement;
const resetBtn = document.getElementById("reset") as HTMLButtonElement;
const statusLine = document.getElementById("status") as HTMLDivElement;

const client = new GameClient({ onChange: render });

function render(): void {
  const s = client.state;
  const nodes = buildScene({
    env: envSel.value as EnvName,
    frame: s.frame,
    step: s.step,
    alphaSent: s.alphaSent,
    alphaAcked: s.alphaAcked,
    connected: s.connected,
    malformed: s.malformed,
  });
  drawScene(ctx, nodes, canvas.width, canvas.height);
  const acked = s.alphaAcked === null ? "-" : s.alphaAcked.toFixed(2);
  alphaLabel.textContent = `${s.alphaSent.toFixed(2)} (acked ${acked})`;
  statusLine.textContent = [
    s.connected ? "connected" : "disconnected",
    s.episodeOver ? "episode over" : "",
    s.droppedTicks ? `dropped ${s.droppedTicks}` : "",
    s.lastError,
  ].filter(Boolean).join(" | ");
}

connectBtn.addEventListener("click", () => {
  client.connect(urlInput.value, envSel.value as EnvName,
                 copilotSel.value as CopilotName,
                 parseFloat(alphaSlider.value),
                 parseInt(seedInput.value, 10) || 0);
});

resetBtn.addEventListener("click", () => {
  client.reset(parseInt(seedInput.value, 10) || 0);
});

alphaSlider.addEventListener("input", () => {
  client.setAlpha(parseFloat(alphaSlider.value));
});

window.addEventListener("keydown", (e) => {
  if (TRACKED_KEYS.includes(e.key)) {
    e.preventDefault();
    if (!client.state.episodeOver) client.keyDown(e.key);
  }
});
window.addEventListener("keyup", (e) => {
  if (TRACKED_KEYS.includes(e.key)) {
    e.preventDefault();
    client.keyUp(e.key);
  }
});
// a hidden tab must not keep stale keys pressed
window.addEventListener("blur", () => client.held.clear());

render();
