// Held-key set -> continuous action in [-1, 1]^2.
// Additive mapping with clipping: opposing keys cancel, no keys give (0, 0).

const LEFT = ["ArrowLeft", "a", "A"];
const RIGHT = ["ArrowRight", "d", "D"];
const UP = ["ArrowUp", "w", "W"];
const DOWN = ["ArrowDown", "s", "S"];

function clip(v: number): number {
  return Math.max(-1, Math.min(1, v));
}

export function inputToAction(held: ReadonlySet<string>): [number, number] {
  let x = 0;
  let y = 0;
  for (const k of held) {
    if (LEFT.includes(k)) x -= 1;
    else if (RIGHT.includes(k)) x += 1;
    else if (UP.includes(k)) y += 1;
    else if (DOWN.includes(k)) y -= 1;
  }
  // clip(+0) keeps plain zero so encoded frames never carry "-0"
  return [clip(x) + 0, clip(y) + 0];
}

export const TRACKED_KEYS = [...LEFT, ...RIGHT, ...UP, ...DOWN];
