// Keyboard bindings: every bound key maps to exactly one camera delta, so
// each keypress corresponds to one generated frame.

import type { Delta } from "./api.js";

export type ControlBinding = {
  forwardStep: number; // world units, (0, 1]
  strafeStep: number;  // world units, (0, 1]
  yawStepDeg: number;  // degrees, (0, 45]
};

export const DEFAULT_BINDING: ControlBinding = {
  forwardStep: 0.25,
  strafeStep: 0.25,
  yawStepDeg: 15,
};

const clamp = (v: number, lo: number, hi: number) => Math.min(Math.max(v, lo), hi);

export function clampBinding(b: ControlBinding): ControlBinding {
  return {
    forwardStep: clamp(b.forwardStep, 1e-6, 1.0),
    strafeStep: clamp(b.strafeStep, 1e-6, 1.0),
    yawStepDeg: clamp(b.yawStepDeg, 1e-6, 45.0),
  };
}

export function keyToDelta(key: string, binding: ControlBinding = DEFAULT_BINDING): Delta | null {
  switch (key.length === 1 ? key.toUpperCase() : key) {
    case "W":
      return { forward: binding.forwardStep, strafe: 0, yaw_deg: 0 };
    case "S":
      return { forward: -binding.forwardStep, strafe: 0, yaw_deg: 0 };
    case "A":
      return { forward: 0, strafe: -binding.strafeStep, yaw_deg: 0 };
    case "D":
      return { forward: 0, strafe: binding.strafeStep, yaw_deg: 0 };
    case "ArrowLeft":
      return { forward: 0, strafe: 0, yaw_deg: -binding.yawStepDeg };
    case "ArrowRight":
      return { forward: 0, strafe: 0, yaw_deg: binding.yawStepDeg };
    default:
      return null;
  }
}
