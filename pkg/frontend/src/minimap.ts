// Top-down breadcrumb of the walked trajectory, derived from the pose log.
// World x/z map to canvas x/y; the fit keeps the whole trail in view.

import type { Pose } from "./api.js";

export type Point = { x: number; y: number };

export function trailPoints(poses: Pose[]): Point[] {
  return poses.map((p) => ({ x: p.translation[0], y: p.translation[2] }));
}

export type Fit = { scale: number; ox: number; oy: number };

export function fitTransform(points: Point[], width: number, height: number, pad = 12): Fit {
  if (points.length === 0) return { scale: 1, ox: width / 2, oy: height / 2 };
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const span = Math.max(Math.max(...xs) - Math.min(...xs), Math.max(...ys) - Math.min(...ys), 1.0);
  const scale = (Math.min(width, height) - 2 * pad) / span;
  const cx = (Math.max(...xs) + Math.min(...xs)) / 2;
  const cy = (Math.max(...ys) + Math.min(...ys)) / 2;
  return { scale, ox: width / 2 - cx * scale, oy: height / 2 - cy * scale };
}

export function apply(fit: Fit, p: Point): Point {
  return { x: p.x * fit.scale + fit.ox, y: p.y * fit.scale + fit.oy };
}

export function headingAngle(pose: Pose): number {
  // forward axis is the third rotation column (x, z components)
  return Math.atan2(pose.rotation[2], pose.rotation[8]);
}

export function drawTrail(
  ctx: CanvasRenderingContext2D,
  poses: Pose[],
  width: number,
  height: number,
  cursor: number,
): void {
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#141820";
  ctx.fillRect(0, 0, width, height);
  const pts = trailPoints(poses);
  if (pts.length === 0) return;
  const fit = fitTransform(pts, width, height);
  ctx.strokeStyle = "#5f83b5";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  pts.forEach((p, i) => {
    const q = apply(fit, p);
    if (i === 0) ctx.moveTo(q.x, q.y);
    else ctx.lineTo(q.x, q.y);
  });
  ctx.stroke();
  pts.forEach((p, i) => {
    const q = apply(fit, p);
    ctx.fillStyle = i === cursor ? "#ffcf5f" : "#8fb4e8";
    ctx.beginPath();
    ctx.arc(q.x, q.y, i === cursor ? 4 : 2.2, 0, Math.PI * 2);
    ctx.fill();
  });
  // heading tick on the current pose
  const cur = poses[Math.min(cursor, poses.length - 1)];
  const q = apply(fit, pts[Math.min(cursor, pts.length - 1)]);
  const a = headingAngle(cur);
  ctx.strokeStyle = "#ffcf5f";
  ctx.beginPath();
  ctx.moveTo(q.x, q.y);
  ctx.lineTo(q.x + 10 * Math.sin(a), q.y + 10 * Math.cos(a));
  ctx.stroke();
}
