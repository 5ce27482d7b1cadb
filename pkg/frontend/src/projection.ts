// Pinhole projection of world points into the FPV view for overlays.
// Mirrors the server's camera model: body x forward / y left / z up,
// camera x right / y down / z forward, yaw-only attitude.

import type { CameraInfo } from './protocol.js';

export interface Pose {
  position: number[];
  yaw: number;
}

// world -> camera coordinates
export function worldToCamera(p: number[], pose: Pose): [number, number, number] {
  const dx = p[0] - pose.position[0];
  const dy = p[1] - pose.position[1];
  const dz = p[2] - pose.position[2];
  const c = Math.cos(pose.yaw);
  const s = Math.sin(pose.yaw);
  // body frame
  const bx = c * dx + s * dy;
  const by = -s * dx + c * dy;
  const bz = dz;
  // camera frame: x = -by (right), y = -bz (down), z = bx (forward)
  return [-by, -bz, bx];
}

export function projectToPixel(
  p: number[],
  pose: Pose,
  cam: CameraInfo,
): { u: number; v: number; depth: number } | null {
  const [xc, yc, zc] = worldToCamera(p, pose);
  if (zc <= 1e-6) return null;
  return {
    u: cam.fx * (xc / zc) + cam.cx,
    v: cam.fy * (yc / zc) + cam.cy,
    depth: zc,
  };
}
