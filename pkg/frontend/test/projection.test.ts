import { describe, expect, it } from 'vitest';

import { projectToPixel, worldToCamera } from '../src/projection.js';

const cam = { width: 160, height: 120, fx: 88, fy: 88, cx: 80, cy: 60 };

describe('projection', () => {
  it('puts a point straight ahead on the principal point (reticle center)', () => {
    const pose = { position: [1, 2, 1.5], yaw: 0 };
    const px = projectToPixel([4, 2, 1.5], pose, cam)!;
    expect(px.u).toBeCloseTo(cam.cx, 6);
    expect(px.v).toBeCloseTo(cam.cy, 6);
    expect(px.depth).toBeCloseTo(3, 6);
  });

  it('respects yaw', () => {
    const pose = { position: [0, 0, 1], yaw: Math.PI / 2 };
    const px = projectToPixel([0, 5, 1], pose, cam)!;
    expect(px.u).toBeCloseTo(cam.cx, 6);
    expect(px.depth).toBeCloseTo(5, 6);
    // a point to the camera's right (world +x after +90 yaw -> right side)
    const right = projectToPixel([1, 5, 1], pose, cam)!;
    expect(right.u).toBeGreaterThan(cam.cx);
  });

  it('returns null behind the camera', () => {
    const pose = { position: [0, 0, 1], yaw: 0 };
    expect(projectToPixel([-2, 0, 1], pose, cam)).toBeNull();
  });

  it('camera frame axes follow body x-forward / z-up', () => {
    const pose = { position: [0, 0, 0], yaw: 0 };
    const [xc, yc, zc] = worldToCamera([2, 1, 0.5], pose);
    expect(zc).toBeCloseTo(2); // forward
    expect(xc).toBeCloseTo(-1); // left in world -> negative camera x
    expect(yc).toBeCloseTo(-0.5); // up in world -> negative camera y
  });
});
