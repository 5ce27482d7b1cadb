// FPV canvas renderer: depth raster, gaze reticle, topo waypoints, trajectory, HUD.

import { decodeDepth, FrameMessage } from './protocol.js';
import { projectToPixel } from './projection.js';

// depth -> grayscale levels (near = bright); 0 depth renders as dark blue "no data"
export function depthToRgba(depth: Float64Array, maxRange = 8.0): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(depth.length * 4));
  for (let i = 0; i < depth.length; i++) {
    const d = depth[i];
    const o = i * 4;
    if (d <= 0) {
      out[o] = 8;
      out[o + 1] = 10;
      out[o + 2] = 36;
    } else {
      const g = Math.max(0, Math.min(255, Math.round(255 * (1 - d / maxRange))));
      out[o] = g;
      out[o + 1] = g;
      out[o + 2] = g;
    }
    out[o + 3] = 255;
  }
  return out;
}

export class FpvRenderer {
  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private raster: HTMLCanvasElement;
  private lastFrameAt = 0;

  constructor(canvas: HTMLCanvasElement) {
    this.canvas = canvas;
    this.ctx = canvas.getContext('2d')!;
    this.raster = document.createElement('canvas');
  }

  render(frame: FrameMessage, gaze: { u: number; v: number; valid: boolean }): void {
    this.lastFrameAt = performance.now();
    const ctx = this.ctx;
    const W = this.canvas.width;
    const H = this.canvas.height;
    ctx.fillStyle = '#05060f';
    ctx.fillRect(0, 0, W, H);

    if (frame.depth) {
      const { width, height } = frame.depth;
      const rgba = depthToRgba(decodeDepth(frame.depth));
      this.raster.width = width;
      this.raster.height = height;
      this.raster.getContext('2d')!.putImageData(new ImageData(rgba, width, height), 0, 0);
      ctx.imageSmoothingEnabled = false;
      ctx.drawImage(this.raster, 0, 0, W, H);
    }

    const cam = frame.camera;
    const sx = W / cam.width;
    const sy = H / cam.height;

    // planned trajectory ribbon
    if (frame.trajSamples.length > 1) {
      ctx.strokeStyle = 'rgba(80, 220, 120, 0.9)';
      ctx.lineWidth = 2;
      ctx.beginPath();
      let pen = false;
      for (const p of frame.trajSamples) {
        const px = projectToPixel(p, frame.pose, cam);
        if (!px) {
          pen = false;
          continue;
        }
        if (pen) ctx.lineTo(px.u * sx, px.v * sy);
        else ctx.moveTo(px.u * sx, px.v * sy);
        pen = true;
      }
      ctx.stroke();
    }

    // topological waypoints
    for (const w of frame.topoWaypoints) {
      const px = projectToPixel(w, frame.pose, cam);
      if (!px) continue;
      ctx.strokeStyle = '#49b6ff';
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.arc(px.u * sx, px.v * sy, Math.max(6, 80 / px.depth), 0, 2 * Math.PI);
      ctx.stroke();
    }

    // gaze reticle (red circle, as on the operator's view)
    if (gaze.valid) {
      ctx.strokeStyle = '#ff4545';
      ctx.lineWidth = 2.5;
      ctx.beginPath();
      ctx.arc(gaze.u * W, gaze.v * H, 14, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.beginPath();
      ctx.arc(gaze.u * W, gaze.v * H, 2, 0, 2 * Math.PI);
      ctx.fillStyle = '#ff4545';
      ctx.fill();
    }

    this.drawHud(frame);
  }

  private drawHud(frame: FrameMessage): void {
    const ctx = this.ctx;
    const m = frame.metrics;
    ctx.fillStyle = 'rgba(0,0,0,0.55)';
    ctx.fillRect(8, 8, 240, 86);
    ctx.fillStyle = '#e8e8e8';
    ctx.font = '13px monospace';
    ctx.fillText(`t=${frame.t.toFixed(1)}s  speed ${m.speed.toFixed(2)} / ${m.desired_speed.toFixed(2)} m/s`, 16, 26);
    const sr = m.ring_success_rate === null ? '-' : m.ring_success_rate.toFixed(2);
    const ts = m.topo_stability === null ? 'inf' : m.topo_stability.toFixed(2);
    ctx.fillText(`rings S=${sr}  Ts=${ts}`, 16, 44);
    ctx.fillText(`solve ${m.last_solve_ms === null ? '-' : m.last_solve_ms.toFixed(1)} ms`, 16, 62);
    if (m.collided) {
      this.banner('COLLISION');
    } else if (m.goal_reached) {
      this.banner('GOAL REACHED');
    } else if (frame.done) {
      this.banner('SESSION ENDED');
    }
  }

  banner(text: string): void {
    const ctx = this.ctx;
    ctx.fillStyle = 'rgba(0,0,0,0.6)';
    ctx.fillRect(0, this.canvas.height / 2 - 28, this.canvas.width, 56);
    ctx.fillStyle = '#ffda55';
    ctx.font = 'bold 28px sans-serif';
    ctx.textAlign = 'center';
    ctx.fillText(text, this.canvas.width / 2, this.canvas.height / 2 + 10);
    ctx.textAlign = 'left';
  }

  // "stalled" banner if nothing arrived recently; last raster stays up
  maybeStalled(now: number, staleMs = 1200): boolean {
    if (this.lastFrameAt > 0 && now - this.lastFrameAt > staleMs) {
      this.banner('STALLED');
      return true;
    }
    return false;
  }
}
