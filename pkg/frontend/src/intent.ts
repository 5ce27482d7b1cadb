// Mouse-as-gaze and throttle capture -> normalized client messages.

import { ClientMessage, clamp01, gazeMessage, speedMessage } from './protocol.js';

export interface Rect {
  left: number;
  top: number;
  width: number;
  height: number;
}

export function normalizeGaze(clientX: number, clientY: number, rect: Rect) {
  return {
    u: clamp01((clientX - rect.left) / rect.width),
    v: clamp01((clientY - rect.top) / rect.height),
  };
}

export class IntentCapture {
  speed = 0;
  maxSpeed: number;
  private gaze = { u: 0.5, v: 0.5, valid: false };
  private send: (msg: ClientMessage) => void;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(send: (msg: ClientMessage) => void, maxSpeed = 2.5) {
    this.send = send;
    this.maxSpeed = maxSpeed;
  }

  attach(canvas: HTMLCanvasElement, slider: HTMLInputElement): void {
    canvas.addEventListener('pointermove', (ev) => {
      const r = canvas.getBoundingClientRect();
      const g = normalizeGaze(ev.clientX, ev.clientY, r);
      this.gaze = { ...g, valid: true };
    });
    canvas.addEventListener('pointerleave', () => {
      this.gaze = { ...this.gaze, valid: false }; // blink analogue
    });
    canvas.addEventListener('pointerenter', () => {
      this.gaze = { ...this.gaze, valid: true };
    });
    slider.addEventListener('input', () => {
      this.setSpeed(parseFloat(slider.value));
    });
    window.addEventListener('keydown', (ev) => {
      if (ev.key === 'ArrowUp') this.setSpeed(this.speed + 0.1);
      if (ev.key === 'ArrowDown') this.setSpeed(this.speed - 0.1);
      slider.value = this.speed.toFixed(2);
    });
    // gaze stream at 30 Hz (>= 20 Hz budget)
    this.timer = setInterval(() => {
      this.send(gazeMessage(this.gaze.u, this.gaze.v, this.gaze.valid));
    }, 33);
  }

  setSpeed(v: number): void {
    this.speed = Math.min(this.maxSpeed, Math.max(0, v));
    this.send(speedMessage(this.speed));
  }

  currentGaze() {
    return { ...this.gaze };
  }

  detach(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }
}
