// Cockpit wiring: session controls, FPV canvas, intent capture, metrics panel.

import { IntentCapture } from './intent.js';
import { FpvRenderer } from './render.js';
import { SessionClient } from './session.js';

function el<T extends HTMLElement>(id: string): T {
  return document.getElementById(id) as T;
}

function main(): void {
  const canvas = el<HTMLCanvasElement>('fpv');
  const renderer = new FpvRenderer(canvas);
  const session = new SessionClient();
  const intent = new IntentCapture((m) => session.send(m));
  const status = el<HTMLSpanElement>('status');
  const urlBox = el<HTMLInputElement>('url');
  const slider = el<HTMLInputElement>('speed');
  const picker = el<HTMLSelectElement>('scenario');
  picker.onchange = () => {
    urlBox.value = picker.value;
  };

  intent.attach(canvas, slider);

  el<HTMLButtonElement>('connect').onclick = () => session.connect(urlBox.value);
  el<HTMLButtonElement>('disconnect').onclick = () => session.disconnect();
  el<HTMLButtonElement>('pause').onclick = () => {
    session.pause();
    slider.value = '0';
  };

  session.onState = (s) => {
    status.textContent = s;
    status.className = s;
  };
  const cell = (id: string) => el<HTMLTableCellElement>(id);
  session.onFrame = (frame) => {
    renderer.render(frame, intent.currentGaze());
    const m = frame.metrics;
    cell('m-speed').textContent = m.speed.toFixed(2) + ' m/s';
    cell('m-desired').textContent = m.desired_speed.toFixed(2) + ' m/s';
    cell('m-rings').textContent = m.ring_success_rate === null ? '-' : m.ring_success_rate.toFixed(2);
    cell('m-topo').textContent = m.topo_stability === null ? 'inf' : m.topo_stability.toFixed(2);
    cell('m-solve').textContent = m.last_solve_ms === null ? '-' : m.last_solve_ms.toFixed(1) + ' ms';
    cell('m-state').textContent = m.collided ? 'collided' : m.goal_reached ? 'goal' : frame.done ? 'ended' : 'flying';
  };

  setInterval(() => {
    renderer.maybeStalled(performance.now());
  }, 400);
}

window.addEventListener('DOMContentLoaded', main);
