// Wire protocol "gpa/1": frame messages in, intent messages out.

declare const Buffer: { from(s: string, enc: string): { toString(enc: string): string } };

export const PROTOCOL_VERSION = 'gpa/1';

export interface DepthBlock {
  width: number;
  height: number;
  encoding: string; // "u16le-mm"
  data: string;     // base64
}

export interface CameraInfo {
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
}

export interface FrameMetrics {
  ring_success_rate: number | null;
  topo_stability: number | null;
  collided: boolean;
  goal_reached: boolean;
  speed: number;
  desired_speed: number;
  last_solve_ms: number | null;
}

export interface FrameMessage {
  type: 'frame';
  version: string;
  t: number;
  pose: { position: number[]; yaw: number };
  intent: { u: number; v: number; valid: boolean; speed: number };
  target: number[] | null;
  topoWaypoints: number[][];
  trajSamples: number[][];
  metrics: FrameMetrics;
  depth: DepthBlock | null;
  camera: CameraInfo;
  done: boolean;
}

export type GazeMessage = { type: 'gaze'; u: number; v: number; valid: boolean };
export type SpeedMessage = { type: 'speed'; value: number };
export type PauseMessage = { type: 'pause' };
export type ClientMessage = GazeMessage | SpeedMessage | PauseMessage;

export function gazeMessage(u: number, v: number, valid: boolean): GazeMessage {
  return { type: 'gaze', u: clamp01(u), v: clamp01(v), valid };
}

export function speedMessage(value: number): SpeedMessage {
  return { type: 'speed', value: Math.max(0, value) };
}

export function clamp01(x: number): number {
  return Math.min(1, Math.max(0, x));
}

export function parseFrame(raw: string): FrameMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  const m = msg as Partial<FrameMessage>;
  if (!m || m.type !== 'frame') return null;
  if (m.version !== PROTOCOL_VERSION) {
    console.warn(`unexpected protocol version ${m.version}`);
  }
  return m as FrameMessage;
}

// base64 u16le millimetres -> metres; 0 stays 0 ("no data")
export function decodeDepth(block: DepthBlock): Float64Array {
  const bin = typeof atob === 'function'
    ? atob(block.data)
    : Buffer.from(block.data, 'base64').toString('binary');
  const n = block.width * block.height;
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    const lo = bin.charCodeAt(2 * i);
    const hi = bin.charCodeAt(2 * i + 1);
    out[i] = ((hi << 8) | lo) / 1000.0;
  }
  return out;
}

export function encodeDepthMm(mm: Uint16Array): string {
  let bin = '';
  for (let i = 0; i < mm.length; i++) {
    bin += String.fromCharCode(mm[i] & 0xff, (mm[i] >> 8) & 0xff);
  }
  return typeof btoa === 'function' ? btoa(bin) : Buffer.from(bin, 'binary').toString('base64');
}
