// Websocket session lifecycle with a latest-frame slot; all authority is server-side.

import { ClientMessage, FrameMessage, parseFrame } from './protocol.js';

export type SessionState = 'disconnected' | 'connecting' | 'connected';

export class SessionClient {
  state: SessionState = 'disconnected';
  latest: FrameMessage | null = null;
  onFrame: ((f: FrameMessage) => void) | null = null;
  onState: ((s: SessionState) => void) | null = null;
  private ws: WebSocket | null = null;

  connect(url: string): void {
    this.disconnect();
    this.setState('connecting');
    const ws = new WebSocket(url);
    this.ws = ws;
    ws.onopen = () => this.setState('connected');
    ws.onclose = () => this.setState('disconnected');
    ws.onerror = () => this.setState('disconnected');
    ws.onmessage = (ev) => {
      const frame = parseFrame(String(ev.data));
      if (frame) {
        this.latest = frame;
        if (this.onFrame) this.onFrame(frame);
      }
    };
  }

  send(msg: ClientMessage): void {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(JSON.stringify(msg));
    }
  }

  pause(): void {
    this.send({ type: 'pause' });
  }

  disconnect(): void {
    if (this.ws) {
      this.ws.onclose = null;
      this.ws.close();
      this.ws = null;
    }
    this.setState('disconnected');
  }

  private setState(s: SessionState): void {
    this.state = s;
    if (this.onState) this.onState(s);
  }
}
