"""Full-duplex session server: streams frames to the cockpit, applies its intent.

Protocol "gpa/1" over a websocket at /session.  Client messages:
{"type":"gaze","u":0..1,"v":0..1,"valid":bool}, {"type":"speed","value":m/s},
{"type":"pause"}.  The newest intent before a tick is the one applied at that
tick (single-slot mailbox, latest wins); frames flow back the same way.
"""

from __future__ import annotations

import asyncio
import base64
import json
import logging
import time

import numpy as np

from .sim import Simulation

log = logging.getLogger(__name__)

__all__ = ["encode_frame", "decode_depth", "serve", "BridgeSession"]

PROTOCOL_VERSION = "gpa/1"
MAX_DEPTH_W = 160
MAX_DEPTH_H = 120


def encode_frame(sim: Simulation, applied_intent) -> dict:
    """Frame message: pose, intent echo, topo waypoints, trajectory, depth raster."""
    v = sim.vehicle
    frame = sim.last_frame
    depth_block = None
    if frame is not None:
        d = frame.depth
        step = max(1, int(np.ceil(max(d.shape[1] / MAX_DEPTH_W, d.shape[0] / MAX_DEPTH_H))))
        d = d[::step, ::step]
        mm = np.clip(d * 1000.0, 0, 65535).astype("<u2")
        mm[d <= 0.0] = 0
        depth_block = {
            "width": int(mm.shape[1]),
            "height": int(mm.shape[0]),
            "encoding": "u16le-mm",
            "data": base64.b64encode(mm.tobytes()).decode("ascii"),
        }
    topo = sim.last_topo
    waypoints = topo.waypoints.tolist() if topo is not None else []
    target = None
    if sim.pipeline.state is not None and sim.pipeline.state.local_target is not None:
        target = sim.pipeline.state.local_target.tolist()
    plan = sim.active_plan(v.t)
    samples = []
    if plan is not None:
        horizon = min(2.0, plan.traj.total_time - (v.t - plan.t_start))
        for k in range(int(horizon * 20) + 1):
            tau = v.t - plan.t_start + k / 20.0
            tau = min(max(tau, 0.0), plan.traj.total_time)
            p = plan.traj.eval(tau)
            samples.append([round(float(x), 4) for x in p])
    u, v_, valid, speed = applied_intent
    m = sim.metrics
    return {
        "type": "frame",
        "version": PROTOCOL_VERSION,
        "t": v.t,
        "pose": {"position": v.position.tolist(), "yaw": v.yaw},
        "intent": {"u": u, "v": v_, "valid": bool(valid), "speed": speed},
        "target": target,
        "topoWaypoints": waypoints,
        "trajSamples": samples,
        "metrics": {
            "ring_success_rate": m.success_rate,
            "topo_stability": m.topo_stability,
            "collided": m.collided,
            "goal_reached": m.goal_reached,
            "speed": float(np.linalg.norm(v.velocity)),
            "desired_speed": speed,
            "last_solve_ms": sim.solve_times[-1] if sim.solve_times else None,
        },
        "depth": depth_block,
        "camera": {"width": sim.cam.width, "height": sim.cam.height,
                   "fx": sim.cam.fx, "fy": sim.cam.fy, "cx": sim.cam.cx, "cy": sim.cam.cy},
        "done": sim.done,
    }


def decode_depth(block: dict) -> np.ndarray:
    """Inverse of the frame raster encoding; 0 mm stays 'no data'."""
    raw = base64.b64decode(block["data"])
    mm = np.frombuffer(raw, dtype="<u2").reshape(block["height"], block["width"])
    return mm.astype(np.float64) / 1000.0


class BridgeSession:
    """One live simulation driven at real-time rate with latest-wins mailboxes."""

    def __init__(self, scenario: dict, seed: int = 0, record_trace_path=None,
                 realtime: bool = True):
        self.recorder = [] if record_trace_path else None
        self.record_trace_path = record_trace_path
        self.sim = Simulation(scenario, seed=seed, record_trace=self.recorder)
        self.intent = (0.5, 0.5, False, 0.0)   # hover until a client speaks
        self.paused = False
        self.connected = False
        self.realtime = realtime
        self.frame_json: str | None = None
        self.frame_event = asyncio.Event()

    def apply_message(self, msg: dict) -> None:
        kind = msg.get("type")
        u, v, valid, speed = self.intent
        if kind == "gaze":
            self.intent = (float(np.clip(msg.get("u", 0.5), 0, 1)),
                           float(np.clip(msg.get("v", 0.5), 0, 1)),
                           bool(msg.get("valid", True)), speed)
        elif kind == "speed":
            self.intent = (u, v, valid, float(max(0.0, msg.get("value", 0.0))))
            self.paused = False
        elif kind == "pause":
            self.paused = True
        else:
            log.warning("ignoring unknown client message type: %r", kind)

    def tick_once(self) -> dict:
        u, v, valid, speed = self.intent
        if self.paused or not self.connected:
            speed = 0.0
        applied = (u, v, valid, speed)
        self.sim.live_intent = applied
        self.sim.tick()
        return encode_frame(self.sim, applied)

    async def run(self, stop: asyncio.Event) -> None:
        loop = asyncio.get_running_loop()
        dt = self.sim.dt
        next_deadline = loop.time()
        while not stop.is_set() and not self.sim.done:
            frame = await loop.run_in_executor(None, self.tick_once)
            self.frame_json = json.dumps(frame)
            self.frame_event.set()
            if self.realtime:
                next_deadline += dt
                delay = next_deadline - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_deadline = loop.time()
            else:
                await asyncio.sleep(0)
        if self.record_trace_path and self.recorder is not None:
            from .intent import write_trace

            write_trace(self.record_trace_path, self.recorder)


async def serve(scenario: dict, port: int = 8765, seed: int = 0,
                record_trace_path=None, realtime: bool = True, ready=None,
                stop: asyncio.Event | None = None):
    """Serve /session until the scenario finishes or `stop` is set."""
    import websockets

    session = BridgeSession(scenario, seed=seed, record_trace_path=record_trace_path,
                            realtime=realtime)
    stop = stop or asyncio.Event()

    async def handler(ws):
        path = ws.request.path if hasattr(ws, "request") else "/session"
        if not path.startswith("/session"):
            await ws.close(code=4004, reason="unknown endpoint")
            return
        session.connected = True
        log.info("cockpit connected")

        async def pump_out():
            while not session.sim.done:
                await session.frame_event.wait()
                session.frame_event.clear()
                if session.frame_json is not None:
                    await ws.send(session.frame_json)

        out_task = asyncio.create_task(pump_out())
        try:
            async for raw in ws:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    log.warning("ignoring undecodable client message")
                    continue
                session.apply_message(msg)
        finally:
            out_task.cancel()
            session.connected = False
            session.paused = True
            log.info("cockpit disconnected; holding hover")

    async with websockets.serve(handler, "127.0.0.1", port):
        if ready is not None:
            ready.set()
        await session.run(stop)
    return session
