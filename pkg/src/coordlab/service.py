"""Live play service: a human and a trained agent share real-time episodes.

One WebSocket connection hosts one session. The server drives fixed ticks;
within a tick window the human's latest action wins (Stay when silent), the
agent acts from the previous state only, and every emitted state is exactly
reproducible by replaying the recorded action stream through the engine.

Sessions optionally run in lockstep, ticking on explicit sync messages
instead of the wall clock; recordings and replays are identical either way.
"""

from __future__ import annotations

import asyncio
import json
import uuid
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware

from .agents import CooperatorHandle
from .kitchen import ACTIONS, format_layout, get_layout, reset, step
from .population import Population
from .trajdata import TRAJ_SUFFIX, Trajectory


@dataclass
class SessionConfig:
    layout: str
    agent: str
    duration_s: float = 60.0
    tick_rate: float = 6.0
    human_seat: int = 0
    record: bool = True
    seed: int | None = None
    lockstep: bool = False

    def __post_init__(self):
        if self.tick_rate <= 0:
            raise ValueError("tick_rate must be positive")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.human_seat not in (0, 1):
            raise ValueError("human_seat must be 0 or 1")

    @property
    def total_ticks(self) -> int:
        return max(1, round(self.duration_s * self.tick_rate))

    def validate_layout(self, layout) -> None:
        if self.total_ticks > layout.episode_length:
            raise ValueError(
                f"{self.duration_s}s at {self.tick_rate}Hz needs {self.total_ticks} "
                f"steps but layout {layout.name} allows {layout.episode_length}"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "SessionConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


class AgentRegistry:
    """Read-only id -> handle table; anything with make_agent() qualifies."""

    def __init__(self, handles=()):
        self._handles = {}
        for handle in handles:
            self.add(handle)

    def add(self, handle) -> None:
        if handle.id in self._handles:
            raise ValueError(f"duplicate agent id {handle.id!r}")
        self._handles[handle.id] = handle

    def get(self, agent_id: str):
        return self._handles.get(agent_id)

    def ids(self) -> list:
        return sorted(self._handles)

    def describe(self) -> list:
        return [
            {
                "id": h.id,
                "layout": h.layout_name,
                "version": (h.content_hash or "unversioned")[:12],
            }
            for _, h in sorted(self._handles.items())
        ]

    @classmethod
    def from_dir(cls, directory) -> "AgentRegistry":
        """Collect every cooperator.json and population registry under a tree."""
        registry = cls()
        directory = Path(directory)
        for path in sorted(directory.rglob("cooperator.json")):
            registry.add(CooperatorHandle.load(path))
        for path in sorted(directory.rglob("registry.json")):
            for member in Population.load(path.parent).members:
                registry.add(member)
        return registry


def scripted_registry(layout_name: str, noise: float = 0.0) -> AgentRegistry:
    from .scripted import STYLE_NAMES, scripted_partner

    return AgentRegistry(
        scripted_partner(style, layout_name, noise=noise) for style in STYLE_NAMES
    )


def _error(code: str, detail: str) -> dict:
    return {"type": "error", "code": code, "detail": detail}


class Session:
    """Sequential state machine for one live episode."""

    def __init__(self, config: SessionConfig, handle, record_dir=None):
        self.config = config
        self.layout = get_layout(config.layout)
        config.validate_layout(self.layout)
        self.seed = config.seed if config.seed is not None else int(
            np.random.SeedSequence().entropy % (2**31 - 1)
        )
        self.id = f"{self.layout.name}-{handle.id}-{uuid.uuid4().hex[:8]}"
        self.agent = handle.make_agent()
        self.agent_seat = 1 - config.human_seat
        self.agent.begin_episode(self.layout, self.agent_seat, self.seed + 1)
        self.state = reset(self.layout, self.seed)
        self.tick = 0
        self.actions = []
        self.rewards = []
        self.pending = None  # latest human action this window
        self.record_dir = record_dir
        self.handle_id = handle.id

    def state_message(self) -> dict:
        return {
            "type": "state",
            "tick": self.tick,
            "state": self.state.to_dict(),
            "score": self.state.score,
            "time_left": (self.config.total_ticks - self.tick) / self.config.tick_rate,
        }

    def submit(self, action) -> None:
        self.pending = action

    def advance(self) -> dict:
        """One lockstep tick: agent reads the pre-tick state, the human's
        buffered action applies (Stay when none), both step together."""
        agent_action = self.agent.act(self.state)
        human_action = self.pending if self.pending is not None else "stay"
        self.pending = None
        if self.config.human_seat == 0:
            pair = (human_action, agent_action)
        else:
            pair = (agent_action, human_action)
        self.state, reward, _ = step(self.state, *pair)
        self.actions.append(pair)
        self.rewards.append(reward)
        self.tick += 1
        return self.state_message()

    @property
    def finished(self) -> bool:
        return self.tick >= self.config.total_ticks

    def result(self, incomplete: bool = False) -> dict:
        trajectory_id = None
        if self.config.record and self.record_dir is not None and self.actions:
            traj = Trajectory(
                layout_text=format_layout(self.layout),
                seed=self.seed,
                actions=self.actions,
                rewards=self.rewards,
                source={
                    "kind": "human",
                    "agent": self.handle_id,
                    "human_seat": self.config.human_seat,
                    "session": self.id,
                    "incomplete": incomplete,
                },
                focal_seat=self.config.human_seat,
            )
            record_dir = Path(self.record_dir)
            record_dir.mkdir(parents=True, exist_ok=True)
            traj.save(record_dir / f"{self.id}{TRAJ_SUFFIX}")
            trajectory_id = self.id
        return {
            "type": "result",
            "final_score": self.state.score,
            "trajectory_id": trajectory_id,
            "incomplete": incomplete,
        }


def create_app(registry: AgentRegistry, record_dir=None, time_scale: float = 1.0):
    """The service application; time_scale > 1 speeds real-time ticking up
    (test pacing), lockstep sessions ignore it entirely."""
    app = FastAPI(title="coordlab live sessions")
    # the browser client is typically served from a separate static origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["GET"])
    app.state.registry = registry

    @app.get("/health")
    def health():
        return {"status": "ok", "agents": registry.describe()}

    @app.get("/layouts")
    def layouts():
        names = sorted({entry["layout"] for entry in registry.describe()})
        out = []
        for name in names:
            layout = get_layout(name)
            out.append({
                "name": layout.name,
                "text": format_layout(layout),
                "episode_length": layout.episode_length,
                "cook_time": layout.cook_time,
            })
        return {"layouts": out}

    @app.websocket("/session")
    async def session_socket(ws: WebSocket):
        await ws.accept()
        try:
            session = await _await_join(ws, registry, record_dir)
            if session is None:
                return
            await ws.send_json(session.state_message())
            if session.config.lockstep:
                await _run_lockstep(ws, session)
            else:
                await _run_realtime(ws, session, time_scale)
        except WebSocketDisconnect:
            pass

    return app


async def _await_join(ws, registry, record_dir):
    """Consume messages until a valid join; errors keep the socket open."""
    while True:
        message = await _read(ws)
        if message is None:
            return None
        if message.get("type") != "join":
            await ws.send_json(_error("no-session", "join first"))
            continue
        try:
            config = SessionConfig.from_dict(message.get("config") or {})
        except (TypeError, ValueError) as err:
            await ws.send_json(_error("bad-config", str(err)))
            continue
        handle = registry.get(config.agent)
        if handle is None:
            await ws.send_json(_error(
                "unknown-agent", f"no agent {config.agent!r}; have {registry.ids()}"
            ))
            continue
        if handle.layout_name != config.layout:
            await ws.send_json(_error(
                "layout-mismatch",
                f"agent {handle.id} plays {handle.layout_name}, not {config.layout}",
            ))
            continue
        try:
            return Session(config, handle, record_dir=record_dir)
        except (KeyError, ValueError) as err:
            await ws.send_json(_error("bad-config", str(err)))


async def _read(ws):
    try:
        text = await ws.receive_text()
    except WebSocketDisconnect:
        return None
    try:
        message = json.loads(text)
        if not isinstance(message, dict):
            raise ValueError("message must be an object")
        return message
    except ValueError:
        return {"type": "malformed", "raw": text}


def _accept_action(session, message) -> dict | None:
    action = message.get("action")
    if action is not None and action not in ACTIONS:
        return _error("bad-message", f"unknown action {action!r}")
    tick = message.get("tick")
    if tick is not None and (not isinstance(tick, int) or tick < 0):
        return _error("bad-message", f"bad tick {tick!r}")
    if action is not None:
        session.submit(action)
    return None


async def _handle_in_session(ws, session, message) -> bool:
    """Returns True when the session should stop (leave)."""
    kind = message.get("type")
    if kind == "action":
        reply = _accept_action(session, message)
        if reply:
            await ws.send_json(reply)
        return False
    if kind == "leave":
        return True
    if kind == "join":
        await ws.send_json(_error("already-joined", "one session per connection"))
        return False
    await ws.send_json(_error("bad-message", f"unexpected message {kind!r}"))
    return False


async def _finish(ws, session, incomplete: bool) -> None:
    await ws.send_json(session.result(incomplete=incomplete))
    await ws.close()


async def _run_lockstep(ws, session) -> None:
    """Tick on explicit sync messages; deterministic for tests and replays."""
    while not session.finished:
        message = await _read(ws)
        if message is None:
            session.result(incomplete=True)
            return
        if message.get("type") == "sync":
            await ws.send_json(session.advance())
            continue
        if await _handle_in_session(ws, session, message):
            await _finish(ws, session, incomplete=True)
            return
    await _finish(ws, session, incomplete=False)


async def _run_realtime(ws, session, time_scale: float) -> None:
    interval = 1.0 / (session.config.tick_rate * time_scale)
    queue: asyncio.Queue = asyncio.Queue()
    stopped = asyncio.Event()

    async def pump():
        try:
            while not stopped.is_set():
                message = await _read(ws)
                await queue.put(message)
                if message is None:
                    return
        except Exception:
            await queue.put(None)

    pump_task = asyncio.create_task(pump())
    try:
        loop = asyncio.get_running_loop()
        next_tick = loop.time() + interval
        while not session.finished:
            timeout = next_tick - loop.time()
            message = "tick"
            if timeout > 0:
                try:
                    message = await asyncio.wait_for(queue.get(), timeout)
                except asyncio.TimeoutError:
                    message = "tick"
            if message == "tick":
                await ws.send_json(session.advance())
                next_tick += interval
                continue
            if message is None:
                session.result(incomplete=True)
                return
            if await _handle_in_session(ws, session, message):
                await _finish(ws, session, incomplete=True)
                return
        await _finish(ws, session, incomplete=False)
    finally:
        stopped.set()
        pump_task.cancel()


def serve(host: str, port: int, registry: AgentRegistry, record_dir=None,
          time_scale: float = 1.0) -> None:
    import uvicorn

    uvicorn.run(create_app(registry, record_dir=record_dir, time_scale=time_scale),
                host=host, port=port, log_level="warning")
