"""Live session service: WebSocket control plane in front of the session core.

One JSON message per WebSocket frame. Each connected client is one
participant; the server's clock is authoritative and all engine interaction
happens on the event loop, so room processing stays serialized exactly like
the simulator's virtual loop.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from websockets.asyncio.server import serve

from .backend import AgentBackend, LiveBackend, LiveBackendConfig, Persona, ScriptedBackend, default_persona
from .model import (
    EmitAgentSpeech,
    LowerHand,
    ParticipantId,
    ParticipantKind,
    Processed,
    ProtocolConfig,
    RaiseHand,
    RequestCandidate,
    RequestFollowUpCheck,
    RequestRelevance,
    RequestSuggestion,
    RequestSummary,
    StartTimer,
    TimerFired,
)
from .modes import Command, CommandName, Mode, NoSuchPartner, NotPermitted, apply_command
from .session import NotHost, Session
from .simulator import response_event

logger = logging.getLogger(__name__)

_BACKEND_REQUESTS = (RequestCandidate, RequestRelevance, RequestFollowUpCheck, RequestSuggestion, RequestSummary)


@dataclass
class ServerConfig:
    mode: Mode = Mode.ROUNDTABLE
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    persona: Persona = field(default_factory=default_persona)
    backend_script: Optional[dict] = None
    live_backend: Optional[LiveBackendConfig] = None
    log_dir: str = "logs"
    default_session: str = "default"

    @classmethod
    def from_json(cls, data: dict) -> "ServerConfig":
        persona = default_persona()
        if "persona" in data:
            raw = data["persona"]
            persona = Persona.load(raw) if isinstance(raw, str) else Persona.from_json(raw)
        backend_script = None
        live = None
        backend = data.get("backend", {})
        if "scripted" in backend:
            raw = backend["scripted"]
            backend_script = json.loads(Path(raw).read_text()) if isinstance(raw, str) else raw
        elif "live" in backend:
            live = LiveBackendConfig.from_json(backend["live"])
        return cls(
            mode=Mode(data.get("mode", "roundtable")),
            protocol=ProtocolConfig.from_json(data.get("config", {})),
            persona=persona,
            backend_script=backend_script,
            live_backend=live,
            log_dir=data.get("logDir", "logs"),
            default_session=data.get("defaultSession", "default"),
        )

    @classmethod
    def load(cls, path) -> "ServerConfig":
        return cls.from_json(json.loads(Path(path).read_text()))

    def make_backend(self) -> AgentBackend:
        if self.live_backend is not None:
            return LiveBackend(self.live_backend)
        return ScriptedBackend(self.backend_script or {})


class LiveSession:
    """A Session bound to the real clock, with timers and backend calls as tasks."""

    def __init__(self, session_id: str, server: "SessionServer", mode: Mode):
        self.server = server
        self.t0 = time.monotonic()
        self.session = Session(
            session_id,
            mode,
            server.config.protocol,
            server.config.persona,
        )
        self.backend = server.config.make_backend()

    def now(self) -> int:
        return int((time.monotonic() - self.t0) * 1000)

    def process(self, processed: List[Processed]) -> None:
        for item in processed:
            rt = self.session.runtimes[item.room_id]
            for action in item.actions:
                if isinstance(action, StartTimer):
                    self._schedule_timer(item.room_id, action)
                elif isinstance(action, _BACKEND_REQUESTS):
                    self._dispatch_backend(item.room_id, rt, action)
                elif isinstance(action, EmitAgentSpeech):
                    self.server.broadcast_room(self, item.room_id, {"type": "agent_speech", "text": action.text})
                elif isinstance(action, RaiseHand):
                    self.server.broadcast_room(self, item.room_id, {"type": "hand_raised", "ping": action.ping})
                elif isinstance(action, LowerHand):
                    self.server.broadcast_room(self, item.room_id, {"type": "hand_lowered"})

    def inject(self, room_id: str, event) -> None:
        if room_id not in self.session.runtimes or self.session.runtimes[room_id] is None:
            return
        self.process(self.session.deliver(room_id, event, self.now()))

    def _schedule_timer(self, room_id: str, action: StartTimer) -> None:
        loop = asyncio.get_running_loop()

        def fire() -> None:
            self.inject(room_id, TimerFired(action.timer_id, action.kind, self.now()))

        loop.call_later(action.after_ms / 1000.0, fire)

    def _dispatch_backend(self, room_id: str, rt, action) -> None:
        request = rt.make_backend_request(action)
        if request is None:
            return

        async def run() -> None:
            loop = asyncio.get_running_loop()
            reply = await loop.run_in_executor(None, self.backend.handle, request)
            if reply.delay_ms:
                await asyncio.sleep(reply.delay_ms / 1000.0)
            event = response_event(request.kind, request.request_id, reply, self.now())
            if event is not None:
                self.inject(room_id, event)

        asyncio.ensure_future(run())

    def persist(self) -> List[Path]:
        return self.session.persist(self.server.config.log_dir)


@dataclass
class ClientConn:
    ws: object
    participant: Optional[ParticipantId] = None
    session: Optional[LiveSession] = None
    speech_started_at: Optional[int] = None


class SessionServer:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.sessions: Dict[str, LiveSession] = {}
        self.conns: Dict[str, ClientConn] = {}  # participant id -> connection

    def get_session(self, session_id: str, create_mode: Optional[Mode] = None) -> LiveSession:
        if session_id not in self.sessions:
            mode = create_mode or self.config.mode
            self.sessions[session_id] = LiveSession(session_id, self, mode)
        return self.sessions[session_id]

    def broadcast_room(self, live: LiveSession, room_id: str, payload: dict) -> None:
        payload = {**payload, "t": live.now()}
        text = json.dumps(payload)
        for occupant in live.session.occupants(room_id):
            conn = self.conns.get(occupant.id)
            if conn is not None and conn.ws is not None:
                asyncio.ensure_future(self._safe_send(conn.ws, text))

    async def _safe_send(self, ws, text: str) -> None:
        try:
            await ws.send(text)
        except Exception:  # connection raced shut; the reader cleans up
            pass

    def send_snapshot(self, live: LiveSession, pid: str) -> None:
        conn = self.conns.get(pid)
        if conn is None:
            return
        snapshot = build_snapshot(live.session, pid)
        snapshot["t"] = live.now()
        asyncio.ensure_future(self._safe_send(conn.ws, json.dumps(snapshot)))

    def snapshot_room(self, live: LiveSession, room_id: str) -> None:
        for occupant in live.session.occupants(room_id):
            self.send_snapshot(live, occupant.id)

    async def handler(self, ws) -> None:
        conn = ClientConn(ws=ws)
        try:
            async for raw in ws:
                try:
                    msg = json.loads(raw)
                    await self.handle_message(conn, msg)
                except Exception as exc:  # protocol errors go back to the client
                    await self._safe_send(ws, json.dumps({"type": "error", "code": type(exc).__name__, "detail": str(exc)}))
        finally:
            if conn.participant is not None:
                self.conns.pop(conn.participant.id, None)

    async def handle_message(self, conn: ClientConn, msg: dict) -> None:
        mtype = msg.get("type")
        if mtype == "client_hello":
            kind = ParticipantKind(msg.get("kind", "human"))
            pid = ParticipantId(msg["participant"], kind)
            live = self.get_session(msg.get("session", self.config.default_session))
            conn.participant = pid
            conn.session = live
            self.conns[pid.id] = conn
            if pid.id not in live.session.participants:
                live.session.join(pid)
            self.send_snapshot(live, pid.id)
            return
        if conn.participant is None or conn.session is None:
            raise NotPermitted("say client_hello first")
        live = conn.session
        pid = conn.participant
        now = live.now()

        if mtype == "create_session":
            if pid.kind != ParticipantKind.HOST:
                raise NotHost(pid.id)
            session_id = msg["session"]
            mode = Mode(msg.get("mode", self.config.mode.value))
            self.get_session(session_id, mode)
            await self._safe_send(conn.ws, json.dumps({"type": "session_created", "session": session_id, "mode": mode.value}))
        elif mtype == "join_room":
            room_before = live.session.room_of(pid.id)
            live.process(live.session.move(pid.id, msg["room"], now))
            self.snapshot_room(live, room_before)
            self.snapshot_room(live, msg["room"])
        elif mtype == "host_move":
            room_before = live.session.room_of(msg["participant"])
            moved = live.session.host_move(pid, msg["participant"], msg["room"], now)
            live.process(moved)
            self.snapshot_room(live, room_before)
            self.snapshot_room(live, msg["room"])
            await self._safe_send(conn.ws, json.dumps({"type": "moved", "participant": msg["participant"], "room": msg["room"]}))
        elif mtype == "set_mode":
            if pid.kind != ParticipantKind.HOST:
                raise NotHost(pid.id)
            live.session.set_mode(msg["room"], Mode(msg["mode"]), now)
            self.snapshot_room(live, msg["room"])
            await self._safe_send(conn.ws, json.dumps({"type": "mode_set", "room": msg["room"], "mode": msg["mode"]}))
        elif mtype == "utterance":
            text = msg.get("text", "")
            if not text.strip():
                raise ValueError("empty utterance")
            live.process(live.session.route_speech_start(pid.id, now))
            live.process(live.session.route_speech_end(pid.id, text, now, live.now()))
        elif mtype == "speech_start":
            conn.speech_started_at = now
            live.process(live.session.route_speech_start(pid.id, now))
        elif mtype == "speech_end":
            started = conn.speech_started_at if conn.speech_started_at is not None else now
            conn.speech_started_at = None
            live.process(live.session.route_speech_end(pid.id, msg.get("text", ""), started, now))
        elif mtype == "mode_command":
            command = Command(
                CommandName(msg["cmd"]),
                pid,
                ParticipantId(msg["target"], ParticipantKind.HUMAN) if msg.get("target") else None,
            )
            room_before = live.session.room_of(pid.id)
            try:
                processed, deliveries = apply_command(live.session, command, now)
            except (NotPermitted, NoSuchPartner) as exc:
                await self._safe_send(conn.ws, json.dumps({"type": "error", "code": type(exc).__name__, "detail": str(exc)}))
                return
            live.process(processed)
            for target, payload in deliveries:
                target_conn = self.conns.get(target)
                if target_conn is not None:
                    await self._safe_send(target_conn.ws, json.dumps({**payload, "t": now}))
            self.snapshot_room(live, room_before)
            self.snapshot_room(live, live.session.room_of(pid.id))
        elif mtype == "persist":
            if pid.kind != ParticipantKind.HOST:
                raise NotHost(pid.id)
            paths = live.persist()
            await self._safe_send(conn.ws, json.dumps({"type": "persisted", "files": [str(p) for p in paths]}))
        else:
            raise ValueError(f"unknown message type {mtype}")

    def persist_all(self) -> List[Path]:
        written: List[Path] = []
        for live in self.sessions.values():
            written.extend(live.persist())
        return written

    async def run(self, host: str = "127.0.0.1", port: int = 8750) -> None:
        async with serve(self.handler, host, port):
            logger.info("listening on ws://%s:%d", host, port)
            try:
                await asyncio.Future()
            finally:
                self.persist_all()


def build_snapshot(session: Session, pid: str) -> dict:
    """Room view for one participant, mirroring a state the engine actually reached."""
    part = session.participant(pid)
    room_id = part.room
    rt = session.runtimes.get(room_id)
    snapshot = {
        "type": "state_snapshot",
        "session": session.session_id,
        "room": session.room_ids[room_id].to_json(),
        "occupants": [p.to_json() for p in sorted(session.occupants(room_id), key=lambda x: x.id)],
        "agentName": session.persona.name,
    }
    if rt is None:
        snapshot.update(
            {"mode": None, "agentLocation": None, "handRaised": False, "myControls": [], "transcriptTail": []}
        )
    else:
        policy = rt.policy
        snapshot.update(
            {
                "mode": policy.mode.value,
                "agentLocation": policy.agent_location.value,
                "handRaised": rt.hand_raised,
                "myControls": sorted(c.value for c in policy.user_controls),
                "transcriptTail": [t.to_json() for t in rt.transcript.turns[-8:]],
            }
        )
    return snapshot


async def serve_forever(config: ServerConfig, host: str = "127.0.0.1", port: int = 8750) -> None:
    await SessionServer(config).run(host, port)
