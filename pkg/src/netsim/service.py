"""Newline-delimited JSON session service over TCP.

Each request and response is one UTF-8 JSON object per line::

    -> {"op": "hello", "protocol_version": 1}
    <- {"op": "hello", "session_id": "3f..", "protocol_version": 1, "payload": {...}}
    -> {"op": "reset", "session_id": "3f..", "payload": {"spec": {...}}}     # or {"spec_path": "..."}
    <- {"op": "reset", ..., "payload": {"frame": {...}}}
    -> {"op": "step", "session_id": "3f..", "payload": {"action": {...}}}    # action may be null
    <- {"op": "step", ..., "payload": {"frame": {...}, "reward": 0.7, "done": false}}
    -> {"op": "close", "session_id": "3f.."}
    <- {"op": "close", "session_id": "3f..", ...}

Failures answer ``{"op": "error", "payload": {"error": <code>, "message": ...}}``
and leave the connection open.  Unknown fields are ignored; unknown ops are
rejected.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading
import uuid
from pathlib import Path

from . import __version__
from .core import ConfigError
from .engine import Action, ActionError, Engine, EpisodeError, EpisodeSpec

PROTOCOL_VERSION = 1
OPS = ("hello", "reset", "step", "close")

log = logging.getLogger(__name__)


class ProtocolError(Exception):
    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(message or code)


class _Session:
    def __init__(self, sid: str):
        self.sid = sid
        self.engine: Engine | None = None
        self.lock = threading.Lock()


class SessionTable:
    def __init__(self, max_sessions: int):
        self.max_sessions = max_sessions
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()

    def open(self) -> _Session:
        with self._lock:
            if len(self._sessions) >= self.max_sessions:
                raise ProtocolError("busy", f"session limit {self.max_sessions} reached")
            s = _Session(uuid.uuid4().hex)
            self._sessions[s.sid] = s
            return s

    def get(self, sid) -> _Session:
        with self._lock:
            s = self._sessions.get(sid)
        if s is None:
            raise ProtocolError("unknown_session", f"no session {sid!r}")
        return s

    def close(self, sid) -> None:
        with self._lock:
            self._sessions.pop(sid, None)

    def __len__(self):
        with self._lock:
            return len(self._sessions)


def _reply(op, sid, payload=None) -> dict:
    return {"op": op, "session_id": sid, "protocol_version": PROTOCOL_VERSION, "payload": payload or {}}


def handle_message(table: SessionTable, msg, owned: set) -> dict:
    """Answer one decoded request.  ``owned`` collects sessions opened on this connection."""
    if not isinstance(msg, dict):
        raise ProtocolError("bad_request", "message must be a JSON object")
    op = msg.get("op")
    if op not in OPS:
        raise ProtocolError("unknown_op", f"unknown op {op!r}")
    if op == "hello":
        s = table.open()
        owned.add(s.sid)
        return _reply("hello", s.sid, {"engine_version": __version__})
    sid = msg.get("session_id")
    s = table.get(sid)
    payload = msg.get("payload") or {}
    if not isinstance(payload, dict):
        raise ProtocolError("bad_request", "payload must be an object")
    if not s.lock.acquire(blocking=False):
        raise ProtocolError("busy", "a request is already in flight for this session")
    try:
        if op == "close":
            table.close(sid)
            owned.discard(sid)
            return _reply("close", sid)
        if op == "reset":
            try:
                if "spec" in payload:
                    spec = EpisodeSpec.from_dict(payload["spec"])
                elif "spec_path" in payload:
                    p = Path(payload["spec_path"])
                    spec = EpisodeSpec.from_dict(json.loads(p.read_text(encoding="utf-8")), p.parent)
                else:
                    raise ProtocolError("bad_request", "reset needs payload.spec or payload.spec_path")
            except (ConfigError, OSError, json.JSONDecodeError, ValueError) as exc:
                raise ProtocolError("invalid_spec", str(exc)) from None
            s.engine = Engine(spec)
            frame = s.engine.reset()
            return _reply("reset", sid, {"frame": frame.to_dict()})
        # step
        if s.engine is None:
            raise ProtocolError("no_episode", "step before reset")
        raw = payload.get("action")
        try:
            action = Action.from_dict(raw) if raw is not None else None
            frame, r, done = s.engine.step(action)
        except ActionError as exc:
            raise ProtocolError("invalid_action", str(exc)) from None
        except EpisodeError as exc:
            raise ProtocolError("episode_done", str(exc)) from None
        return _reply("step", sid, {"frame": frame.to_dict(), "reward": r, "done": done})
    finally:
        s.lock.release()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        table: SessionTable = self.server.table
        owned: set = set()
        try:
            for raw in self.rfile:
                line = raw.strip()
                if not line:
                    continue
                sid = None
                try:
                    msg = json.loads(line.decode("utf-8"))
                    sid = msg.get("session_id") if isinstance(msg, dict) else None
                    resp = handle_message(table, msg, owned)
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    resp = _reply("error", None, {"error": "bad_json", "message": str(exc)})
                except ProtocolError as exc:
                    resp = _reply("error", sid, {"error": exc.code, "message": str(exc)})
                except Exception as exc:  # keep the connection alive on engine bugs
                    log.exception("request failed")
                    resp = _reply("error", sid, {"error": "internal", "message": repr(exc)})
                self.wfile.write((json.dumps(resp, separators=(",", ":")) + "\n").encode("utf-8"))
                self.wfile.flush()
        finally:
            for sid in owned:
                table.close(sid)


class SimServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, max_sessions: int = 8):
        super().__init__(address, _Handler)
        self.table = SessionTable(max_sessions)


def parse_bind(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def make_server(bind: str = "127.0.0.1:0", max_sessions: int = 8) -> SimServer:
    return SimServer(parse_bind(bind), max_sessions)


def serve(bind: str = "127.0.0.1:7070", max_sessions: int = 8) -> None:
    with make_server(bind, max_sessions) as srv:
        host, port = srv.server_address[:2]
        log.info("listening on %s:%d", host, port)
        srv.serve_forever()


class Client:
    """Minimal blocking client, mostly for scripts and tests."""

    def __init__(self, host: str, port: int, timeout: float = 60.0):
        import socket

        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.rfile = self.sock.makefile("rb")
        self.session_id = None

    def request(self, msg: dict) -> dict:
        self.sock.sendall((json.dumps(msg) + "\n").encode("utf-8"))
        return json.loads(self.rfile.readline())

    def send_raw(self, line: bytes) -> dict:
        self.sock.sendall(line.rstrip(b"\n") + b"\n")
        return json.loads(self.rfile.readline())

    def hello(self) -> dict:
        r = self.request({"op": "hello", "protocol_version": PROTOCOL_VERSION})
        self.session_id = r.get("session_id")
        return r

    def reset(self, spec: dict) -> dict:
        return self.request({"op": "reset", "session_id": self.session_id, "payload": {"spec": spec}})

    def step(self, action: dict | None = None) -> dict:
        return self.request({"op": "step", "session_id": self.session_id, "payload": {"action": action}})

    def close(self) -> None:
        try:
            if self.session_id:
                self.request({"op": "close", "session_id": self.session_id})
        finally:
            self.rfile.close()
            self.sock.close()
