"""Newline-delimited JSON link between the twin and the energy-management engine.

Request:  ``{"type": "measurements", "t": "<ISO-8601 UTC>", "values": {...}}``
Reply:    ``{"type": "setpoints", "t": <same>, "values": {...}}``
Failure:  ``{"type": "error", "t": <same or null>, "reason": "..."}``

A repeated message for the tick that was just answered gets the cached
reply, so a client may safely re-send after a lost response.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from datetime import datetime
from typing import Callable, Mapping

from ..twin import _parse_ts, fmt_ts

DEFAULT_TIMEOUT = 10.0

Engine = Callable[[datetime, dict[str, float]], Mapping[str, float]]


class LinkError(RuntimeError):
    pass


class LinkTimeout(LinkError):
    pass


def _encode(msg: dict) -> bytes:
    return (json.dumps(msg, sort_keys=True, allow_nan=False) + "\n").encode()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        srv: LinkServer = self.server  # type: ignore[assignment]
        while True:
            try:
                line = self.rfile.readline()
            except (ConnectionError, OSError):
                return
            if not line:
                return
            reply = srv.dispatch(line)
            try:
                self.wfile.write(_encode(reply))
                self.wfile.flush()
            except (ConnectionError, OSError):
                return


class LinkServer(socketserver.TCPServer):
    allow_reuse_address = True

    def __init__(self, engine: Engine, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.engine = engine
        self._lock = threading.Lock()
        self._last: tuple[str, dict] | None = None
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.server_address[1]

    def dispatch(self, line: bytes) -> dict:
        t_text = None
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("message must be a JSON object")
            t_text = msg.get("t")
            if msg.get("type") != "measurements":
                raise ValueError(f"unexpected message type {msg.get('type')!r}")
            if not isinstance(t_text, str):
                raise ValueError("field 't' must be an ISO-8601 timestamp string")
            t = _parse_ts(t_text)
            values = msg.get("values")
            if not isinstance(values, dict) or not all(isinstance(v, (int, float)) for v in values.values()):
                raise ValueError("field 'values' must map names to numbers")
        except (ValueError, TypeError) as exc:
            return {"type": "error", "t": t_text if isinstance(t_text, str) else None, "reason": str(exc)}
        with self._lock:
            if self._last is not None and self._last[0] == t_text:
                return self._last[1]
            try:
                sp = self.engine(t, {k: float(v) for k, v in values.items()})
            except Exception as exc:  # noqa: BLE001 - reported to the peer
                return {"type": "error", "t": t_text, "reason": f"{type(exc).__name__}: {exc}"}
            reply = {"type": "setpoints", "t": t_text, "values": {k: float(v) for k, v in sp.items()}}
            self._last = (t_text, reply)
            return reply

    def start(self) -> "LinkServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


def serve_link(engine: Engine, port: int = 0, host: str = "127.0.0.1", background: bool = True) -> LinkServer:
    """Start a link server; ``port=0`` picks a free port (see ``server.port``)."""
    srv = LinkServer(engine, host, port)
    if background:
        return srv.start()
    try:
        srv.serve_forever()
    finally:
        srv.server_close()
    return srv


class LinkClient:
    def __init__(self, host: str = "127.0.0.1", port: int = 0, timeout: float = DEFAULT_TIMEOUT):
        self.timeout = timeout
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except socket.timeout as exc:
            raise LinkTimeout(f"connect to {host}:{port} timed out after {timeout} s") from exc
        except OSError as exc:
            raise LinkError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._file = self._sock.makefile("rb")

    def send_raw(self, payload: bytes) -> dict:
        try:
            self._sock.sendall(payload if payload.endswith(b"\n") else payload + b"\n")
            line = self._file.readline()
        except socket.timeout as exc:
            raise LinkTimeout(f"no reply within {self.timeout} s") from exc
        if not line:
            raise LinkError("link closed by peer")
        return json.loads(line)

    def exchange(self, t: datetime | str, values: Mapping[str, float]) -> dict[str, float]:
        t_text = t if isinstance(t, str) else fmt_ts(t)
        reply = self.send_raw(_encode({"type": "measurements", "t": t_text,
                                       "values": {k: float(v) for k, v in values.items()}}))
        if reply.get("type") == "error":
            raise LinkError(f"engine error at {t_text}: {reply.get('reason')}")
        if reply.get("type") != "setpoints" or reply.get("t") != t_text:
            raise LinkError(f"reply does not answer tick {t_text}: {reply}")
        return reply["values"]

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
