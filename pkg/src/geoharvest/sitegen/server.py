"""Fixture HTTP server for a generated site, with a request log and scripted failures."""

from __future__ import annotations

import json
import logging
import mimetypes
import threading
import time
from collections import deque
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import unquote, urlparse

logger = logging.getLogger(__name__)


class ServerError(RuntimeError):
    pass


@dataclass(frozen=True)
class RequestLogEntry:
    t: float  # monotonic seconds, taken when the request line was parsed
    path: str
    status: int
    user_agent: str

    def to_dict(self) -> dict:
        return {"t": self.t, "path": self.path, "status": self.status, "user_agent": self.user_agent}


class FixtureServer:
    """Serves ``root`` on 127.0.0.1.

    ``failure_script`` maps a path to a sequence of status codes returned on
    successive requests for that path; once a sequence is exhausted the file
    is served normally. A status of 0 closes the connection without a
    response (a network error from the client's point of view).
    """

    def __init__(self, root, port: int = 0, failure_script=None, log_path=None):
        self.root = Path(root).resolve()
        if not self.root.is_dir():
            raise ServerError(f"site directory not found: {root}")
        self._script = {p: deque(codes) for p, codes in dict(failure_script or {}).items()}
        self._lock = threading.Lock()
        self.log: list[RequestLogEntry] = []
        self.log_path = Path(log_path) if log_path else None
        handler = self._handler_class()
        try:
            self.httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
        except OSError as exc:
            raise ServerError(f"cannot bind port {port}: {exc}") from exc
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> FixtureServer:
        self._thread = threading.Thread(target=self.httpd.serve_forever, name="fixture-server", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join()

    def __enter__(self) -> FixtureServer:
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def requested_paths(self) -> list[str]:
        with self._lock:
            return [e.path for e in self.log]

    def gaps(self) -> list[float]:
        with self._lock:
            ts = [e.t for e in self.log]
        return [b - a for a, b in zip(ts, ts[1:])]

    def _record(self, entry: RequestLogEntry) -> None:
        with self._lock:
            self.log.append(entry)
            if self.log_path:
                with open(self.log_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry.to_dict()) + "\n")

    def _next_scripted(self, path: str) -> int | None:
        with self._lock:
            q = self._script.get(path)
            if q:
                return q.popleft()
        return None

    def _handler_class(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.0"

            def log_message(self, fmt, *args):
                logger.debug("fixture: " + fmt, *args)

            def do_GET(self):
                t = time.monotonic()
                path = unquote(urlparse(self.path).path)
                ua = self.headers.get("User-Agent", "")
                code = server._next_scripted(path)
                if code == 0:
                    server._record(RequestLogEntry(t, path, 0, ua))
                    self.close_connection = True
                    self.connection.close()
                    return
                if code is not None and code != 200:
                    server._record(RequestLogEntry(t, path, code, ua))
                    self.send_error(code)
                    return
                target = (server.root / path.lstrip("/")).resolve()
                if path.endswith("/"):
                    target = target / "index.html"
                if server.root not in target.parents and target != server.root or not target.is_file():
                    server._record(RequestLogEntry(t, path, 404, ua))
                    self.send_error(404)
                    return
                body = target.read_bytes()
                server._record(RequestLogEntry(t, path, 200, ua))
                ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
                if ctype.startswith("text/"):
                    ctype += "; charset=utf-8"
                self.send_response(200)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        return Handler


def serve(site_dir, port: int = 0, failure_script=None, log_path=None) -> FixtureServer:
    """Start a fixture server in a background thread and return its handle."""
    return FixtureServer(site_dir, port, failure_script, log_path).start()
