"""Scripted chat-completions stub server for offline remote-critic testing."""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import List, Optional


class StubCriticServer:
    """Serves scripted replies in order; 500s once the script is exhausted.

    Every request body is recorded for payload-golden assertions.
    """

    def __init__(self, replies: List[str], host: str = "127.0.0.1",
                 port: int = 0):
        self.replies = list(replies)
        self.requests: List[dict] = []
        self._lock = threading.Lock()
        self._cursor = 0
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                with outer._lock:
                    try:
                        outer.requests.append({
                            "path": self.path,
                            "headers": {k: v for k, v in self.headers.items()},
                            "body": json.loads(body.decode("utf-8")),
                        })
                    except json.JSONDecodeError:
                        outer.requests.append({"path": self.path, "raw": body})
                    if outer._cursor < len(outer.replies):
                        reply = outer.replies[outer._cursor]
                        outer._cursor += 1
                    else:
                        reply = None
                if reply is None:
                    self.send_response(500)
                    self.end_headers()
                    self.wfile.write(b"script exhausted")
                    return
                payload = json.dumps(
                    {"choices": [{"message": {"content": reply}}]}).encode("utf-8")
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def start(self) -> "StubCriticServer":
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def load_script(path) -> List[str]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, list) or not all(isinstance(x, str) for x in obj):
        raise ValueError("stub script must be a JSON array of reply strings")
    return obj


def serve_forever(port: int, script_path) -> None:
    server = StubCriticServer(load_script(script_path), port=port)
    print(f"stub critic server listening on {server.endpoint}", flush=True)
    try:
        server._server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server._server.server_close()
