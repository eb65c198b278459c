from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from districtgame import build_grid_state


@pytest.fixture(scope="session")
def grid22():
    return build_grid_state(2, 2, 100, "uniform-5050", seed=1)


@pytest.fixture(scope="session")
def grid33():
    return build_grid_state(3, 3, 100, "uniform-5050", seed=1)


@pytest.fixture(scope="session")
def path4():
    return build_grid_state(1, 4, 1, "uniform-5050", seed=1)


@pytest.fixture(scope="session")
def grid66():
    return build_grid_state(6, 6, 100, "clustered(0.65,0.40)", seed=11)


class _ScriptedChatHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append({"path": self.path, "body": body})
        if not self.server.script:
            status, payload = 200, {"choices": [{"message": {"content": "ANSWER: 0"}}]}
        else:
            status, payload = self.server.script.pop(0)
        data = json.dumps(payload).encode() if payload is not None else b""
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class MockChatServer:
    """Local scripted chat-completions endpoint for adapter tests."""

    def __init__(self):
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedChatHandler)
        self._server.script = []
        self._server.requests = []
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self) -> list:
        return self._server.requests

    def reset(self):
        self._server.script = []
        self._server.requests.clear()

    def script(self, *steps):
        """Queue (status, payload) responses; payloads are JSON bodies."""
        self._server.script = list(steps)

    def script_replies(self, *texts):
        """Queue successful replies with the given assistant texts."""
        self.script(*[
            (200, {"choices": [{"message": {"content": t}}]}) for t in texts
        ])

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def chat_server():
    server = MockChatServer()
    yield server
    server.close()
