import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from novicesim.backend import (
    BackendRequest,
    CannedBackend,
    HttpBackend,
    HttpBackendConfig,
    Message,
    ScriptedBackend,
)
from novicesim.errors import BackendError, ConfigError, ScriptExhausted


def req(stage="executor", step=1, text="hi"):
    return BackendRequest((Message("system", "sys"), Message("user", text)), stage=stage, step=step)


def test_request_validation():
    with pytest.raises(ValueError):
        BackendRequest(())
    with pytest.raises(ValueError):
        Message("robot", "x")


def test_script_exhaustion():
    b = ScriptedBackend.from_replies(["one", "two"])
    assert b.chat(req()).text == "one"
    assert b.chat(req()).text == "two"
    with pytest.raises(ScriptExhausted, match="script exhausted"):
        b.chat(req())


def test_script_file_keys_on_stage_and_step():
    b = ScriptedBackend.parse(
        "# comment\n### strategist\nS1\n### executor step=2\nE2\n### executor\nE-any\n### *\nwild\n"
    )
    assert b.chat(req("executor", 1)).text == "E-any"
    assert b.chat(req("executor", 2)).text == "E2"
    assert b.chat(req("strategist", 1)).text == "S1"
    assert b.chat(req("tutor", 1)).text == "wild"


def test_script_text_before_header_is_rejected():
    with pytest.raises(ConfigError):
        ScriptedBackend.parse("stray\n### executor\nx\n")


def test_recorded_requests_keep_message_order():
    b = ScriptedBackend.from_replies(["ok"])
    r = req(text="composed user prompt")
    b.chat(r)
    assert b.requests == [r]
    assert [(m.role, m.content) for m in b.requests[0].messages] == [("system", "sys"), ("user", "composed user prompt")]


def test_canned_backend_is_deterministic():
    ref = "class A:\n    pass\n\n\ndef f():\n    return 1\n"
    replies = []
    for _ in range(2):
        b = CannedBackend(ref, seed=4)
        replies.append([b.chat(req(stage, i)).text for i, stage in enumerate(["strategist", "executor", "tutor", "judge"])])
    assert replies[0] == replies[1]
    assert replies[0][0].startswith("GOAL:")
    assert "```python" in replies[0][1]


# -- HTTP ---------------------------------------------------------------------------

class _Stub(BaseHTTPRequestHandler):
    plan: list = []
    seen: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).seen.append((self.path, body, self.headers.get("Authorization")))
        status = type(self).plan.pop(0) if type(self).plan else 200
        if status == 200:
            payload = {"choices": [{"message": {"content": "hello"}}], "usage": {"prompt_tokens": 3, "completion_tokens": 1}}
        elif status == -1:
            status, payload = 200, {"nothing": True}
        else:
            payload = {"error": "nope"}
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Stub.plan, _Stub.seen = [], []
    yield _Stub, f"http://127.0.0.1:{server.server_address[1]}/v1"
    server.shutdown()


def _backend(url, sleeps, **kw):
    return HttpBackend(HttpBackendConfig(url, "test-model", api_key_env="NOVICESIM_TEST_KEY", timeout=5, **kw), sleep=sleeps.append)


def test_http_retries_after_429(stub, monkeypatch):
    handler, url = stub
    monkeypatch.setenv("NOVICESIM_TEST_KEY", "secret")
    handler.plan = [429]
    sleeps = []
    res = _backend(url, sleeps).chat(req())
    assert res.text == "hello" and res.prompt_tokens == 3
    assert sleeps == [1.0]
    path, body, auth = handler.seen[-1]
    assert path == "/v1/chat/completions"
    assert body["model"] == "test-model" and body["messages"][1] == {"role": "user", "content": "hi"}
    assert auth == "Bearer secret"


def test_http_backoff_doubles_then_gives_up(stub):
    handler, url = stub
    handler.plan = [500, 503, 502]
    sleeps = []
    with pytest.raises(BackendError, match="after 3 attempts"):
        _backend(url, sleeps, max_retries=2, backoff=0.5).chat(req())
    assert sleeps == [0.5, 1.0]


def test_http_client_errors_are_not_retried(stub):
    handler, url = stub
    handler.plan = [401]
    sleeps = []
    with pytest.raises(BackendError, match="HTTP 401"):
        _backend(url, sleeps).chat(req())
    assert sleeps == []


def test_http_malformed_response(stub):
    handler, url = stub
    handler.plan = [-1]
    with pytest.raises(BackendError, match="malformed"):
        _backend(url, []).chat(req())


def test_http_transport_failure_is_retried():
    sleeps = []
    with pytest.raises(BackendError):
        _backend("http://127.0.0.1:9/v1", sleeps, max_retries=1).chat(req())
    assert sleeps == [1.0]
