import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

REFERENCE_PLAN = """@startuml
start
partition "Main Messy Areas Identification" {
  :desk surface covered with papers;
  :floor near the bed;
}
partition "Cleaning Priority Order" {
  :floor first;
  :desk second;
}
partition "Specific Cleaning Steps" {
  :pick up clothes from the floor;
  :stack papers on the desk;
  :wipe the desk;
}
stop
@enduml"""


def tagged(answer: str, think: str = "@startuml\nclass Room\n@enduml") -> str:
    return f"<think>{think}</think>\n<answer>{answer}</answer>"


@pytest.fixture
def reference_plan():
    return REFERENCE_PLAN


def fake_vector(text: str, dim: int = 8) -> list[float]:
    """Deterministic, deliberately un-normalized vector for the mock service."""
    codes = [ord(c) for c in text] or [0]
    return [float(sum(codes[i::dim]) + i + 1) for i in range(dim)]


class _MockState:
    def __init__(self):
        self.mode = "ok"
        self.requests = 0
        self.dim = 8


class _Handler(BaseHTTPRequestHandler):
    state: _MockState

    def log_message(self, *args):  # keep pytest output clean
        pass

    def do_POST(self):
        state = self.server.state
        state.requests += 1
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        texts = body["texts"]
        if self.path != "/embed":
            self._send(404, b"{}")
            return
        if state.mode == "error":
            self._send(500, b'{"detail": "boom"}')
            return
        vectors = [fake_vector(t, state.dim) for t in texts]
        if state.mode == "short":
            vectors = vectors[:-1]
        if state.mode == "ragged" and vectors:
            vectors[0] = vectors[0][:-1]
        payload = json.dumps({"embeddings": vectors, "dimension": state.dim}).encode()
        if state.mode == "truncated":
            payload = payload[: len(payload) // 2]
        self._send(200, payload)

    def _send(self, code, payload):
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)


@pytest.fixture
def embed_server():
    """Local HTTP server speaking the embedding wire protocol."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.state = _MockState()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.url = f"http://127.0.0.1:{server.server_address[1]}"
    yield server
    server.shutdown()
    server.server_close()


AREAS = ["desk", "floor", "bed", "kitchen counter", "bookshelf", "sofa", "sink", "closet"]
VERBS = ["wipe", "sweep", "sort", "fold", "scrub", "vacuum", "dust", "stack"]
PARTITION_NAMES = ["Main Messy Areas Identification", "Cleaning Priority Order", "Specific Cleaning Steps"]


def plan(partitions: dict[str, list[str]]) -> str:
    lines = ["@startuml", "start"]
    for name, nodes in partitions.items():
        lines.append(f'partition "{name}" {{')
        lines += [f"  :{n};" for n in nodes]
        lines.append("}")
    return "\n".join(lines + ["stop", "@enduml"])


def synthetic_corpus(n: int, seed: int = 0) -> list[dict]:
    """JSONL records mixing perfect, damaged, unformatted and text-mode instances."""
    import random

    rng = random.Random(seed)
    records = []
    for i in range(n):
        parts = {
            name: [f"{rng.choice(VERBS)} the {rng.choice(AREAS)}" for _ in range(rng.randint(1, 3))]
            for name in PARTITION_NAMES
        }
        ref = plan(parts)
        kind = i % 4
        if kind == 0:
            pred = tagged(ref)
        elif kind == 1:
            damaged = {k: v[: max(0, len(v) - 1)] + [f"{rng.choice(VERBS)} the {rng.choice(AREAS)}"] for k, v in parts.items()}
            pred = tagged(plan(damaged))
        elif kind == 2:
            pred = ref  # no tags
        else:
            text = " then ".join(parts[PARTITION_NAMES[2]])
            records.append(
                {"id": f"inst-{i:04d}", "reference": {"format": "text", "content": text},
                 "prediction": tagged(text if rng.random() < 0.5 else "go outside"), "meta": {"k": kind}}
            )
            continue
        records.append(
            {"id": f"inst-{i:04d}", "reference": {"format": "uml", "content": ref},
             "prediction": pred, "meta": {"k": kind}}
        )
    rng.shuffle(records)
    return records


def write_jsonl(path, records) -> None:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
