import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from adacur.index import CurIndex
from adacur.scorer import MatrixScorer, SyntheticCorpusSpec, make_synthetic


class _ScoreHandler(BaseHTTPRequestHandler):
    matrix = None
    fail_remaining = 0

    def do_POST(self):
        if self.path != "/score":
            self.send_error(404)
            return
        cls = type(self)
        if cls.fail_remaining > 0:
            cls.fail_remaining -= 1
            self.send_error(503)
            return
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        q = int(body["query_id"])
        scores = [float(self.matrix[q, int(i)]) for i in body["item_ids"]]
        out = json.dumps({"scores": scores}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


@pytest.fixture
def score_server():
    """Start a local scoring service backed by a given matrix; yields a factory."""
    servers = []

    def start(matrix, fail_first=0):
        handler = type("Handler", (_ScoreHandler,), {"matrix": np.asarray(matrix),
                                                     "fail_remaining": fail_first})
        srv = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        threading.Thread(target=srv.serve_forever, daemon=True).start()
        servers.append(srv)
        return f"http://127.0.0.1:{srv.server_address[1]}", handler

    yield start
    for srv in servers:
        srv.shutdown()
        srv.server_close()


@pytest.fixture
def closed_port():
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


@pytest.fixture(scope="session")
def lowrank():
    """Noiseless rank-4 corpus: 40 train queries, 10 test queries, 300 items."""
    spec = SyntheticCorpusSpec(num_items=300, num_queries=40, latent_rank=4, seed=7,
                               num_test_queries=10)
    scorer, m = make_synthetic(spec)
    idx = CurIndex(m[:40], range(40), range(300))
    return scorer, m, idx


@pytest.fixture
def small_matrix():
    rng = np.random.default_rng(0)
    return rng.standard_normal((6, 20))


@pytest.fixture
def small_index(small_matrix):
    return CurIndex(small_matrix[:4], range(4), range(20)), MatrixScorer(small_matrix)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion; printed after the run."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
