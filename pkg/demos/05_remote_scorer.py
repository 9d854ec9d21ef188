"""
Scoring through an HTTP service
===============================

The search code only sees a scorer object, so a model behind
``POST /score`` drops in for the in-memory matrix.
"""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from adacur import CurIndex, RemoteScorer, SearchConfig, adacur_search

scores = np.random.default_rng(0).standard_normal((40, 300))


class Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        q = int(body["query_id"])
        out = json.dumps({"scores": [scores[q, int(i)] for i in body["item_ids"]]}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
threading.Thread(target=server.serve_forever, daemon=True).start()
url = f"http://127.0.0.1:{server.server_address[1]}"

remote = RemoteScorer(url, num_items=300, timeout=5, retries=1)
print("remote matches matrix:", np.allclose(remote.score_batch(3, [0, 5, 9]), scores[3, [0, 5, 9]]))

idx = CurIndex(scores[:30], range(30), range(300))
res = adacur_search(35, idx, remote, SearchConfig(budget=60, rounds=3, k=5))
print("top-5:", [(i, round(s, 3)) for i, s in res.top_k], " calls:", res.calls_used)
print("HTTP requests made:", remote.calls, "pair scores")
server.shutdown()
