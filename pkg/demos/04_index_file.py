"""
Building, saving and reloading an index
=======================================
"""

import os
import struct
import tempfile

import numpy as np

from adacur import SyntheticCorpusSpec, build_index, load_index, make_synthetic, save_index

scorer, _ = make_synthetic(SyntheticCorpusSpec(num_items=500, num_queries=32, latent_rank=4))

# Offline cost: every (train query, item) pair is scored once.
idx = build_index(scorer, scorer.train_queries, range(500), workers=2)
print("r_anc shape:", idx.r_anc.shape, " scorer calls:", idx.metadata["calls"])

path = os.path.join(tempfile.mkdtemp(), "demo.acur")
save_index(idx, path)
with open(path, "rb") as f:
    magic, version, rows, cols = struct.unpack("<4sIQQ", f.read(24))
print("header:", magic, version, rows, cols, " file bytes:", os.path.getsize(path))

back = load_index(path)
print("bit-exact round trip:", back.r_anc.tobytes() == idx.r_anc.tobytes())
print("item 7 embedding (first 4 of 32 dims):", np.round(back.item_embedding(7)[:4], 4))
