"""Offline indexing: the anchor-query x item score matrix and its file format.

File layout (all integers little-endian)::

    offset  size        field
    0       4           magic b"ACUR"
    4       4   u32     format version (currently 1)
    8       8   u64     rows  (number of train queries, k_q)
    16      8   u64     cols  (number of items)
    24      8*rows*cols float64 payload, row-major
    ...                 train-query id table
    ...                 item id table
    ...                 metadata (UTF-8 JSON, u32 length prefix)
    end-4   4   u32     CRC32 of the float64 payload

An id table is a u64 count followed by ``count`` entries, each a u32 byte
length plus that many bytes of UTF-8 (the decimal id).
"""

import json
import os
import struct
import tempfile
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (IndexBuildError, IndexFormatError, IndexVersionError,
                     ValidationError)

MAGIC = b"ACUR"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIQQ")
HEADER_BYTES = HEADER.size  # 24


@dataclass
class CurIndex:
    r_anc: np.ndarray
    train_query_ids: list
    item_ids: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.r_anc = np.ascontiguousarray(self.r_anc, dtype=np.float64)
        self.train_query_ids = [int(q) for q in self.train_query_ids]
        self.item_ids = [int(i) for i in self.item_ids]
        if self.r_anc.shape != (len(self.train_query_ids), len(self.item_ids)):
            raise ValidationError(
                f"r_anc shape {self.r_anc.shape} does not match id tables "
                f"({len(self.train_query_ids)} x {len(self.item_ids)})")
        if len(set(self.train_query_ids)) != len(self.train_query_ids):
            raise ValidationError("duplicate train query ids")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValidationError("duplicate item ids")
        self._pos = {i: p for p, i in enumerate(self.item_ids)}

    @property
    def num_queries(self):
        return self.r_anc.shape[0]

    @property
    def num_items(self):
        return self.r_anc.shape[1]

    def positions(self, item_ids):
        try:
            return np.fromiter((self._pos[int(i)] for i in item_ids), dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"item id {exc.args[0]} is not in the index") from None

    def columns(self, item_ids):
        """Sub-matrix of ``r_anc`` for ``item_ids``, looked up by id."""
        return self.r_anc[:, self.positions(item_ids)]

    def item_embedding(self, item_id):
        return self.r_anc[:, self._pos[int(item_id)]]


def build_index(scorer, train_queries, items, workers=1, ledger=None):
    """Score every (train query, item) pair and collect the results.

    Rows are independent, so ``workers > 1`` scores them on a thread pool.
    The number of scorer calls is recorded in ``metadata["calls"]`` and, if
    given, charged to ``ledger``.
    """
    train_queries = [int(q) for q in train_queries]
    items = [int(i) for i in items]
    if not train_queries or not items:
        raise ValidationError("build_index needs at least one query and one item")
    if len(set(train_queries)) != len(train_queries) or len(set(items)) != len(items):
        raise ValidationError("query and item ids must be unique")

    r_anc = np.empty((len(train_queries), len(items)))
    item_arr = np.asarray(items, dtype=np.int64)

    def _row(p):
        q = train_queries[p]
        try:
            r_anc[p] = scorer.score_batch(q, item_arr)
        except Exception as exc:
            raise IndexBuildError(q, _first_failing(scorer, q, items), exc) from exc

    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_row, range(len(train_queries))))
    else:
        for p in range(len(train_queries)):
            _row(p)
    elapsed = time.perf_counter() - t0

    calls = len(train_queries) * len(items)
    if ledger is not None:
        for p, q in enumerate(train_queries):
            ledger.charge(q, items, r_anc[p])
    meta = {
        "scorer": scorer.fingerprint(),
        "built_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "build_seconds": elapsed,
        "calls": calls,
    }
    return CurIndex(r_anc, train_queries, items, meta)


def _first_failing(scorer, q, items):
    # Pin the error to a single pair by retrying one item at a time.
    for i in items:
        try:
            scorer.score_batch(q, [i])
        except Exception:
            return i
    return None


def _pack_ids(ids):
    parts = [struct.pack("<Q", len(ids))]
    for i in ids:
        b = str(i).encode("utf-8")
        parts.append(struct.pack("<I", len(b)))
        parts.append(b)
    return b"".join(parts)


def encode_index(idx):
    payload = idx.r_anc.astype("<f8", copy=False).tobytes(order="C")
    meta = json.dumps(idx.metadata, sort_keys=True).encode("utf-8")
    return b"".join([
        HEADER.pack(MAGIC, FORMAT_VERSION, idx.num_queries, idx.num_items),
        payload,
        _pack_ids(idx.train_query_ids),
        _pack_ids(idx.item_ids),
        struct.pack("<I", len(meta)),
        meta,
        struct.pack("<I", zlib.crc32(payload)),
    ])


def save_index(idx, path):
    """Write ``idx`` atomically: a temp file in the same directory is renamed into place."""
    data = encode_index(idx)
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".acur-", dir=d)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.buf):
            raise IndexFormatError("truncated index file")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def ids(self):
        (count,) = self.unpack("<Q")
        out = []
        for _ in range(count):
            (n,) = self.unpack("<I")
            text = self.take(n).decode("utf-8")
            try:
                out.append(int(text))
            except ValueError:
                raise IndexFormatError(f"non-integer id {text!r}") from None
        return out


def decode_index(buf):
    if len(buf) < HEADER_BYTES:
        raise IndexFormatError("file shorter than the header")
    r = _Reader(buf)
    magic, version, rows, cols = r.unpack(HEADER.format)
    if magic != MAGIC:
        raise IndexFormatError(f"bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise IndexVersionError(f"unsupported index format version {version}")
    payload = r.take(8 * rows * cols)
    qids = r.ids()
    iids = r.ids()
    try:
        (mlen,) = r.unpack("<I")
        meta = json.loads(r.take(mlen).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IndexFormatError(f"bad metadata block: {exc}") from None
    (crc,) = r.unpack("<I")
    if r.off != len(buf):
        raise IndexFormatError("trailing bytes after checksum")
    if crc != zlib.crc32(payload):
        raise IndexFormatError("payload checksum mismatch")
    if len(qids) != rows or len(iids) != cols:
        raise IndexFormatError("id tables do not match header dimensions")
    r_anc = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)
    return CurIndex(r_anc, qids, iids, meta)


def load_index(path):
    with open(path, "rb") as f:
        return decode_index(f.read())
