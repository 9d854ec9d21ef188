import struct
import zlib

import numpy as np
import pytest

from adacur.errors import IndexBuildError, IndexFormatError, IndexVersionError, ValidationError
from adacur.index import HEADER_BYTES, CurIndex, build_index, encode_index, load_index, save_index
from adacur.scorer import CallLedger, MatrixScorer, SyntheticCorpusSpec, make_synthetic


def test_single_cell():
    idx = build_index(MatrixScorer([[2.5]]), [0], [0])
    np.testing.assert_array_equal(idx.r_anc, [[2.5]])


def test_passthrough_of_known_matrix():
    m = np.random.default_rng(0).standard_normal((5, 8))
    ledger = CallLedger()
    idx = build_index(MatrixScorer(m), range(5), range(8), ledger=ledger)
    np.testing.assert_array_equal(idx.r_anc, m)
    assert ledger.total == 40
    assert idx.metadata["calls"] == 40


def test_parallel_build_identical():
    m = np.random.default_rng(1).standard_normal((12, 30))
    a = build_index(MatrixScorer(m), range(12), range(30))
    b = build_index(MatrixScorer(m), range(12), range(30), workers=4)
    assert a.r_anc.tobytes() == b.r_anc.tobytes()


def test_large_index_dimensions():
    # 500 anchor queries against 10,031 items.
    spec = SyntheticCorpusSpec(num_items=10031, num_queries=500, latent_rank=16, seed=0)
    scorer, _ = make_synthetic(spec)
    idx = build_index(scorer, range(500), range(10031))
    assert idx.r_anc.shape == (500, 10031)
    assert scorer.calls == 500 * 10031


def test_subset_of_rows_and_columns_by_id():
    m = np.arange(30.0).reshape(5, 6)
    idx = build_index(MatrixScorer(m), [4, 1], [5, 0, 3])
    np.testing.assert_array_equal(idx.r_anc, m[[4, 1]][:, [5, 0, 3]])
    np.testing.assert_array_equal(idx.columns([3, 5]), m[[4, 1]][:, [3, 5]])
    with pytest.raises(ValidationError):
        idx.columns([2])


def test_build_failure_names_pair():
    class Flaky(MatrixScorer):
        def _score_batch(self, q, items):
            if q == 2 and 3 in items:
                raise RuntimeError("boom")
            return super()._score_batch(q, items)

    with pytest.raises(IndexBuildError) as err:
        build_index(Flaky(np.zeros((4, 5))), range(4), range(5))
    assert (err.value.query_id, err.value.item_id) == (2, 3)


def test_duplicate_ids_rejected():
    with pytest.raises(ValidationError):
        build_index(MatrixScorer(np.zeros((2, 2))), [0, 0], [0, 1])


def _random_index(rows=16, cols=64, seed=0):
    m = np.random.default_rng(seed).standard_normal((rows, cols))
    return CurIndex(m, range(100, 100 + rows), range(cols), {"scorer": "test"})


def test_round_trip_bit_exact(tmp_path):
    idx = _random_index()
    path = tmp_path / "a.acur"
    save_index(idx, path)
    back = load_index(path)
    assert back.r_anc.tobytes() == idx.r_anc.tobytes()
    assert back.train_query_ids == idx.train_query_ids
    assert back.item_ids == idx.item_ids
    assert back.metadata == idx.metadata


def test_file_size_matches_layout(tmp_path):
    idx = _random_index(3, 12)
    path = tmp_path / "b.acur"
    save_index(idx, path)

    def table(ids):
        return 8 + sum(4 + len(str(i)) for i in ids)

    meta = len(b'{"scorer": "test"}')
    expected = (HEADER_BYTES + 8 * 3 * 12 + table(idx.train_query_ids) + table(idx.item_ids)
                + 4 + meta + 4)
    assert path.stat().st_size == expected
    raw = path.read_bytes()
    assert raw[:4] == b"ACUR"
    assert struct.unpack("<IQQ", raw[4:24]) == (1, 3, 12)
    payload = raw[24:24 + 8 * 36]
    assert struct.unpack("<I", raw[-4:])[0] == zlib.crc32(payload)


def test_bad_magic(tmp_path):
    raw = bytearray(encode_index(_random_index()))
    raw[:4] = b"XXXX"
    (tmp_path / "c").write_bytes(bytes(raw))
    with pytest.raises(IndexFormatError, match="magic"):
        load_index(tmp_path / "c")


def test_version_mismatch(tmp_path):
    raw = bytearray(encode_index(_random_index()))
    raw[4:8] = struct.pack("<I", 99)
    (tmp_path / "d").write_bytes(bytes(raw))
    with pytest.raises(IndexVersionError):
        load_index(tmp_path / "d")


@pytest.mark.parametrize("cut", [10, 24, 500, -3])
def test_truncated(tmp_path, cut):
    raw = encode_index(_random_index())
    (tmp_path / "e").write_bytes(raw[:cut])
    with pytest.raises(IndexFormatError):
        load_index(tmp_path / "e")


def test_corrupt_payload_checksum(tmp_path):
    raw = bytearray(encode_index(_random_index()))
    raw[40] ^= 0xFF
    (tmp_path / "f").write_bytes(bytes(raw))
    with pytest.raises(IndexFormatError, match="checksum"):
        load_index(tmp_path / "f")
