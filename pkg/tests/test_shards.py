"""Binary shard format tests: lossless round-trips, exact size accounting,
and rejection of every truncation or corruption the reader can see."""

import struct

import numpy as np
import pytest

from plotgrid.core import ImageRecord
from plotgrid.features import EmbeddingRecord
from plotgrid.shards import (
    ShardError,
    load_embedding_shard,
    load_image_shard,
    pack_embedding_shard,
    pack_image_shard,
    shard_paths,
    validate_embedding_shard,
)


def image_records(n, rng):
    return [
        ImageRecord(
            f"img_{i:03d}",
            rng.integers(0, 256, size=(int(rng.integers(1, 12)), int(rng.integers(1, 12)), 3), dtype=np.uint8),
            species=int(rng.integers(1, 10_000)) if i % 3 else None,
        )
        for i in range(n)
    ]


def embedding_records(n, rng, kind="dct64", dim=64):
    return [
        EmbeddingRecord(
            f"emb_{i:03d}",
            kind,
            rng.standard_normal(dim).astype(np.float32),
            species=int(rng.integers(1, 100)) if i % 2 else None,
        )
        for i in range(n)
    ]


class TestImageShard:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(42)
        records = image_records(10, rng)
        path = tmp_path / "batch.img1"
        pack_image_shard(path, records)
        loaded = load_image_shard(path)
        assert len(loaded) == 10
        for got, want in zip(loaded, records):
            assert got.image_id == want.image_id
            assert got.species == want.species
            np.testing.assert_array_equal(got.pixels, want.pixels)

    def test_empty_list_refused_and_no_file(self, tmp_path):
        path = tmp_path / "never.img1"
        with pytest.raises(ShardError, match="empty"):
            pack_image_shard(path, [])
        assert not path.exists()

    def test_size_formula(self, tmp_path):
        """File length is exactly header + per-record sizes."""
        rng = np.random.default_rng(7)
        records = image_records(50, rng)
        path = tmp_path / "sized.img1"
        pack_image_shard(path, records)
        expected = 4 + 4  # magic + count
        for rec in records:
            h, w, _ = rec.pixels.shape
            expected += 2 + len(rec.image_id.encode())  # id
            expected += 1 + (8 if rec.species is not None else 0)  # label
            expected += 2 + 2 + h * w * 3  # dims + pixels
        assert path.stat().st_size == expected

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.img1"
        path.write_bytes(b"XXXX" + struct.pack("<I", 0))
        with pytest.raises(ShardError, match="magic"):
            load_image_shard(path)

    def test_truncation_detected(self, tmp_path):
        rng = np.random.default_rng(1)
        path = tmp_path / "cut.img1"
        pack_image_shard(path, image_records(3, rng))
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(ShardError, match="truncated"):
            load_image_shard(path)

    def test_trailing_bytes_detected(self, tmp_path):
        rng = np.random.default_rng(2)
        path = tmp_path / "extra.img1"
        pack_image_shard(path, image_records(2, rng))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(ShardError, match="trailing"):
            load_image_shard(path)


class TestEmbeddingShard:
    def test_round_trip_both_kinds(self, tmp_path):
        rng = np.random.default_rng(42)
        for kind, dim in [("dct64", 64), ("cls768", 768)]:
            records = embedding_records(5, rng, kind, dim)
            path = tmp_path / f"{kind}.emb1"
            pack_embedding_shard(path, records)
            loaded = load_embedding_shard(path)
            for got, want in zip(loaded, records):
                assert got.image_id == want.image_id
                assert got.kind == kind
                assert got.species == want.species
                np.testing.assert_array_equal(got.vector, want.vector)

    def test_vectors_stored_as_float32(self, tmp_path):
        rng = np.random.default_rng(3)
        records = [EmbeddingRecord("a", "dct64", rng.standard_normal(64))]
        path = tmp_path / "f32.emb1"
        pack_embedding_shard(path, records)
        loaded = load_embedding_shard(path)[0]
        np.testing.assert_array_equal(
            loaded.vector, records[0].vector.astype(np.float32).astype(np.float64)
        )

    def test_mixed_kinds_refused(self, tmp_path):
        rng = np.random.default_rng(4)
        mixed = embedding_records(2, rng) + embedding_records(1, rng, "cls768", 768)
        with pytest.raises(ShardError, match="kind"):
            pack_embedding_shard(tmp_path / "mixed.emb1", mixed)

    def test_empty_refused(self, tmp_path):
        with pytest.raises(ShardError, match="empty"):
            pack_embedding_shard(tmp_path / "none.emb1", [])

    def test_validator_reports_kind_dim_count(self, tmp_path):
        rng = np.random.default_rng(5)
        path = tmp_path / "check.emb1"
        pack_embedding_shard(path, embedding_records(7, rng))
        assert validate_embedding_shard(path) == ("dct64", 64, 7)

    def test_validator_rejects_corrupt_vector_bytes(self, tmp_path):
        rng = np.random.default_rng(6)
        path = tmp_path / "nan.emb1"
        pack_embedding_shard(path, embedding_records(1, rng))
        data = bytearray(path.read_bytes())
        # overwrite the last float with NaN
        data[-4:] = struct.pack("<f", float("nan"))
        path.write_bytes(bytes(data))
        with pytest.raises(ShardError, match="finite"):
            validate_embedding_shard(path)

    def test_unknown_kind_byte(self, tmp_path):
        rng = np.random.default_rng(8)
        path = tmp_path / "kind.emb1"
        pack_embedding_shard(path, embedding_records(1, rng))
        data = bytearray(path.read_bytes())
        data[4] = 9  # kind byte sits right after the magic
        path.write_bytes(bytes(data))
        with pytest.raises(ShardError, match="kind"):
            load_embedding_shard(path)


class TestShardPaths:
    def test_sorted_discovery(self, tmp_path):
        rng = np.random.default_rng(9)
        for name in ["b.emb1", "a.emb1", "c.txt"]:
            if name.endswith(".emb1"):
                pack_embedding_shard(tmp_path / name, embedding_records(1, rng))
            else:
                (tmp_path / name).write_text("not a shard")
        found = shard_paths(tmp_path, ".emb1")
        assert [p.name for p in found] == ["a.emb1", "b.emb1"]

    def test_missing_directory(self, tmp_path):
        with pytest.raises((FileNotFoundError, ShardError)):
            shard_paths(tmp_path / "void", ".emb1")
