import numpy as np
import pytest

from app.lab.primes import PrimePartition
from app.providers.partition_provider import (
    decode_varints,
    encode_varints,
    get_partition,
    read_partition,
    write_partition,
)


def test_varint_layout():
    assert encode_varints(np.array([1, 127, 128, 300])) == bytes([0x01, 0x7F, 0x80, 0x01, 0xAC, 0x02])
    assert decode_varints(bytes([0xAC, 0x02, 0x05])).tolist() == [300, 5]


def test_truncated_varint_stream():
    with pytest.raises(ValueError):
        decode_varints(bytes([0x80]))


def test_cache_file_roundtrip(tmp_path, partition):
    path = write_partition(partition, tmp_path / "primes.zxlb")
    reread = read_partition(path)
    assert reread.sieve_limit == partition.sieve_limit
    assert sorted(reread.blocks) == sorted(partition.blocks)
    np.testing.assert_array_equal(reread.explicit_primes(), partition.explicit_primes())
    assert not list(tmp_path.glob(".zxlb-*"))


def test_rejects_foreign_file(tmp_path):
    bad = tmp_path / "bad.zxlb"
    bad.write_bytes(b"NOTZX" + bytes(16))
    with pytest.raises(ValueError):
        read_partition(bad)


def test_get_partition_prefers_cache(tmp_path):
    # a deliberately artificial partition proves the file was read rather than re-sieved
    fake = PrimePartition.from_blocks({0: [2], 1: [3, 5]}, sieve_limit=100)
    path = write_partition(fake, tmp_path / "fake.zxlb")
    loaded = get_partition(50, str(path))
    assert loaded.explicit_primes().tolist() == [2, 3, 5]


def test_get_partition_sieves_without_cache(tmp_path):
    loaded = get_partition(1000, str(tmp_path / "missing.zxlb"))
    assert loaded.explicit_primes().size == 168


def test_rejects_mislabelled_block(tmp_path):
    fake = PrimePartition.from_blocks({0: [2], 1: [3, 5]}, sieve_limit=100)
    path = write_partition(fake, tmp_path / "fake.zxlb")
    raw = bytearray(path.read_bytes())
    # magic, 8-byte limit, block count, then the first block's index
    assert raw[14] == 0
    raw[14] = 1
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError):
        read_partition(path)
