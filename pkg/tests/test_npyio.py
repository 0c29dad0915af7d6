"""NPY reader/writer checks, cross-validated against numpy's own loader."""

import io
import struct

import numpy as np
import pytest

from onetfwi.npyio import MAGIC, NpyFormatError, read_npy, write_npy


@pytest.mark.parametrize(
    "dtype", ["<f4", "<f8", "<i4", "<i8", "<u2", "|u1", "|b1"]
)
def test_round_trip_bit_exact(tmp_path, rng, dtype):
    dt = np.dtype(dtype)
    if dt.kind == "f":
        arr = rng.standard_normal((3, 5, 2)).astype(dt)
    elif dt.kind == "b":
        arr = (rng.integers(0, 2, (4, 3)) > 0).astype(dt)
    else:
        arr = rng.integers(0, 100, (7, 2)).astype(dt)
    p = tmp_path / "a.npy"
    write_npy(p, arr)
    back = read_npy(p)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_numpy_reads_our_files(tmp_path, rng):
    arr = rng.standard_normal((6, 4)).astype(np.float32)
    p = tmp_path / "ours.npy"
    write_npy(p, arr)
    np.testing.assert_array_equal(np.load(p), arr)


def test_we_read_numpy_files(tmp_path, rng):
    arr = rng.integers(-50, 50, (2, 3, 4)).astype(np.int32)
    p = tmp_path / "theirs.npy"
    np.save(p, arr)
    np.testing.assert_array_equal(read_npy(p), arr)


def test_data_block_64_byte_aligned(tmp_path):
    p = tmp_path / "a.npy"
    write_npy(p, np.zeros((3, 3), np.float32))
    raw = p.read_bytes()
    (hlen,) = struct.unpack("<H", raw[8:10])
    assert (10 + hlen) % 64 == 0
    assert raw[10 + hlen - 1:10 + hlen] == b"\n"


def test_scalar_and_empty_shapes(tmp_path):
    for arr in (np.float64(3.25).reshape(()), np.zeros((0, 4), np.float32)):
        p = tmp_path / "s.npy"
        write_npy(p, arr)
        back = read_npy(p)
        assert back.shape == arr.shape
        assert back.tobytes() == arr.tobytes()


def test_mmap_matches_eager(tmp_path, rng):
    arr = rng.standard_normal((16, 8)).astype(np.float32)
    p = tmp_path / "m.npy"
    write_npy(p, arr)
    m = read_npy(p, mmap=True)
    assert isinstance(m, np.memmap)
    np.testing.assert_array_equal(np.asarray(m), arr)


def test_version_2_header_accepted(tmp_path):
    arr = np.arange(6, dtype=np.int64).reshape(2, 3)
    header = "{'descr': '<i8', 'fortran_order': False, 'shape': (2, 3), }\n"
    p = tmp_path / "v2.npy"
    with open(p, "wb") as f:
        f.write(MAGIC + bytes([2, 0]))
        f.write(struct.pack("<I", len(header)))
        f.write(header.encode())
        f.write(arr.tobytes())
    np.testing.assert_array_equal(read_npy(p), arr)


class TestRejection:
    """Corrupted files must raise before any data is returned."""

    def write_raw(self, tmp_path, body: bytes):
        p = tmp_path / "bad.npy"
        p.write_bytes(body)
        return p

    def test_bad_magic(self, tmp_path):
        p = self.write_raw(tmp_path, b"\x93NUMPZ" + bytes(64))
        with pytest.raises(NpyFormatError, match="magic"):
            read_npy(p)

    def test_unsupported_version(self, tmp_path):
        p = self.write_raw(tmp_path, MAGIC + bytes([9, 0]) + bytes(32))
        with pytest.raises(NpyFormatError, match="version"):
            read_npy(p)

    def test_truncated_data(self, tmp_path, rng):
        arr = rng.standard_normal((4, 4)).astype(np.float32)
        p = tmp_path / "t.npy"
        write_npy(p, arr)
        raw = p.read_bytes()
        p.write_bytes(raw[:-8])
        with pytest.raises(NpyFormatError, match="truncated"):
            read_npy(p)

    def test_header_not_a_dict(self, tmp_path):
        header = "[1, 2, 3]"
        body = MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)) + header.encode()
        with pytest.raises(NpyFormatError):
            read_npy(self.write_raw(tmp_path, body))

    def test_header_with_code_is_rejected(self, tmp_path):
        # literal_eval must refuse anything executable
        header = "{'descr': '<f4', 'fortran_order': False, 'shape': __import__('os')}"
        body = MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)) + header.encode()
        with pytest.raises(NpyFormatError):
            read_npy(self.write_raw(tmp_path, body))

    def test_fortran_order_rejected(self, tmp_path):
        header = "{'descr': '<f4', 'fortran_order': True, 'shape': (2, 2), }"
        body = (
            MAGIC + bytes([1, 0]) + struct.pack("<H", len(header))
            + header.encode() + bytes(16)
        )
        with pytest.raises(NpyFormatError, match="fortran"):
            read_npy(self.write_raw(tmp_path, body))

    def test_unsupported_descr(self, tmp_path):
        header = "{'descr': '<c16', 'fortran_order': False, 'shape': (1,), }"
        body = (
            MAGIC + bytes([1, 0]) + struct.pack("<H", len(header))
            + header.encode() + bytes(16)
        )
        with pytest.raises(NpyFormatError, match="descr"):
            read_npy(self.write_raw(tmp_path, body))

    def test_missing_header_key(self, tmp_path):
        header = "{'descr': '<f4', 'shape': (1,)}"
        body = (
            MAGIC + bytes([1, 0]) + struct.pack("<H", len(header))
            + header.encode() + bytes(4)
        )
        with pytest.raises(NpyFormatError, match="must define"):
            read_npy(self.write_raw(tmp_path, body))

    def test_negative_shape_entry(self, tmp_path):
        header = "{'descr': '<f4', 'fortran_order': False, 'shape': (-1, 2)}"
        body = (
            MAGIC + bytes([1, 0]) + struct.pack("<H", len(header))
            + header.encode() + bytes(8)
        )
        with pytest.raises(NpyFormatError, match="shape"):
            read_npy(self.write_raw(tmp_path, body))

    def test_write_refuses_object_dtype(self, tmp_path):
        with pytest.raises(NpyFormatError, match="refusing"):
            write_npy(tmp_path / "o.npy", np.array([{"a": 1}], dtype=object))
