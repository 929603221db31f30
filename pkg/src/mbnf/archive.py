"""Single-file archive container for feature matrices, alignments and models.

Layout: magic "MBNA", little-endian u32 version (1), then records:

    [key_len u16][key bytes][kind u8][rows u32][cols u32]
    [dtype u8: 0=f32, 1=f64, 2=u32][payload little-endian][crc32 u32]

The CRC covers everything from key_len through the payload. Keys are unique
per kind. Vectors are stored as 1 x n matrices.
"""

import struct
import zlib

import numpy as np

from .errors import DataError, IntegrityError, OverwriteError

MAGIC = b"MBNA"
VERSION = 1

KIND_CODES = {
    "synth": 0,
    "mfcc13": 1,
    "mfcc13dd": 2,
    "mfcc40": 3,
    "pitch3": 4,
    "ivec": 5,
    "bnf": 6,
    "combined": 7,
    "align": 8,
    "ubm": 9,
    "tvmodel": 10,
    "net": 11,
}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u4")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint32"): 2}

_HEAD = struct.Struct("<BIIB")  # kind, rows, cols, dtype


class ArchiveWriter:
    """Sequential writer; records are laid down in call order."""

    def __init__(self, path, force=False):
        self.path = str(path)
        mode = "wb" if force else "xb"
        try:
            self._fh = open(self.path, mode)
        except FileExistsError:
            raise OverwriteError(f"{path} exists; pass --force to overwrite") from None
        self._fh.write(MAGIC)
        self._fh.write(struct.pack("<I", VERSION))
        self._seen = set()

    def put(self, kind, key, array):
        if kind not in KIND_CODES:
            raise DataError(f"unknown archive kind {kind!r}")
        if (kind, key) in self._seen:
            raise DataError(f"duplicate archive record {kind}/{key}")
        self._seen.add((kind, key))
        arr = np.asarray(array)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DataError(f"{kind}/{key}: archives hold 1-D or 2-D arrays only")
        if arr.dtype == np.int32 or arr.dtype == np.int64:
            if arr.size and arr.min() < 0:
                raise DataError(f"{kind}/{key}: negative values cannot be stored as u32")
            arr = arr.astype(np.uint32)
        if arr.dtype not in _DTYPE_CODES:
            raise DataError(f"{kind}/{key}: unsupported dtype {arr.dtype}")
        dtype_code = _DTYPE_CODES[arr.dtype]
        key_bytes = key.encode("utf-8")
        if len(key_bytes) > 0xFFFF:
            raise DataError(f"{kind}/{key}: key too long")
        payload = np.ascontiguousarray(arr).astype(_DTYPES[dtype_code]).tobytes()
        body = (
            struct.pack("<H", len(key_bytes))
            + key_bytes
            + _HEAD.pack(KIND_CODES[kind], arr.shape[0], arr.shape[1], dtype_code)
            + payload
        )
        self._fh.write(body)
        self._fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


class ArchiveReader:
    """Random-access reader; CRCs are verified on every get()."""

    def __init__(self, path):
        self.path = str(path)
        try:
            self._fh = open(self.path, "rb")
        except FileNotFoundError:
            raise DataError(f"archive not found: {path}") from None
        magic = self._fh.read(4)
        if magic != MAGIC:
            raise IntegrityError(f"{path}: bad magic {magic!r}")
        (version,) = struct.unpack("<I", self._fh.read(4))
        if version != VERSION:
            raise IntegrityError(f"{path}: unsupported version {version}")
        self._index = {}
        self._scan()

    def _scan(self):
        fh = self._fh
        while True:
            start = fh.tell()
            head = fh.read(2)
            if not head:
                break
            if len(head) < 2:
                raise IntegrityError(f"{self.path}: truncated record header")
            (key_len,) = struct.unpack("<H", head)
            key_bytes = fh.read(key_len)
            rest = fh.read(_HEAD.size)
            if len(key_bytes) < key_len or len(rest) < _HEAD.size:
                raise IntegrityError(f"{self.path}: truncated record at {start}")
            kind_code, rows, cols, dtype_code = _HEAD.unpack(rest)
            if kind_code not in KIND_NAMES or dtype_code not in _DTYPES:
                raise IntegrityError(f"{self.path}: invalid record header at {start}")
            payload_len = rows * cols * _DTYPES[dtype_code].itemsize
            fh.seek(payload_len + 4, 1)
            if fh.tell() > self._size():
                raise IntegrityError(f"{self.path}: truncated record at {start}")
            key = key_bytes.decode("utf-8")
            kind = KIND_NAMES[kind_code]
            if (kind, key) in self._index:
                raise IntegrityError(f"{self.path}: duplicate record {kind}/{key}")
            self._index[(kind, key)] = start

    def _size(self):
        pos = self._fh.tell()
        self._fh.seek(0, 2)
        size = self._fh.tell()
        self._fh.seek(pos)
        return size

    def keys(self, kind=None):
        if kind is None:
            return sorted(self._index)
        return sorted(key for k, key in self._index if k == kind)

    def __contains__(self, kind_key):
        return tuple(kind_key) in self._index

    def get(self, kind, key):
        try:
            offset = self._index[(kind, key)]
        except KeyError:
            raise DataError(f"{self.path}: no record {kind}/{key}") from None
        fh = self._fh
        fh.seek(offset)
        (key_len,) = struct.unpack("<H", fh.read(2))
        key_bytes = fh.read(key_len)
        head = fh.read(_HEAD.size)
        kind_code, rows, cols, dtype_code = _HEAD.unpack(head)
        dtype = _DTYPES[dtype_code]
        payload = fh.read(rows * cols * dtype.itemsize)
        (crc_stored,) = struct.unpack("<I", fh.read(4))
        body = struct.pack("<H", key_len) + key_bytes + head + payload
        if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
            raise IntegrityError(f"{self.path}: checksum mismatch for {kind}/{key}")
        return np.frombuffer(payload, dtype=dtype).reshape(rows, cols).copy()

    def verify(self):
        """Validate every record's checksum."""
        for kind, key in list(self._index):
            self.get(kind, key)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
