"""Content-addressed blob store standing in for off-chain storage.

Addresses are plain SHA-256 digests, rendered as ``sha256:<64 hex chars>``.
Blobs live in an in-memory map with an optional directory spill (one file
per address, filename = hex digest). Puts are idempotent, which is also the
synchronization contract under concurrent use.

Model-update blob format (so addresses reproduce across implementations):
magic ``FCUP``, format version u16, round u32, client id u32, dimension
u64 (all big-endian), then ``dim`` little-endian IEEE-754 float64 values.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UPDATE_MAGIC = b"FCUP"
UPDATE_FORMAT_VERSION = 1

# Client id stored in blobs written by the aggregator for the global model.
COORDINATOR_ID = 0xFFFFFFFF


class BlobNotFoundError(KeyError):
    pass


@dataclass(frozen=True)
class ContentAddress:
    digest: bytes

    scheme = "sha256"

    def __post_init__(self):
        if not isinstance(self.digest, bytes) or len(self.digest) != 32:
            raise ValueError("digest must be exactly 32 bytes")

    @property
    def text(self) -> str:
        return f"sha256:{self.digest.hex()}"

    @classmethod
    def from_text(cls, text: str) -> "ContentAddress":
        prefix = "sha256:"
        if not text.startswith(prefix) or len(text) != len(prefix) + 64:
            raise ValueError(f"bad content address {text!r}")
        return cls(bytes.fromhex(text[len(prefix):]))

    @classmethod
    def of(cls, blob: bytes) -> "ContentAddress":
        return cls(hashlib.sha256(blob).digest())


class ContentStore:
    """Deduplicating blob store; total_size counts each blob once."""

    def __init__(self, directory: str | Path | None = None):
        self._blobs: dict[bytes, bytes] = {}
        self._total = 0
        self._lock = threading.Lock()
        self._dir = Path(directory) if directory is not None else None
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)

    def put(self, blob: bytes) -> ContentAddress:
        addr = ContentAddress.of(blob)
        with self._lock:
            if addr.digest not in self._blobs:
                self._blobs[addr.digest] = blob
                self._total += len(blob)
                if self._dir is not None:
                    (self._dir / addr.digest.hex()).write_bytes(blob)
        return addr

    def get(self, address: ContentAddress) -> bytes:
        with self._lock:
            blob = self._blobs.get(address.digest)
        if blob is None and self._dir is not None:
            path = self._dir / address.digest.hex()
            if path.is_file():
                blob = path.read_bytes()
        if blob is None:
            raise BlobNotFoundError(address.text)
        if hashlib.sha256(blob).digest() != address.digest:
            raise ValueError(f"stored blob does not match address {address.text}")
        return blob

    def __contains__(self, address: ContentAddress) -> bool:
        return address.digest in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    def total_size(self) -> int:
        return self._total


def encode_update(round_index: int, client_id: int, values: np.ndarray) -> bytes:
    values = np.ascontiguousarray(values, dtype=np.float64)
    header = UPDATE_MAGIC + struct.pack(
        ">HIIQ", UPDATE_FORMAT_VERSION, round_index, client_id, values.shape[0]
    )
    return header + values.astype("<f8").tobytes()


def decode_update(blob: bytes) -> tuple[int, int, np.ndarray]:
    """(round, client_id, values) parsed back out of an update blob."""
    head_len = len(UPDATE_MAGIC) + struct.calcsize(">HIIQ")
    if len(blob) < head_len or blob[:4] != UPDATE_MAGIC:
        raise ValueError("not a model-update blob")
    version, round_index, client_id, dim = struct.unpack(">HIIQ", blob[4:head_len])
    if version != UPDATE_FORMAT_VERSION:
        raise ValueError(f"unsupported update format version {version}")
    payload = blob[head_len:]
    if len(payload) != 8 * dim:
        raise ValueError("update blob length does not match its dimension field")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return round_index, client_id, values
