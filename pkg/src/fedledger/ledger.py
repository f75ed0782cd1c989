"""Simulated blockchain ledger for model-update transactions.

Single honest validator, one hash-chained block per training round. Client
authenticity is a keyed MAC (HMAC-SHA256) over the client-authored fields;
gas is a fixed base cost per transaction and confirmation latency comes from
a dedicated deterministic stream, advancing a simulated clock (wall time
never enters any hash).

Canonical serialization (fixed field order, big-endian integers, floats as
big-endian IEEE-754 bits, length-prefixed byte strings):

  transaction: u32 round | u32 client_id | u16 len + address text |
               u64 payload_bytes | u64 gas_used | f64 sim_timestamp |
               u16 len + signature
  block:       u64 index | 32B prev_hash | u32 tx_count | transactions |
               f64 sim_timestamp | 32B block_hash

The block hash is SHA-256 of everything before the trailing block_hash
field. The chain export is one lowercase-hex block record per line.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, replace
from typing import NamedTuple

from .cas import ContentAddress
from .rng import RngStream

GENESIS_PREV_HASH = bytes(32)

_SIGN_DOMAIN = b"fedledger.tx.v1"


class RegistrationError(ValueError):
    pass


class SignatureError(ValueError):
    pass


class RoundMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class LedgerConfig:
    base_gas: int = 22_152
    gas_price_gwei: float = 20.0
    latency_mean_s: float = 6.0
    latency_jitter_s: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.base_gas <= 0:
            raise ValueError("base_gas must be > 0")
        if self.latency_mean_s <= 0 or self.latency_jitter_s < 0:
            raise ValueError("bad latency model parameters")


@dataclass(frozen=True)
class UpdateTransaction:
    round: int
    client_id: int
    update_address: ContentAddress
    payload_bytes: int
    signature: bytes
    gas_used: int = 0
    sim_timestamp: float = 0.0


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    transactions: tuple[UpdateTransaction, ...]
    sim_timestamp: float
    block_hash: bytes


class Receipt(NamedTuple):
    tx_digest: bytes
    gas_used: int
    latency: float
    block_index: int


class TxCost(NamedTuple):
    gwei: float
    eth: float


class ChainReport(NamedTuple):
    valid: bool
    block_index: int | None = None
    reason: str | None = None


def tx_cost(gas_used: int, gas_price_gwei: float) -> TxCost:
    """Total transaction cost: gas * price, in Gwei and ETH (1 Gwei = 1e-9 ETH)."""
    if gas_used < 0 or gas_price_gwei < 0:
        raise ValueError("gas and price must be non-negative")
    gwei = gas_used * gas_price_gwei
    return TxCost(gwei, gwei * 1e-9)


def _signing_payload(round_index: int, client_id: int, address: ContentAddress,
                     payload_bytes: int) -> bytes:
    addr = address.text.encode("ascii")
    return (
        _SIGN_DOMAIN
        + struct.pack(">II", round_index, client_id)
        + struct.pack(">H", len(addr))
        + addr
        + struct.pack(">Q", payload_bytes)
    )


def make_transaction(key: bytes, round_index: int, client_id: int,
                     address: ContentAddress, payload_bytes: int) -> UpdateTransaction:
    """Client-side constructor: signs the authored fields with the client key."""
    signature = hmac.new(
        key, _signing_payload(round_index, client_id, address, payload_bytes), hashlib.sha256
    ).digest()
    return UpdateTransaction(round_index, client_id, address, payload_bytes, signature)


def serialize_transaction(tx: UpdateTransaction) -> bytes:
    addr = tx.update_address.text.encode("ascii")
    return (
        struct.pack(">II", tx.round, tx.client_id)
        + struct.pack(">H", len(addr))
        + addr
        + struct.pack(">QQd", tx.payload_bytes, tx.gas_used, tx.sim_timestamp)
        + struct.pack(">H", len(tx.signature))
        + tx.signature
    )


def _block_prefix(index: int, prev_hash: bytes,
                  transactions: tuple[UpdateTransaction, ...], sim_timestamp: float) -> bytes:
    body = struct.pack(">Q", index) + prev_hash + struct.pack(">I", len(transactions))
    for tx in transactions:
        body += serialize_transaction(tx)
    return body + struct.pack(">d", sim_timestamp)


def block_hash_of(index: int, prev_hash: bytes,
                  transactions: tuple[UpdateTransaction, ...], sim_timestamp: float) -> bytes:
    return hashlib.sha256(_block_prefix(index, prev_hash, transactions, sim_timestamp)).digest()


def serialize_block(block: Block) -> bytes:
    return _block_prefix(block.index, block.prev_hash, block.transactions,
                         block.sim_timestamp) + block.block_hash


class _Cursor:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise ValueError("truncated record")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_block(raw: bytes) -> Block:
    """Inverse of serialize_block; raises ValueError on any inconsistency."""
    cur = _Cursor(raw)
    (index,) = cur.unpack(">Q")
    prev_hash = cur.take(32)
    (tx_count,) = cur.unpack(">I")
    txs = []
    for _ in range(tx_count):
        round_index, client_id = cur.unpack(">II")
        (addr_len,) = cur.unpack(">H")
        addr = ContentAddress.from_text(cur.take(addr_len).decode("ascii"))
        payload_bytes, gas_used, ts = cur.unpack(">QQd")
        (sig_len,) = cur.unpack(">H")
        sig = cur.take(sig_len)
        txs.append(UpdateTransaction(round_index, client_id, addr, payload_bytes,
                                     sig, gas_used, ts))
    (sim_timestamp,) = cur.unpack(">d")
    stored_hash = cur.take(32)
    if cur.pos != len(raw):
        raise ValueError("trailing bytes after block record")
    return Block(index, prev_hash, tuple(txs), sim_timestamp, stored_hash)


class Ledger:
    """Single-writer simulated chain; reads are safe alongside no writer."""

    def __init__(self, config: LedgerConfig | None = None, first_round: int = 1):
        self.config = config or LedgerConfig()
        self._keys: dict[int, bytes] = {}
        self._pending: list[UpdateTransaction] = []
        self._chain: list[Block] = []
        self._open_round = first_round
        self._clock = 0.0

    @property
    def open_round(self) -> int:
        return self._open_round

    @property
    def chain(self) -> tuple[Block, ...]:
        return tuple(self._chain)

    @property
    def registered_ids(self) -> frozenset[int]:
        return frozenset(self._keys)

    @property
    def sim_clock(self) -> float:
        return self._clock

    def register_client(self, client_id: int, key: bytes) -> None:
        if client_id in self._keys:
            raise RegistrationError(f"client id {client_id} already registered")
        if not key:
            raise RegistrationError("empty key")
        self._keys[client_id] = bytes(key)

    def _check_signature(self, tx: UpdateTransaction) -> None:
        key = self._keys.get(tx.client_id)
        if key is None:
            raise RegistrationError(f"client id {tx.client_id} is not registered")
        expected = hmac.new(
            key,
            _signing_payload(tx.round, tx.client_id, tx.update_address, tx.payload_bytes),
            hashlib.sha256,
        ).digest()
        if not hmac.compare_digest(expected, tx.signature):
            raise SignatureError(f"bad signature from client {tx.client_id}")

    def submit_update(self, tx: UpdateTransaction) -> Receipt:
        self._check_signature(tx)
        if tx.round != self._open_round:
            raise RoundMismatchError(
                f"transaction for round {tx.round}, open block is round {self._open_round}"
            )
        stream = RngStream(self.config.seed, "latency", tx.round, tx.client_id)
        jitter = self.config.latency_jitter_s * stream.uniform(-1.0, 1.0)
        latency = max(0.001, self.config.latency_mean_s + jitter)
        self._clock += latency
        accepted = replace(tx, gas_used=self.config.base_gas, sim_timestamp=self._clock)
        self._pending.append(accepted)
        digest = hashlib.sha256(serialize_transaction(accepted)).digest()
        return Receipt(digest, accepted.gas_used, latency, len(self._chain))

    def seal_block(self) -> Block:
        if not self._pending:
            raise ValueError("no pending transactions to seal")
        index = len(self._chain)
        prev = self._chain[-1].block_hash if self._chain else GENESIS_PREV_HASH
        txs = tuple(self._pending)
        digest = block_hash_of(index, prev, txs, self._clock)
        block = Block(index, prev, txs, self._clock, digest)
        self._chain.append(block)
        self._pending = []
        self._open_round += 1
        return block

    def verify_chain(self) -> ChainReport:
        """Recompute every hash, check linkage and every transaction signature."""
        prev = GENESIS_PREV_HASH
        for i, block in enumerate(self._chain):
            if block.index != i:
                return ChainReport(False, i, f"block index {block.index}, expected {i}")
            if block.prev_hash != prev:
                return ChainReport(False, i, "previous-hash link broken")
            recomputed = block_hash_of(block.index, block.prev_hash,
                                       block.transactions, block.sim_timestamp)
            if recomputed != block.block_hash:
                return ChainReport(False, i, "block hash mismatch")
            for tx in block.transactions:
                try:
                    self._check_signature(tx)
                except (RegistrationError, SignatureError) as exc:
                    return ChainReport(False, i, str(exc))
            prev = block.block_hash
        return ChainReport(True)

    def export_chain(self) -> str:
        """Newline-delimited hex block records for external audit."""
        return "".join(serialize_block(b).hex() + "\n" for b in self._chain)


def verify_exported_chain(text: str) -> ChainReport:
    """Structural + hash/linkage verification of an exported chain.

    Signatures are not checked here: the export carries no client keys.
    """
    prev = GENESIS_PREV_HASH
    lines = [line for line in text.splitlines() if line.strip()]
    for i, line in enumerate(lines):
        try:
            block = parse_block(bytes.fromhex(line))
        except ValueError as exc:
            return ChainReport(False, i, f"unparseable block record: {exc}")
        if block.index != i:
            return ChainReport(False, i, f"block index {block.index}, expected {i}")
        if block.prev_hash != prev:
            return ChainReport(False, i, "previous-hash link broken")
        recomputed = block_hash_of(block.index, block.prev_hash,
                                   block.transactions, block.sim_timestamp)
        if recomputed != block.block_hash:
            return ChainReport(False, i, "block hash mismatch")
        prev = block.block_hash
    return ChainReport(True)
