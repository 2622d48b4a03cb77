"""Blocks, canonical serialization, the hash-linked chain and its file format.

Canonical block layout (all integers big-endian; ``lp(x)`` is a 4-byte length
prefix followed by ``x``)::

    lp(source_id) | mac[6] | u32 tx_count |
        { lp(tx.source_id) | u64 tx.timestamp | lp(tx.payload) } * tx_count |
    hash_prev[32]

The source signature and the authentication tag are outside this region.
Ledger files are a plain sequence of records ``u32 length | body`` where body is
the canonical block followed by an optional signature and an optional tag.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .crypto import Signature, digest, verify
from .identity import MAC_LEN, Registry, Role

DIGEST_LEN = 32
GENESIS_HASH = bytes(DIGEST_LEN)
GENESIS_ID = "genesis"
MAX_PAYLOAD = 35

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class LedgerError(Exception):
    pass


class SerializationError(LedgerError):
    pass


class UnauthenticatedBlockError(LedgerError):
    """append() was given a block with no authentication tag."""


class ForkError(LedgerError):
    """append() was given a block whose hash_prev is not the current head."""

    def __init__(self, block: "Block", head_hash: bytes):
        super().__init__(
            f"hash_prev {block.hash_prev.hex()[:16]} does not match head {head_hash.hex()[:16]}"
        )
        self.block = block
        self.head_hash = head_hash


class LedgerLoadError(LedgerError):
    """A ledger file record could not be parsed.

    ``recovered`` holds the chain made of every record before the bad one.
    """

    def __init__(self, message: str, offset: int, record_index: int, recovered: "ChainState"):
        super().__init__(f"{message} (record {record_index} at byte offset {offset})")
        self.offset = offset
        self.record_index = record_index
        self.recovered = recovered


@dataclass(frozen=True)
class Transaction:
    source_id: str
    timestamp: int
    payload: bytes = b""


@dataclass(frozen=True)
class AuthenticationTag:
    authenticator_id: str
    signature: Signature


@dataclass(frozen=True)
class Block:
    source_id: str
    mac: bytes
    transactions: Tuple[Transaction, ...]
    hash_prev: bytes
    signature: Optional[Signature] = None
    poah_tag: Optional[AuthenticationTag] = None

    @cached_property
    def digest(self) -> bytes:
        """Link hash: digest of the canonical bytes (signature and tag excluded)."""
        return digest(serialize(self))

    def with_signature(self, signature: Signature) -> Block:
        return replace(self, signature=signature)

    def with_tag(self, tag: Optional[AuthenticationTag]) -> Block:
        return replace(self, poah_tag=tag)


def genesis_block() -> Block:
    """Chain bootstrap block, trusted by configuration rather than by signature."""
    return Block(
        source_id=GENESIS_ID,
        mac=bytes(MAC_LEN),
        transactions=(Transaction(GENESIS_ID, 0, b""),),
        hash_prev=GENESIS_HASH,
    )


def _lp(data: bytes) -> bytes:
    return _U32.pack(len(data)) + data


def _int_bytes(value: int) -> bytes:
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def serialize(block: Block, max_payload: int = MAX_PAYLOAD) -> bytes:
    if not block.transactions:
        raise SerializationError("block has no transactions")
    if len(block.mac) != MAC_LEN:
        raise SerializationError(f"mac must be {MAC_LEN} bytes")
    if len(block.hash_prev) != DIGEST_LEN:
        raise SerializationError(f"hash_prev must be {DIGEST_LEN} bytes")
    parts = [_lp(block.source_id.encode()), bytes(block.mac), _U32.pack(len(block.transactions))]
    for tx in block.transactions:
        if len(tx.payload) > max_payload:
            raise SerializationError(
                f"payload of {len(tx.payload)} bytes exceeds the {max_payload}-byte limit"
            )
        if tx.timestamp < 0:
            raise SerializationError("transaction timestamp must be >= 0")
        parts += [_lp(tx.source_id.encode()), _U64.pack(tx.timestamp), _lp(bytes(tx.payload))]
    parts.append(bytes(block.hash_prev))
    return b"".join(parts)


def encode_signature(sig: Signature) -> bytes:
    return _lp(_int_bytes(sig.r)) + _lp(_int_bytes(sig.s))


def tag_message(block: Block) -> bytes:
    """Bytes covered by an authenticator's signature: canonical block plus source signature."""
    if block.signature is None:
        raise SerializationError("cannot tag an unsigned block")
    return serialize(block) + encode_signature(block.signature)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0, end: Optional[int] = None):
        self.data = data
        self.pos = pos
        self.end = len(data) if end is None else end

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > self.end:
            raise SerializationError(f"need {n} bytes at offset {self.pos}, have {self.end - self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def lp(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        try:
            return self.lp().decode()
        except UnicodeDecodeError as exc:
            raise SerializationError(f"invalid utf-8 identifier: {exc}") from None

    def signature(self) -> Signature:
        return Signature(int.from_bytes(self.lp(), "big"), int.from_bytes(self.lp(), "big"))


def _read_block(reader: _Reader) -> Block:
    source_id = reader.text()
    mac = reader.take(MAC_LEN)
    count = reader.u32()
    if count == 0:
        raise SerializationError("block has no transactions")
    txs = []
    for _ in range(count):
        tx_source = reader.text()
        ts = reader.u64()
        txs.append(Transaction(tx_source, ts, reader.lp()))
    hash_prev = reader.take(DIGEST_LEN)
    return Block(source_id, mac, tuple(txs), hash_prev)


def deserialize(data: bytes) -> Block:
    reader = _Reader(data)
    block = _read_block(reader)
    if reader.pos != len(data):
        raise SerializationError(f"{len(data) - reader.pos} trailing bytes after block")
    return block


def encode_record(block: Block) -> bytes:
    body = [serialize(block)]
    if block.signature is None:
        body.append(b"\x00")
    else:
        body += [b"\x01", encode_signature(block.signature)]
    if block.poah_tag is None:
        body.append(b"\x00")
    else:
        tag = block.poah_tag
        body += [b"\x01", _lp(tag.authenticator_id.encode()), encode_signature(tag.signature)]
    payload = b"".join(body)
    return _U32.pack(len(payload)) + payload


def _decode_record_body(reader: _Reader) -> Block:
    block = _read_block(reader)
    flag = reader.u8()
    if flag not in (0, 1):
        raise SerializationError(f"bad signature flag {flag}")
    if flag:
        block = block.with_signature(reader.signature())
    flag = reader.u8()
    if flag not in (0, 1):
        raise SerializationError(f"bad tag flag {flag}")
    if flag:
        auth_id = reader.text()
        block = block.with_tag(AuthenticationTag(auth_id, reader.signature()))
    if reader.pos != reader.end:
        raise SerializationError(f"{reader.end - reader.pos} unread bytes in record")
    return block


@dataclass
class ChainState:
    """Append-only, hash-linked sequence of authenticated blocks.

    Single writer; take ``snapshot()`` for a read-only copy.
    """

    blocks: List[Block] = field(default_factory=list)
    head_hash: bytes = GENESIS_HASH
    _index: Dict[bytes, int] = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def with_genesis(cls) -> ChainState:
        return cls().append(genesis_block())

    @classmethod
    def from_blocks(cls, blocks) -> ChainState:
        """Build without link checks (used by load; audit with verify_chain)."""
        chain = cls()
        for block in blocks:
            chain._push(block)
        return chain

    def _push(self, block: Block) -> None:
        self._index.setdefault(block.digest, len(self.blocks))
        self.blocks.append(block)
        self.head_hash = block.digest

    def append(self, block: Block) -> ChainState:
        if not self.blocks and block == genesis_block():
            self._push(block)
            return self
        if block.poah_tag is None:
            raise UnauthenticatedBlockError("block carries no authentication tag")
        if block.hash_prev != self.head_hash:
            raise ForkError(block, self.head_hash)
        self._push(block)
        return self

    def replace_head(self, block: Block) -> None:
        """Swap the head for a competing sibling (fork tie-break)."""
        if len(self.blocks) < 2 or block.hash_prev != self.blocks[-1].hash_prev:
            raise LedgerError("replacement is not a sibling of the head")
        old = self.blocks.pop()
        if self._index.get(old.digest) == len(self.blocks):
            del self._index[old.digest]
        self.head_hash = self.blocks[-1].digest
        self._push(block)

    def contains(self, block_digest: bytes) -> bool:
        return block_digest in self._index

    def snapshot(self) -> ChainState:
        return ChainState.from_blocks(list(self.blocks))

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def __eq__(self, other):
        if not isinstance(other, ChainState):
            return NotImplemented
        return self.blocks == other.blocks and self.head_hash == other.head_hash

    def to_bytes(self) -> bytes:
        return b"".join(encode_record(b) for b in self.blocks)


def append(chain: ChainState, block: Block) -> ChainState:
    return chain.append(block)


def check_source(block: Block, registry: Registry) -> Optional[str]:
    """Source signature and MAC of a block; a reason string on failure, else None."""
    source = registry.get(block.source_id)
    if source is None:
        return "unknown-source"
    if block.mac != source.mac:
        return "bad-mac"
    try:
        body = serialize(block)
    except SerializationError:
        return "malformed"
    if block.signature is None or not verify(body, block.signature, source.public_key, registry.params):
        return "bad-signature"
    return None


def check_block(block: Block, registry: Registry) -> Optional[str]:
    """Full self-consistency of a non-genesis block: source checks plus the tag."""
    reason = check_source(block, registry)
    if reason is not None:
        return reason
    tag = block.poah_tag
    if tag is None:
        return "unauthenticated"
    auth = registry.get(tag.authenticator_id)
    if auth is None or auth.role is not Role.TRUSTED:
        return "untrusted-authenticator"
    if tag.authenticator_id == block.source_id:
        return "self-authenticated"
    if not verify(tag_message(block), tag.signature, auth.public_key, registry.params):
        return "bad-tag"
    return None


def verify_chain(chain: ChainState, registry: Registry, cache: Optional[Dict[Block, Optional[str]]] = None) -> Optional[int]:
    """Return the earliest index failing any check, or None for a valid chain.

    A broken link between blocks i-1 and i is attributed to i-1. ``cache``
    memoizes ``check_block`` results when auditing many chains that share
    blocks under the same registry.
    """
    if cache is None:
        cache = {}
    blocks = chain.blocks
    for i, block in enumerate(blocks):
        if i == 0:
            if block != genesis_block():
                return 0
            continue
        try:
            prev_digest = digest(serialize(blocks[i - 1]))
        except SerializationError:
            return i - 1
        if block.hash_prev != prev_digest:
            return i - 1
        if block not in cache:
            cache[block] = check_block(block, registry)
        if cache[block] is not None:
            return i
    return None


def store(chain: ChainState, path) -> None:
    """Persist ``chain``; an existing file must hold a prefix and is only appended to."""
    path = Path(path)
    records = [encode_record(b) for b in chain.blocks]
    existing = path.read_bytes() if path.exists() else b""
    pos = 0
    kept = 0
    while pos < len(existing) and kept < len(records):
        rec = records[kept]
        if existing[pos:pos + len(rec)] != rec:
            break
        pos += len(rec)
        kept += 1
    if pos != len(existing):
        raise LedgerError(f"{path} is not a prefix of the chain being stored")
    with open(path, "ab") as fh:
        for rec in records[kept:]:
            fh.write(rec)
        fh.flush()
        os.fsync(fh.fileno())


def parse_ledger(data: bytes) -> ChainState:
    blocks = []
    pos = 0
    while pos < len(data):
        start = pos
        try:
            if pos + 4 > len(data):
                raise SerializationError("truncated record length")
            (length,) = _U32.unpack_from(data, pos)
            pos += 4
            if pos + length > len(data):
                raise SerializationError(f"record claims {length} bytes, {len(data) - pos} remain")
            blocks.append(_decode_record_body(_Reader(data, pos, pos + length)))
            pos += length
        except SerializationError as exc:
            raise LedgerLoadError(str(exc), start, len(blocks), ChainState.from_blocks(blocks)) from None
    return ChainState.from_blocks(blocks)


def load(path) -> ChainState:
    return parse_ledger(Path(path).read_bytes())


def record_offsets(data: bytes) -> List[Tuple[int, int]]:
    """(start, end) byte spans of each well-formed record prefix in ``data``."""
    spans = []
    pos = 0
    while pos + 4 <= len(data):
        (length,) = _U32.unpack_from(data, pos)
        end = pos + 4 + length
        if end > len(data):
            break
        spans.append((pos, end))
        pos = end
    return spans
