import random
import struct

import pytest
from hypothesis import given, settings, strategies as st

from poah.consensus import create_block, tag_block
from poah.crypto import Signature, digest, sign
from poah.identity import Role
from poah.ledger import (
    GENESIS_HASH,
    AuthenticationTag,
    Block,
    ChainState,
    ForkError,
    LedgerError,
    LedgerLoadError,
    SerializationError,
    Transaction,
    UnauthenticatedBlockError,
    append,
    check_block,
    deserialize,
    encode_record,
    genesis_block,
    load,
    parse_ledger,
    record_offsets,
    serialize,
    store,
    verify_chain,
)

from _support import build_nodes, grow_chain, txs


@pytest.fixture
def nodes():
    return build_nodes()


@pytest.fixture
def registry(nodes):
    return nodes["n0"].registry


class TestSerialize:
    def test_genesis_golden_bytes(self):
        # lp("genesis") | mac | u32 count | lp("genesis") u64 ts lp("") | hash_prev
        expected = (
            b"\x00\x00\x00\x07genesis"
            + b"\x00" * 6
            + b"\x00\x00\x00\x01"
            + b"\x00\x00\x00\x07genesis"
            + b"\x00" * 8
            + b"\x00\x00\x00\x00"
            + b"\x00" * 32
        )
        assert len(expected) == 11 + 6 + 4 + 11 + 8 + 4 + 32 == 76
        assert serialize(genesis_block()) == expected

    def test_fields_big_endian(self):
        block = Block("ab", b"\x02\x01\x02\x03\x04\x05", (Transaction("ab", 258, b"xy"),), bytes(range(32)))
        data = serialize(block)
        assert data[:6] == b"\x00\x00\x00\x02ab"
        assert data[6:12] == b"\x02\x01\x02\x03\x04\x05"
        assert struct.unpack(">I", data[12:16]) == (1,)
        assert struct.unpack(">Q", data[22:30]) == (258,)
        assert data[-32:] == bytes(range(32))

    def test_deterministic_and_excludes_signatures(self, nodes):
        node = nodes["n2"]
        b = Block("n2", node.identity.mac, tuple(txs("n2")), GENESIS_HASH)
        signed = b.with_signature(sign(serialize(b), node.keypair, node.registry.params, random.Random(1)))
        assert serialize(b) == serialize(b)
        assert serialize(signed) == serialize(b)

    def test_one_payload_byte_changes_bytes(self):
        a = Block("n1", bytes(6), (Transaction("n1", 0, b"aaaa"),), GENESIS_HASH)
        b = Block("n1", bytes(6), (Transaction("n1", 0, b"aaab"),), GENESIS_HASH)
        assert serialize(a) != serialize(b)

    def test_oversize_payload(self):
        block = Block("n1", bytes(6), (Transaction("n1", 0, bytes(36)),), GENESIS_HASH)
        with pytest.raises(SerializationError):
            serialize(block)
        assert serialize(block, max_payload=36)

    @pytest.mark.parametrize(
        "block",
        [
            Block("n1", bytes(6), (), GENESIS_HASH),
            Block("n1", bytes(5), (Transaction("n1", 0, b""),), GENESIS_HASH),
            Block("n1", bytes(6), (Transaction("n1", 0, b""),), bytes(31)),
            Block("n1", bytes(6), (Transaction("n1", -1, b""),), GENESIS_HASH),
        ],
    )
    def test_malformed_blocks(self, block):
        with pytest.raises(SerializationError):
            serialize(block)

    def test_deserialize_inverse(self):
        block = Block("n3", b"\x02abcde", (Transaction("n3", 5, b"p"), Transaction("n3", 6, b"")), bytes(range(32)))
        assert deserialize(serialize(block)) == block
        with pytest.raises(SerializationError):
            deserialize(serialize(block) + b"\x00")


block_strategy = st.builds(
    Block,
    source_id=st.text(min_size=1, max_size=8),
    mac=st.binary(min_size=6, max_size=6),
    transactions=st.lists(
        st.builds(
            Transaction,
            source_id=st.text(max_size=8),
            timestamp=st.integers(0, 2**64 - 1),
            payload=st.binary(max_size=35),
        ),
        min_size=1,
        max_size=4,
    ).map(tuple),
    hash_prev=st.binary(min_size=32, max_size=32),
)


@settings(max_examples=300, deadline=None)
@given(block_strategy)
def test_serialize_round_trip_property(block):
    assert deserialize(serialize(block)) == block


def test_serialization_injective_on_random_blocks():
    rng = random.Random(3)
    seen = set()
    blocks = set()
    while len(blocks) < 10_000:
        n = rng.randint(1, 3)
        block = Block(
            f"n{rng.randrange(5)}",
            rng.randbytes(6),
            tuple(Transaction(f"n{rng.randrange(5)}", rng.randrange(1000), rng.randbytes(rng.randrange(36))) for _ in range(n)),
            rng.randbytes(32),
        )
        if block in blocks:
            continue
        blocks.add(block)
        seen.add(serialize(block))
    assert len(seen) == 10_000


class TestAppend:
    def test_genesis_on_empty_chain(self):
        chain = append(ChainState(), genesis_block())
        assert len(chain) == 1
        assert chain.head_hash == digest(serialize(genesis_block()))

    def test_untagged_block_refused(self, nodes):
        chain = ChainState.with_genesis()
        node = nodes["n2"]
        node.chain = chain
        with pytest.raises(UnauthenticatedBlockError):
            chain.append(create_block(node, txs("n2")))

    def test_stale_link_is_fork(self, nodes):
        chain = grow_chain(nodes, 3)
        stale = chain[2]
        with pytest.raises(ForkError) as info:
            chain.snapshot().append(stale)
        assert info.value.head_hash == chain.head_hash

    def test_three_blocks_verify(self, nodes, registry):
        chain = grow_chain(nodes, 3)
        assert len(chain) == 4
        assert verify_chain(chain, registry) is None

    def test_replace_head(self, nodes):
        chain = grow_chain(nodes, 2)
        snapshot = chain.snapshot()
        with pytest.raises(LedgerError):
            snapshot.replace_head(chain[1])
        assert snapshot == chain


class TestVerifyChain:
    def test_untampered_chain(self, nodes, registry):
        assert verify_chain(grow_chain(nodes, 10), registry) is None

    def test_payload_flip_localized_to_block(self, nodes, registry):
        chain = grow_chain(nodes, 10)
        block = chain.blocks[4]
        tx = block.transactions[0]
        flipped = Transaction(tx.source_id, tx.timestamp, bytes([tx.payload[0] ^ 1]) + tx.payload[1:])
        chain.blocks[4] = Block(block.source_id, block.mac, (flipped,) + block.transactions[1:],
                                block.hash_prev, block.signature, block.poah_tag)
        assert verify_chain(chain, registry) == 4

    def test_tag_by_untrusted_node(self, nodes, registry):
        chain = grow_chain(nodes, 10)
        # a normal node re-tags block 7 with its own (valid) signature
        normal = nodes["n3"]
        assert registry.get("n3").role is Role.NORMAL
        block = chain.blocks[7]
        if block.source_id == "n3":
            normal = nodes["n4"]
        chain.blocks[7] = tag_block(normal, block.with_tag(None))
        assert check_block(chain.blocks[7], registry) == "untrusted-authenticator"
        # re-tagging changes no serialized field, so only block 7 fails
        assert verify_chain(chain, registry) == 7

    def test_forged_tag_signature(self, nodes, registry):
        chain = grow_chain(nodes, 5)
        b = chain.blocks[3]
        chain.blocks[3] = b.with_tag(AuthenticationTag("n0", Signature(b.poah_tag.signature.r, 1)))
        assert verify_chain(chain, registry) == 3

    def test_modified_genesis(self, nodes, registry):
        chain = grow_chain(nodes, 2)
        chain.blocks[0] = Block("genesis", bytes(6), (Transaction("genesis", 1, b""),), GENESIS_HASH)
        assert verify_chain(chain, registry) == 0

    def test_genesis_only(self, registry):
        assert verify_chain(ChainState.with_genesis(), registry) is None


class TestStorage:
    def test_round_trip_100_blocks(self, nodes, tmp_path):
        chain = grow_chain(nodes, 100)
        path = tmp_path / "n0.ledger"
        store(chain, path)
        assert load(path) == chain

    def test_append_only(self, nodes, tmp_path):
        chain = grow_chain(nodes, 6)
        path = tmp_path / "a.ledger"
        store(ChainState.from_blocks(chain.blocks[:3]), path)
        first = path.read_bytes()
        store(chain, path)
        assert path.read_bytes().startswith(first)
        assert load(path) == chain
        with pytest.raises(LedgerError):
            store(ChainState.from_blocks(chain.blocks[:2] + chain.blocks[3:4]), path)

    def test_truncated_final_record(self, nodes, tmp_path):
        chain = grow_chain(nodes, 5)
        data = chain.to_bytes()
        path = tmp_path / "t.ledger"
        path.write_bytes(data[:-7])
        with pytest.raises(LedgerLoadError) as info:
            load(path)
        err = info.value
        assert err.record_index == 5
        assert err.offset == record_offsets(data)[5][0]
        assert str(err.offset) in str(err)
        assert err.recovered == ChainState.from_blocks(chain.blocks[:5])

    def test_record_framing(self, nodes):
        chain = grow_chain(nodes, 3)
        data = chain.to_bytes()
        spans = record_offsets(data)
        assert len(spans) == 4
        assert spans[-1][1] == len(data)
        for (start, end), block in zip(spans, chain.blocks):
            assert data[start:end] == encode_record(block)

    def test_trailing_garbage(self, nodes):
        data = grow_chain(nodes, 2).to_bytes() + b"\x00\x00"
        with pytest.raises(LedgerLoadError):
            parse_ledger(data)
