"""Per-node PoAh protocol: block creation, trusted-node authentication,
follower acceptance and trust bookkeeping.

Everything here is a pure function of (node state, message, clock); nodes only
talk to each other through the messages returned by :func:`step`.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Set, Union

from .crypto import KeyPair, sign, verify
from .identity import NodeIdentity, Registry, Role
from .ledger import (
    AuthenticationTag,
    Block,
    ChainState,
    Transaction,
    check_source,
    serialize,
    tag_message,
)

log = logging.getLogger(__name__)


class NotAuthorizedError(Exception):
    """authenticate_block was called on a node that may not authenticate."""


class UnknownNodeError(KeyError):
    pass


class TrustEventKind(str, Enum):
    AUTHENTICATED_VALID = "authenticated-valid-block"
    AUTHENTICATED_FAKE = "authenticated-fake-block"
    CONFIRMED_VALID = "confirmed-valid-authentication"
    FLAGGED_FALSE = "flagged-false-authentication"


@dataclass(frozen=True)
class TrustEvent:
    kind: TrustEventKind
    node_id: str


@dataclass(frozen=True)
class TrustParams:
    initial_trusted: Fraction = Fraction(10)
    initial_normal: Fraction = Fraction(0)
    threshold: Fraction = Fraction(5)
    delta_valid: Fraction = Fraction(1)
    delta_fake: Fraction = Fraction(-1)
    delta_confirm: Fraction = Fraction(1, 2)
    delta_flag: Fraction = Fraction(1)

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            value = Fraction(getattr(self, name))
            if (value * 2).denominator != 1:
                raise ValueError(f"{name} must be a multiple of 0.5, got {value}")
            object.__setattr__(self, name, value)

    def delta(self, kind: TrustEventKind) -> Fraction:
        return {
            TrustEventKind.AUTHENTICATED_VALID: self.delta_valid,
            TrustEventKind.AUTHENTICATED_FAKE: self.delta_fake,
            TrustEventKind.CONFIRMED_VALID: self.delta_confirm,
            TrustEventKind.FLAGGED_FALSE: self.delta_flag,
        }[kind]

    @cached_property
    def half_deltas(self) -> Dict[TrustEventKind, int]:
        return {kind: _half(self.delta(kind)) for kind in TrustEventKind}


def _half(value: Fraction) -> int:
    return int(value * 2)


@dataclass
class TrustRecord:
    node_id: str
    half_points: int
    role: Role

    @property
    def trust(self) -> Fraction:
        return Fraction(self.half_points, 2)


class TrustTable:
    """One node's view of everybody's trust score and role."""

    def __init__(self, params: TrustParams = TrustParams()):
        self.params = params
        self.records: Dict[str, TrustRecord] = {}
        self._half_threshold = _half(params.threshold)

    @classmethod
    def for_registry(cls, registry: Registry, params: TrustParams = TrustParams()) -> TrustTable:
        table = cls(params)
        for node_id in sorted(registry.identities):
            table.add(node_id, registry.identities[node_id].role)
        return table

    def add(self, node_id: str, role: Role) -> None:
        start = self.params.initial_trusted if role is Role.TRUSTED else self.params.initial_normal
        self.records[node_id] = TrustRecord(node_id, _half(start), role)

    def __getitem__(self, node_id: str) -> TrustRecord:
        try:
            return self.records[node_id]
        except KeyError:
            raise UnknownNodeError(node_id) from None

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.records

    def trust(self, node_id: str) -> Fraction:
        return self[node_id].trust

    def eligible(self, node_id: str) -> bool:
        rec = self.records.get(node_id)
        return (
            rec is not None
            and rec.role is Role.TRUSTED
            and rec.half_points >= self._half_threshold
        )

    def apply(self, event: TrustEvent) -> Optional[Role]:
        """Apply one event; return the new role if it changed."""
        rec = self[event.node_id]
        rec.half_points += self.params.half_deltas[event.kind]
        th = self._half_threshold
        if rec.role is Role.TRUSTED and rec.half_points < th:
            rec.role = Role.NORMAL
            return Role.NORMAL
        if rec.role is Role.NORMAL and rec.half_points >= th:
            rec.role = Role.TRUSTED
            return Role.TRUSTED
        return None

    def snapshot(self) -> Dict[str, tuple]:
        return {k: (r.trust, r.role) for k, r in sorted(self.records.items())}


def apply_trust_event(table: TrustTable, event: TrustEvent) -> TrustTable:
    table.apply(event)
    return table


@dataclass
class NodeState:
    identity: NodeIdentity
    keypair: KeyPair
    registry: Registry
    trust_table: TrustTable
    rng: random.Random
    chain: ChainState = field(default_factory=ChainState.with_genesis)
    pending: Set[bytes] = field(default_factory=set)
    # clock time at which the current head was appended (fork tie-break)
    head_time: int = -1

    @property
    def node_id(self) -> str:
        return self.identity.node_id

    def eligible(self) -> bool:
        return self.trust_table.eligible(self.node_id)


# -- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class NewBlock:
    block: Block


@dataclass(frozen=True)
class ValidatedBlock:
    block: Block
    # measurement stamps carried for the metrics log
    t_i: int = 0
    t_sr: int = 0
    t_sh: int = 0


Message = Union[NewBlock, ValidatedBlock, TrustEvent]


# -- outcomes ---------------------------------------------------------------

@dataclass(frozen=True)
class Authenticated:
    block: Block


@dataclass(frozen=True)
class Dropped:
    reason: str
    block: Optional[Block] = None


@dataclass(frozen=True)
class Accepted:
    block: Block


@dataclass(frozen=True)
class Rejected:
    reason: str
    block: Optional[Block] = None


Outcome = Union[Authenticated, Dropped, Accepted, Rejected]


@dataclass
class StepResult:
    outgoing: List[Message] = field(default_factory=list)
    outcome: Optional[Outcome] = None
    role_changes: List[tuple] = field(default_factory=list)


# -- operations ---------------------------------------------------------------

def create_block(node: NodeState, txs: Sequence[Transaction], rng: Optional[random.Random] = None) -> Block:
    if not txs:
        raise ValueError("a block needs at least one transaction")
    block = Block(
        source_id=node.node_id,
        mac=node.identity.mac,
        transactions=tuple(txs),
        hash_prev=node.chain.head_hash,
    )
    sig = sign(serialize(block), node.keypair, node.registry.params, rng or node.rng)
    return block.with_signature(sig)


def authenticate_block(authenticator: NodeState, block: Block, registry: Registry) -> Union[Authenticated, Dropped]:
    """Signature check, then MAC check, then link check; tag the block if all pass."""
    if not authenticator.eligible():
        raise NotAuthorizedError(f"{authenticator.node_id} is not authentication-eligible")
    source = registry.get(block.source_id)
    if source is None:
        return Dropped("unknown-source", block)
    try:
        body = serialize(block)
    except Exception:
        return Dropped("malformed", block)
    if block.signature is None or not verify(body, block.signature, source.public_key, registry.params):
        return Dropped("bad-signature", block)
    if block.mac != source.mac:
        return Dropped("bad-mac", block)
    if block.hash_prev != authenticator.chain.head_hash:
        return Dropped("stale-link", block)
    return Authenticated(tag_block(authenticator, block))


def tag_block(authenticator: NodeState, block: Block) -> Block:
    """Attach the authenticator's tag unconditionally (no checks)."""
    sig = sign(tag_message(block), authenticator.keypair, authenticator.registry.params, authenticator.rng)
    return block.with_tag(AuthenticationTag(authenticator.node_id, sig))


def on_validated_receive(node: NodeState, tagged: Block, registry: Registry, now: int = 0) -> Union[Accepted, Rejected]:
    tag = tagged.poah_tag
    if tag is None:
        return Rejected("unauthenticated", tagged)
    d = tagged.digest
    if node.chain.contains(d):
        return Rejected("duplicate", tagged)
    auth = registry.get(tag.authenticator_id)
    if auth is None or not node.trust_table.eligible(tag.authenticator_id):
        return Rejected("untrusted-authenticator", tagged)
    if tag.authenticator_id == tagged.source_id:
        return Rejected("self-authenticated", tagged)
    try:
        msg = tag_message(tagged)
    except Exception:
        return Rejected("malformed", tagged)
    if not verify(msg, tag.signature, auth.public_key, registry.params):
        return Rejected("bad-tag", tagged)
    # Followers re-check the source's own signature and MAC; a valid tag over a
    # bad block is a false authentication.
    if check_source(tagged, registry) is not None:
        return Rejected("false-authentication", tagged)
    chain = node.chain
    if tagged.hash_prev != chain.head_hash:
        if len(chain) >= 2 and tagged.hash_prev == chain.blocks[-1].hash_prev:
            # first-authenticated-wins; same-tick arrivals resolved by lower digest
            if now == node.head_time and d < chain.blocks[-1].digest:
                node.pending.discard(d)
                chain.replace_head(tagged)
                return Accepted(tagged)
            return Rejected("fork", tagged)
        return Rejected("stale-link", tagged)
    chain.append(tagged)
    node.pending.discard(d)
    node.head_time = now
    return Accepted(tagged)


def step(node: NodeState, message, now: int = 0) -> StepResult:
    """Advance one node by one incoming message."""
    result = StepResult()
    if isinstance(message, NewBlock):
        block = message.block
        if not isinstance(block, Block) or not node.eligible():
            return result
        if block.source_id == node.node_id:
            return result
        d = block.digest
        if d in node.pending or node.chain.contains(d):
            return result
        node.pending.add(d)
        outcome = authenticate_block(node, block, node.registry)
        result.outcome = outcome
        if isinstance(outcome, Authenticated):
            node.chain.append(outcome.block)
            node.pending.discard(d)
            node.head_time = now
            result.outgoing.append(ValidatedBlock(outcome.block, t_sr=now))
        return result

    if isinstance(message, ValidatedBlock):
        if not isinstance(message.block, Block):
            log.warning("%s: ignoring malformed ValidatedBlock", node.node_id)
            return result
        outcome = on_validated_receive(node, message.block, node.registry, now)
        result.outcome = outcome
        own = node.trust_table[node.node_id]
        if own.role is Role.NORMAL:
            if isinstance(outcome, Accepted):
                ev = TrustEvent(TrustEventKind.CONFIRMED_VALID, node.node_id)
            elif isinstance(outcome, Rejected) and outcome.reason == "false-authentication":
                ev = TrustEvent(TrustEventKind.FLAGGED_FALSE, node.node_id)
            else:
                ev = None
            if ev is not None and node.trust_table.params.delta(ev.kind) != 0:
                change = node.trust_table.apply(ev)
                if change is not None:
                    result.role_changes.append((node.node_id, change))
                result.outgoing.append(ev)
        return result

    if isinstance(message, TrustEvent):
        if message.node_id not in node.trust_table:
            log.warning("%s: trust event for unknown node %r", node.node_id, message.node_id)
            return result
        change = node.trust_table.apply(message)
        if change is not None:
            result.role_changes.append((message.node_id, change))
        return result

    log.warning("%s: ignoring unrecognised message %r", node.node_id, type(message).__name__)
    return result
