"""Proof-of-Authentication blockchain consensus with a deterministic network simulator."""

from .consensus import (
    NodeState,
    TrustEvent,
    TrustEventKind,
    TrustParams,
    TrustTable,
    apply_trust_event,
    authenticate_block,
    create_block,
    on_validated_receive,
    step,
)
from .crypto import BENCH_PARAMS, TEST_PARAMS, GroupParams, KeyPair, Signature, digest, keygen, sign, verify
from .identity import NodeIdentity, Registry, Role
from .ledger import Block, ChainState, Transaction, load, serialize, store, verify_chain
from .scenario import Scenario, ScenarioError

__version__ = "0.1.0"
