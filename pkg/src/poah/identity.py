"""Node identities and the deployment-time registry binding ids, MACs and keys."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Optional

from .crypto import GroupParams

MAC_LEN = 6


class Role(str, Enum):
    TRUSTED = "trusted"
    NORMAL = "normal"


def format_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def parse_mac(text: str) -> bytes:
    parts = text.split(":")
    if len(parts) != MAC_LEN:
        raise ValueError(f"MAC must have {MAC_LEN} octets: {text!r}")
    return bytes(int(part, 16) for part in parts)


@dataclass(frozen=True)
class NodeIdentity:
    node_id: str
    mac: bytes
    public_key: int
    role: Role = Role.NORMAL

    def __post_init__(self):
        if not self.node_id:
            raise ValueError("node_id must be non-empty")
        if len(self.mac) != MAC_LEN:
            raise ValueError(f"mac must be {MAC_LEN} bytes")

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "mac": format_mac(self.mac),
            "public_key": hex(self.public_key),
            "role": self.role.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> NodeIdentity:
        return cls(
            node_id=data["node_id"],
            mac=parse_mac(data["mac"]),
            public_key=int(data["public_key"], 0),
            role=Role(data["role"]),
        )


@dataclass
class Registry:
    """Public keys and MACs registered before any block is authenticated.

    ``role`` here is the role a node is authorized to hold as an authenticator
    for ledger auditing; live eligibility is governed by each node's trust table.
    """

    params: GroupParams
    identities: Dict[str, NodeIdentity] = field(default_factory=dict)

    def register(self, identity: NodeIdentity) -> None:
        if identity.node_id in self.identities:
            raise ValueError(f"duplicate node_id {identity.node_id!r}")
        self.identities[identity.node_id] = identity

    def get(self, node_id: str) -> Optional[NodeIdentity]:
        return self.identities.get(node_id)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.identities

    def __iter__(self) -> Iterable[str]:
        return iter(self.identities)

    def authorized(self, node_id: str) -> bool:
        ident = self.identities.get(node_id)
        return ident is not None and ident.role is Role.TRUSTED

    def with_roles(self, trusted: Iterable[str]) -> Registry:
        trusted = set(trusted)
        out = Registry(self.params)
        for node_id, ident in self.identities.items():
            role = Role.TRUSTED if node_id in trusted else ident.role
            out.register(NodeIdentity(ident.node_id, ident.mac, ident.public_key, role))
        return out

    def to_dict(self) -> dict:
        return {
            "params": {"p": hex(self.params.p), "g": hex(self.params.g)},
            "nodes": [self.identities[k].to_dict() for k in sorted(self.identities)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> Registry:
        params = GroupParams.from_strings(data["params"]["p"], data["params"]["g"])
        reg = cls(params)
        for item in data["nodes"]:
            reg.register(NodeIdentity.from_dict(item))
        return reg
