"""Scenario configuration: a flat TOML key/value file.

Recognised keys (defaults in brackets)::

    seed [0]                      node_count [5]          trusted_count [2]
    node_names [n0..n{N-1}]       block_target [500]      block_interval_ms [10000]
    txs_per_block [2]             block_payload_bytes [35]
    proposers ["all" | "normal"]
    latency ["uniform:100:200"]   loss_rate [0.0]
    processing_delay ["constant:0"]
    node_processing_delay.<node> = "<latency spec>"
    link_latency."<src>-><dst>" = "<latency spec>"
    crypto_profile ["bench512" | "test"]   crypto_p, crypto_g (decimal or 0x-hex)
    crypto_model ["fixed" | "measured"]    crypto_cost_ms [0]
    forge_rate, spoof_mac_rate, fake_authentication_rate, tamper_history_rate [0.0]
    compromised [first trusted node]
    trust_initial [10]  trust_initial_normal [0]  trust_threshold [5]
    trust_delta_valid [1]  trust_delta_fake [-1]  trust_delta_confirm [0.5]  trust_delta_flag [1]
    histogram_bin_ms [10]         out_dir ["out"]

The first ``trusted_count`` names are the initially trusted nodes. Under the
``fixed`` crypto model the authenticator is charged ``crypto_cost_ms`` per
authentication and nothing else; under ``measured`` the wall-clock time of every
sign/verify step is folded into simulated time (such runs are not reproducible
bit-for-bit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Tuple

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .consensus import TrustParams
from .crypto import PROFILES, GroupParams, ParameterError
from .ledger import MAX_PAYLOAD
from .simnet.events import AdversaryConfig, LatencyModel


class ScenarioError(ValueError):
    """Invalid scenario; ``errors`` lists (field, message) pairs."""

    def __init__(self, errors: List[Tuple[str, str]]):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.errors))


@dataclass
class Scenario:
    seed: int = 0
    node_count: int = 5
    trusted_count: int = 2
    node_names: Optional[List[str]] = None
    block_target: int = 500
    block_interval_ms: int = 10_000
    txs_per_block: int = 2
    block_payload_bytes: int = 35
    proposers: str = "all"
    latency: str = "uniform:100:200"
    loss_rate: float = 0.0
    processing_delay: str = "constant:0"
    node_processing_delay: Dict[str, str] = field(default_factory=dict)
    link_latency: Dict[str, str] = field(default_factory=dict)
    crypto_profile: str = "bench512"
    crypto_p: Optional[str] = None
    crypto_g: Optional[str] = None
    crypto_model: str = "fixed"
    crypto_cost_ms: int = 0
    forge_rate: float = 0.0
    spoof_mac_rate: float = 0.0
    fake_authentication_rate: float = 0.0
    tamper_history_rate: float = 0.0
    compromised: Optional[List[str]] = None
    trust_initial: float = 10
    trust_initial_normal: float = 0
    trust_threshold: float = 5
    trust_delta_valid: float = 1
    trust_delta_fake: float = -1
    trust_delta_confirm: float = 0.5
    trust_delta_flag: float = 1
    histogram_bin_ms: int = 10
    out_dir: str = "out"

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_mapping(cls, data: dict) -> Scenario:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ScenarioError([(k, "unknown key") for k in unknown])
        scenario = cls(**data)
        scenario.validate()
        return scenario

    @classmethod
    def load(cls, path) -> Scenario:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ScenarioError([("file", f"cannot read {path}: {exc.strerror}")]) from None
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError([("file", f"parse error: {exc}")]) from None
        return cls.from_mapping(data)

    def with_overrides(self, **changes) -> Scenario:
        out = replace(self, **{k: v for k, v in changes.items() if v is not None})
        out.validate()
        return out

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None and f.name != "out_dir":
                out[f.name] = value
        return out

    # -- derived views --------------------------------------------------------

    @property
    def names(self) -> List[str]:
        return list(self.node_names) if self.node_names else [f"n{i}" for i in range(self.node_count)]

    @property
    def trusted(self) -> List[str]:
        return self.names[: self.trusted_count]

    @property
    def proposer_ids(self) -> List[str]:
        if self.proposers == "normal":
            return self.names[self.trusted_count:]
        return self.names

    def group_params(self) -> GroupParams:
        if self.crypto_p is not None or self.crypto_g is not None:
            return GroupParams.from_strings(str(self.crypto_p), str(self.crypto_g))
        return PROFILES[self.crypto_profile]

    def latency_model(self) -> LatencyModel:
        return LatencyModel.parse(self.latency)

    def link_models(self) -> Dict[Tuple[str, str], LatencyModel]:
        out = {}
        for key, spec in self.link_latency.items():
            src, dst = key.split("->")
            out[(src.strip(), dst.strip())] = LatencyModel.parse(spec)
        return out

    def delay_model(self, node_id: str) -> LatencyModel:
        return LatencyModel.parse(self.node_processing_delay.get(node_id, self.processing_delay))

    def adversary(self) -> AdversaryConfig:
        compromised = tuple(self.compromised) if self.compromised is not None else None
        if compromised is None and self.fake_authentication_rate > 0:
            compromised = (self.trusted[0],)
        return AdversaryConfig(
            self.forge_rate,
            self.spoof_mac_rate,
            self.fake_authentication_rate,
            self.tamper_history_rate,
            compromised or (),
        )

    def trust_params(self) -> TrustParams:
        return TrustParams(
            initial_trusted=Fraction(str(self.trust_initial)),
            initial_normal=Fraction(str(self.trust_initial_normal)),
            threshold=Fraction(str(self.trust_threshold)),
            delta_valid=Fraction(str(self.trust_delta_valid)),
            delta_fake=Fraction(str(self.trust_delta_fake)),
            delta_confirm=Fraction(str(self.trust_delta_confirm)),
            delta_flag=Fraction(str(self.trust_delta_flag)),
        )

    def payload_sizes(self) -> List[int]:
        n, total = self.txs_per_block, self.block_payload_bytes
        return [total // n + (1 if i < total % n else 0) for i in range(n)]

    # -- validation -----------------------------------------------------------

    def errors(self) -> List[Tuple[str, str]]:
        errs: List[Tuple[str, str]] = []

        def need_int(name, lo=None):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                errs.append((name, f"must be an integer, got {value!r}"))
                return False
            if lo is not None and value < lo:
                errs.append((name, f"must be >= {lo}, got {value}"))
                return False
            return True

        need_int("seed")
        count_ok = need_int("node_count", 2)
        if need_int("trusted_count") and count_ok and not 1 <= self.trusted_count < self.node_count:
            errs.append(("trusted_count", f"must satisfy 1 <= trusted_count < node_count ({self.node_count})"))
        need_int("block_target", 1)
        need_int("block_interval_ms", 1)
        need_int("histogram_bin_ms", 1)
        need_int("crypto_cost_ms", 0)
        if need_int("txs_per_block", 1) and need_int("block_payload_bytes", 0):
            if math.ceil(self.block_payload_bytes / self.txs_per_block) > MAX_PAYLOAD:
                errs.append(("block_payload_bytes", f"per-transaction payload exceeds {MAX_PAYLOAD} bytes"))

        if self.node_names is not None:
            if not isinstance(self.node_names, list) or not all(isinstance(n, str) and n for n in self.node_names):
                errs.append(("node_names", "must be a list of non-empty strings"))
            elif len(set(self.node_names)) != len(self.node_names):
                errs.append(("node_names", "names must be unique"))
            elif isinstance(self.node_count, int) and len(self.node_names) != self.node_count:
                errs.append(("node_names", f"expected {self.node_count} names, got {len(self.node_names)}"))
            elif "genesis" in self.node_names:
                errs.append(("node_names", "'genesis' is reserved"))

        if self.proposers not in ("all", "normal"):
            errs.append(("proposers", "must be 'all' or 'normal'"))
        if self.crypto_model not in ("fixed", "measured"):
            errs.append(("crypto_model", "must be 'fixed' or 'measured'"))
        if self.crypto_profile not in PROFILES:
            errs.append(("crypto_profile", f"must be one of {sorted(PROFILES)}"))
        if (self.crypto_p is None) != (self.crypto_g is None):
            errs.append(("crypto_p", "crypto_p and crypto_g must be given together"))
        elif self.crypto_p is not None:
            try:
                GroupParams.from_strings(str(self.crypto_p), str(self.crypto_g))
            except ParameterError as exc:
                errs.append(("crypto_p", str(exc)))

        for name in ("latency", "processing_delay"):
            try:
                LatencyModel.parse(getattr(self, name))
            except ValueError as exc:
                errs.append((name, str(exc)))
        if not isinstance(self.loss_rate, (int, float)) or not 0.0 <= self.loss_rate <= 1.0:
            errs.append(("loss_rate", f"must be in [0, 1], got {self.loss_rate!r}"))

        names = set(self.names) if not any(k == "node_names" for k, _ in errs) else set()
        for node, spec in dict(self.node_processing_delay).items():
            if names and node not in names:
                errs.append((f"node_processing_delay.{node}", "unknown node"))
            try:
                LatencyModel.parse(spec)
            except ValueError as exc:
                errs.append((f"node_processing_delay.{node}", str(exc)))
        for key, spec in dict(self.link_latency).items():
            parts = key.split("->")
            if len(parts) != 2 or (names and not {p.strip() for p in parts} <= names):
                errs.append((f"link_latency.{key}", "key must be '<src>-><dst>' naming known nodes"))
            try:
                LatencyModel.parse(spec)
            except ValueError as exc:
                errs.append((f"link_latency.{key}", str(exc)))

        adv = AdversaryConfig(self.forge_rate, self.spoof_mac_rate,
                              self.fake_authentication_rate, self.tamper_history_rate)
        errs.extend(adv.errors())
        if self.compromised is not None and names:
            trusted = set(self.trusted) if isinstance(self.trusted_count, int) else set()
            for node in self.compromised:
                if node not in trusted:
                    errs.append(("compromised", f"{node!r} is not an initially trusted node"))

        try:
            self.trust_params()
        except (ValueError, TypeError, ZeroDivisionError) as exc:
            errs.append(("trust", str(exc)))
        return errs

    def validate(self) -> None:
        errs = self.errors()
        if errs:
            raise ScenarioError(errs)


def default_scenario(**overrides) -> Scenario:
    """Five nodes, two trusted, 500 blocks of 35 bytes."""
    scenario = Scenario(**overrides)
    scenario.validate()
    return scenario
