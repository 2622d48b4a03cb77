"""Scenario execution: nodes, workload, adversary and the resulting report."""

from __future__ import annotations

import csv
import json
import logging
import random
import time
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Set, Tuple

from ..consensus import (
    Accepted,
    Authenticated,
    Dropped,
    NewBlock,
    NodeState,
    Rejected,
    TrustEvent,
    TrustEventKind,
    TrustTable,
    ValidatedBlock,
    create_block,
    step,
    tag_block,
)
from ..crypto import keygen, sign, verify
from ..identity import NodeIdentity, Registry, Role
from ..ledger import (
    Block,
    ChainState,
    LedgerError,
    LedgerLoadError,
    Transaction,
    parse_ledger,
    record_offsets,
    serialize,
    store,
    verify_chain,
)
from ..metrics import BlockTimeline, MetricsLog, TimelineError, dt_tx, write_csvs
from .events import Network, SimEvent

if TYPE_CHECKING:
    from ..scenario import Scenario

log = logging.getLogger(__name__)

FORGED = "forged"
SPOOFED = "spoofed-mac"


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class _Propose:
    round: int


@dataclass
class SimulationReport:
    scenario: Scenario
    registry: Registry
    chains: Dict[str, ChainState]
    metrics: MetricsLog
    injected: Dict[str, str] = field(default_factory=dict)
    fake_authentications: List[Tuple[int, str, str]] = field(default_factory=list)
    authentications: List[Tuple[int, str, str]] = field(default_factory=list)
    drops: List[Tuple[int, str, str, str]] = field(default_factory=list)
    rejections: List[Tuple[int, str, str, str]] = field(default_factory=list)
    proposed: List[Tuple[int, str, str]] = field(default_factory=list)
    fake_deltas: Dict[str, Counter] = field(default_factory=dict)
    trust: Dict[str, TrustTable] = field(default_factory=dict)
    tamper_probes: List[Tuple[str, int, Optional[int]]] = field(default_factory=list)
    counters: Dict[str, int] = field(default_factory=dict)

    # -- derived ----------------------------------------------------------------

    def dropped_digests(self) -> Set[str]:
        return {d for _, _, d, _ in self.drops}

    def accepted_counts(self) -> Dict[str, int]:
        return {node: len(chain) - 1 for node, chain in self.chains.items()}

    def invariant_violations(self, checked: Optional[Dict[Block, Optional[str]]] = None) -> List[str]:
        """Every breached simulator invariant, as readable messages.

        ``checked`` is an optional verify_chain cache shared with the caller.
        """
        problems = []
        injected = set(self.injected)
        checked = {} if checked is None else checked
        for node, chain in sorted(self.chains.items()):
            bad = verify_chain(chain, self.registry, checked)
            if bad is not None:
                problems.append(f"{node}: chain fails verification at index {bad}")
            present = {b.digest.hex() for b in chain.blocks} & injected
            if present:
                problems.append(f"{node}: {len(present)} adversarial block(s) in chain")
        for tl in self.metrics.rows:
            try:
                tl.check()
            except TimelineError as exc:
                problems.append(str(exc))
        c = self.counters
        if c.get("sent", 0) != c.get("delivered", 0) + c.get("lost", 0):
            problems.append(f"message accounting: sent {c.get('sent')} != delivered + lost")
        if c.get("lost", 0) == 0:
            expected = Counter(auth for _, auth, _ in self.fake_authentications)
            for node, seen in sorted(self.fake_deltas.items()):
                if +seen != +expected:
                    problems.append(f"{node}: fake-authentication deltas {dict(seen)} != ground truth {dict(expected)}")
        for node, mutated, detected in self.tamper_probes:
            if detected is None or detected > mutated:
                problems.append(f"{node}: tampering at {mutated} localised at {detected}")
        return problems

    def summary(self) -> dict:
        accepted = self.accepted_counts()
        injected_dropped = len(set(self.injected) & self.dropped_digests())
        forged_accepted = sum(
            1 for chain in self.chains.values() for b in chain.blocks if b.digest.hex() in self.injected
        )
        rows = self.metrics.rows
        mean_tx = sum(dt_tx(r) for r in rows) / len(rows) if rows else None
        return {
            "proposed": len(self.proposed),
            "accepted_min": min(accepted.values()),
            "accepted_max": max(accepted.values()),
            "injected": len(self.injected),
            "injected_dropped": injected_dropped,
            "forged_accepted": forged_accepted,
            "fake_authentications": len(self.fake_authentications),
            "rejections": dict(sorted(Counter(r for *_, r in self.rejections).items())),
            "mean_dt_tx_ms": None if mean_tx is None else round(mean_tx, 3),
            "messages": dict(sorted(self.counters.items())),
        }

    # -- output -----------------------------------------------------------------

    def metadata(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "registry": self.registry.to_dict(),
        }

    def write(self, out_dir) -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = write_csvs(self.metrics, out, self.scenario.histogram_bin_ms)

        ledger_dir = out / "ledgers"
        ledger_dir.mkdir(exist_ok=True)
        for node, chain in sorted(self.chains.items()):
            path = ledger_dir / f"{node}.ledger"
            try:
                store(chain, path)
            except LedgerError:
                log.warning("%s holds a different chain; replacing it", path)
                path.unlink()
                store(chain, path)
            paths.append(path)

        path = out / "metadata.json"
        path.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n")
        paths.append(path)

        tables = {
            "drops.csv": (["time_ms", "node", "block", "reason"], self.drops),
            "rejections.csv": (["time_ms", "node", "block", "reason"], self.rejections),
            "ground_truth.csv": (["block", "kind"], sorted(self.injected.items())),
            "fake_authentications.csv": (["time_ms", "authenticator", "block"], self.fake_authentications),
            "trust.csv": (
                ["viewer", "node", "trust", "role"],
                [
                    (viewer, node, f"{float(rec.trust):g}", rec.role.value)
                    for viewer, table in sorted(self.trust.items())
                    for node, rec in sorted(table.records.items())
                ],
            ),
        }
        for name, (header, rows) in tables.items():
            path = out / name
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
            paths.append(path)

        path = out / "summary.json"
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        paths.append(path)
        return paths


class Simulation:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        seed = scenario.seed
        self.params = scenario.group_params()
        self.measured = scenario.crypto_model == "measured"
        self.adversary = scenario.adversary()

        key_rng = random.Random(f"{seed}/keys")
        self.registry = Registry(self.params)
        keys = {}
        trusted = set(scenario.trusted)
        for name in scenario.names:
            keys[name] = keygen(self.params, key_rng)
            mac = bytes([0x02]) + key_rng.randbytes(5)
            role = Role.TRUSTED if name in trusted else Role.NORMAL
            self.registry.register(NodeIdentity(name, mac, keys[name].public_key, role))
        # the attacker's key must differ from every registered key, or a
        # "forged" signature would verify (possible in the tiny test group)
        registered = {ident.public_key for ident in self.registry.identities.values()}
        self.attacker_key = keygen(self.params, key_rng)
        while self.attacker_key.public_key in registered:
            self.attacker_key = keygen(self.params, key_rng)

        tp = scenario.trust_params()
        self.nodes: Dict[str, NodeState] = {
            name: NodeState(
                identity=self.registry.get(name),
                keypair=keys[name],
                registry=self.registry,
                trust_table=TrustTable.for_registry(self.registry, tp),
                rng=random.Random(f"{seed}/node/{name}"),
            )
            for name in scenario.names
        }
        self.net = Network(
            scenario.names,
            scenario.latency_model(),
            random.Random(f"{seed}/net"),
            scenario.loss_rate,
            scenario.link_models(),
        )
        self.delays = {name: scenario.delay_model(name) for name in scenario.names}
        self.delay_rng = random.Random(f"{seed}/processing")
        self.work_rng = random.Random(f"{seed}/workload")
        self.adv_rng = random.Random(f"{seed}/adversary")

        self.report = SimulationReport(
            scenario=scenario,
            registry=self.registry,
            chains={},
            metrics=MetricsLog(metadata={"seed": seed}),
            fake_deltas={name: Counter() for name in scenario.names},
        )
        self.ever_trusted: Set[str] = set(trusted)

    # -- timing -----------------------------------------------------------------

    def _timed_step(self, node: NodeState, message, now: int):
        if not self.measured:
            return step(node, message, now), 0
        t0 = time.perf_counter_ns()
        result = step(node, message, now)
        return result, round((time.perf_counter_ns() - t0) / 1e6)

    def _processing(self, node_id: str) -> int:
        return self.delays[node_id].sample(self.delay_rng)

    # -- event handlers -----------------------------------------------------------

    def _propose(self, now: int, node: NodeState, round_no: int) -> None:
        """Broadcast the honest block for this round, plus an adversarial one
        when the adversary draw fires. Injections are extra traffic, so the
        honest chain still reaches ``block_target`` blocks."""
        t0 = time.perf_counter_ns()
        block = create_block(node, self._workload(node, now))
        cost = round((time.perf_counter_ns() - t0) / 1e6) if self.measured else 0
        self.report.proposed.append((round_no, node.node_id, block.digest.hex()))
        self.net.broadcast(node.node_id, NewBlock(block), now + cost)

        adv = self.adversary
        if not (adv.forge_rate or adv.spoof_mac_rate):
            return
        u = self.adv_rng.random()
        if u < adv.forge_rate:
            kind, bad = FORGED, self._forge(node, self._workload(node, now))
        elif u < adv.forge_rate + adv.spoof_mac_rate:
            kind, bad = SPOOFED, self._spoof(node, self._workload(node, now))
        else:
            return
        self.report.injected[bad.digest.hex()] = kind
        self.net.broadcast(node.node_id, NewBlock(bad), now + cost)

    def _workload(self, node: NodeState, now: int) -> tuple:
        return tuple(
            Transaction(node.node_id, now, self.work_rng.randbytes(size))
            for size in self.scenario.payload_sizes()
        )

    def _spoof(self, node: NodeState, txs) -> Block:
        """Correctly signed block whose MAC differs from the registered one."""
        mac = node.identity.mac
        while mac == node.identity.mac:
            mac = bytes([0x02]) + self.adv_rng.randbytes(5)
        unsigned = Block(node.node_id, mac, txs, node.chain.head_hash)
        return unsigned.with_signature(sign(serialize(unsigned), node.keypair, self.params, self.adv_rng))

    def _forge(self, node: NodeState, txs) -> Block:
        """Block claiming ``node`` as source but signed with the attacker's key."""
        unsigned = Block(node.node_id, node.identity.mac, txs, node.chain.head_hash)
        body = serialize(unsigned)
        for _ in range(64):
            sig = sign(body, self.attacker_key, self.params, self.adv_rng)
            if not verify(body, sig, node.identity.public_key, self.params):
                return unsigned.with_signature(sig)
        raise InvariantViolation("could not produce an invalid signature (group too small)")

    def _oracle(self, at: int, subject: str, kind: TrustEventKind) -> None:
        """Ground-truth trust event about an authentication, seen by every node."""
        event = TrustEvent(kind, subject)
        self.net.schedule_local(at, subject, event)
        self.net.broadcast(subject, event, at)

    def _send_validated(self, node: NodeState, tagged: Block, now: int, cost: int, fake: bool) -> None:
        t_sh = now + self._processing(node.node_id) + (cost if self.measured else self.scenario.crypto_cost_ms)
        t_i = min(tx.timestamp for tx in tagged.transactions)
        self.net.broadcast(node.node_id, ValidatedBlock(tagged, t_i=t_i, t_sr=now, t_sh=t_sh), t_sh)
        entry = (t_sh, node.node_id, tagged.digest.hex())
        if fake:
            self.report.fake_authentications.append(entry)
            self._oracle(t_sh, node.node_id, TrustEventKind.AUTHENTICATED_FAKE)
        else:
            self.report.authentications.append(entry)
            kind = (
                TrustEventKind.AUTHENTICATED_FAKE
                if entry[2] in self.report.injected
                else TrustEventKind.AUTHENTICATED_VALID
            )
            self._oracle(t_sh, node.node_id, kind)

    def _handle(self, ev: SimEvent) -> None:
        now = ev.deliver_at
        node = self.nodes[ev.destination]
        msg = ev.message

        if isinstance(msg, _Propose):
            self._propose(now, node, msg.round)
            return

        result, cost = self._timed_step(node, msg, now)
        for node_id, role in result.role_changes:
            if role is Role.TRUSTED:
                self.ever_trusted.add(node_id)
        if isinstance(msg, TrustEvent) and msg.kind is TrustEventKind.AUTHENTICATED_FAKE:
            self.report.fake_deltas[node.node_id][msg.node_id] += 1

        outcome = result.outcome
        if isinstance(outcome, Authenticated):
            self._send_validated(node, outcome.block, now, cost, fake=False)
        elif isinstance(outcome, Dropped):
            digest_hex = outcome.block.digest.hex()
            self.report.drops.append((now, node.node_id, digest_hex, outcome.reason))
            adv = self.adversary
            if (
                node.node_id in adv.compromised
                and outcome.reason in ("bad-signature", "bad-mac")
                and self.adv_rng.random() < adv.fake_authentication_rate
            ):
                self._send_validated(node, tag_block(node, outcome.block), now, cost, fake=True)
        elif isinstance(outcome, Accepted):
            t_ch = now + self._processing(node.node_id) + cost
            block = outcome.block
            self.report.metrics.add(
                BlockTimeline(
                    t_i=msg.t_i, t_sr=msg.t_sr, t_sh=msg.t_sh, t_cr=now, t_ch=t_ch,
                    block=block.digest.hex(),
                    proposer=block.source_id,
                    authenticator=block.poah_tag.authenticator_id,
                    client=node.node_id,
                )
            )
            for out in result.outgoing:
                self.net.broadcast(node.node_id, out, t_ch)
        elif isinstance(outcome, Rejected):
            if outcome.reason != "duplicate":
                digest_hex = outcome.block.digest.hex() if outcome.block is not None else ""
                self.report.rejections.append((now, node.node_id, digest_hex, outcome.reason))
            for out in result.outgoing:
                self.net.broadcast(node.node_id, out, now + cost)

    # -- driver -----------------------------------------------------------------

    def run(self) -> SimulationReport:
        sc = self.scenario
        proposers = sc.proposer_ids
        for r in range(sc.block_target):
            self.net.schedule_local(r * sc.block_interval_ms, proposers[r % len(proposers)], _Propose(r))
        self.net.run(self._handle)

        report = self.report
        report.registry = self.registry.with_roles(self.ever_trusted)
        report.chains = {name: n.chain for name, n in sorted(self.nodes.items())}
        report.trust = {name: n.trust_table for name, n in sorted(self.nodes.items())}
        report.counters = {
            "sent": self.net.sent,
            "delivered": self.net.delivered,
            "lost": self.net.lost,
            "local": self.net.local_events,
            "final_clock_ms": self.net.clock,
        }
        self._tamper_probes(report)
        return report

    def _tamper_probes(self, report: SimulationReport) -> None:
        rate = self.adversary.tamper_history_rate
        if not rate:
            return
        for name, chain in sorted(report.chains.items()):
            if len(chain) < 2 or self.adv_rng.random() >= rate:
                continue
            data = bytearray(chain.to_bytes())
            spans = record_offsets(bytes(data))
            index = self.adv_rng.randrange(1, len(spans))
            start, end = spans[index]
            bit = self.adv_rng.randrange((end - start) * 8)
            data[start + bit // 8] ^= 1 << (bit % 8)
            report.tamper_probes.append((name, index, locate_tampering(bytes(data), report.registry)))


def locate_tampering(data: bytes, registry: Registry) -> Optional[int]:
    """First bad record index of a serialized ledger, counting parse failures."""
    try:
        chain = parse_ledger(data)
    except LedgerLoadError as exc:
        bad = verify_chain(exc.recovered, registry)
        return exc.record_index if bad is None else bad
    return verify_chain(chain, registry)


def run(scenario: Scenario) -> SimulationReport:
    return Simulation(scenario).run()
