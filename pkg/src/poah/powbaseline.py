"""Toy proof-of-work miner used as the cost baseline for PoAh authentication.

Both sides hash the same canonical block bytes with the same digest function,
so the comparison isolates the consensus step itself.
"""

from __future__ import annotations

import hashlib
import random
import statistics
import struct
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .crypto import BENCH_PARAMS, GroupParams, digest, keygen, sign, verify
from .identity import MAC_LEN
from .ledger import GENESIS_HASH, Block, Transaction, serialize

MAX_DIFFICULTY_BITS = 32

_NONCE = struct.Struct(">Q")


@dataclass(frozen=True)
class PowBaselineConfig:
    difficulty_bits: int = 20
    trials: int = 10

    def __post_init__(self):
        if not 1 <= self.difficulty_bits <= MAX_DIFFICULTY_BITS:
            raise ValueError(f"difficulty_bits must be in [1, {MAX_DIFFICULTY_BITS}]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


def leading_zero_bits(d: bytes) -> int:
    value = int.from_bytes(d, "big")
    return len(d) * 8 - value.bit_length()


def mine(header: bytes, difficulty_bits: int, start_nonce: int = 0) -> Tuple[int, int, bytes]:
    """Search nonces from ``start_nonce`` until digest(header || nonce) has
    ``difficulty_bits`` leading zero bits. Returns (nonce, attempts, digest)."""
    limit = 1 << (256 - difficulty_bits)
    base = hashlib.sha256(header)
    nonce = start_nonce
    while True:
        h = base.copy()
        h.update(_NONCE.pack(nonce))
        d = h.digest()
        if int.from_bytes(d, "big") < limit:
            return nonce, nonce - start_nonce + 1, d
        nonce += 1


def sample_block(index: int, rng: random.Random) -> Block:
    payload = rng.randbytes(35)
    return Block(
        source_id="bench",
        mac=bytes(MAC_LEN),
        transactions=(Transaction("bench", index, payload[:18]), Transaction("bench", index, payload[18:])),
        hash_prev=GENESIS_HASH,
    )


@dataclass
class PowBaselineReport:
    config: PowBaselineConfig
    attempts: List[int] = field(default_factory=list)
    pow_seconds: List[float] = field(default_factory=list)
    poah_seconds: List[float] = field(default_factory=list)

    @property
    def mean_attempts(self) -> float:
        return statistics.fmean(self.attempts)

    @property
    def mean_pow_s(self) -> float:
        return statistics.fmean(self.pow_seconds)

    @property
    def mean_poah_s(self) -> float:
        return statistics.fmean(self.poah_seconds)

    @property
    def ratio(self) -> float:
        return self.mean_pow_s / self.mean_poah_s

    def to_dict(self) -> dict:
        return {
            "difficulty_bits": self.config.difficulty_bits,
            "trials": self.config.trials,
            "expected_attempts": 2 ** self.config.difficulty_bits,
            "mean_attempts": self.mean_attempts,
            "mean_pow_s": self.mean_pow_s,
            "mean_poah_s": self.mean_poah_s,
            "ratio_pow_over_poah": self.ratio,
        }


def count_attempts(difficulty_bits: int, trials: int, seed: int = 0) -> List[int]:
    """Nonce-attempt counts only (no timing), for scaling checks."""
    rng = random.Random(f"{seed}/pow")
    out = []
    for i in range(trials):
        header = serialize(sample_block(i, rng))
        out.append(mine(header, difficulty_bits)[1])
    return out


def run_baseline(config: PowBaselineConfig, seed: int = 0, params: Optional[GroupParams] = None) -> PowBaselineReport:
    """Mine ``trials`` blocks and time ``trials`` PoAh authentications (verify + digest)."""
    params = params or BENCH_PARAMS
    rng = random.Random(f"{seed}/pow")
    key = keygen(params, random.Random(f"{seed}/pow-key"))
    report = PowBaselineReport(config)
    for i in range(config.trials):
        block = sample_block(i, rng)
        header = serialize(block)

        t0 = time.perf_counter()
        _, attempts, _ = mine(header, config.difficulty_bits)
        report.pow_seconds.append(time.perf_counter() - t0)
        report.attempts.append(attempts)

        sig = sign(header, key, params, rng)
        t0 = time.perf_counter()
        ok = verify(header, sig, key.public_key, params)
        digest(header)
        report.poah_seconds.append(time.perf_counter() - t0)
        if not ok:
            raise RuntimeError("benchmark signature failed to verify")
    return report
