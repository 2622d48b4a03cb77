"""ElGamal signatures and the SHA-256 digest used for chain linking.

Signatures follow the classic hash-then-sign ElGamal construction::

    r = g^k mod p
    s = k^-1 * (H(m) - x*r) mod (p-1)

and verify by checking ``g^H(m) == y^r * r^s (mod p)``, where ``H(m)`` is the
SHA-256 digest of the message read as a big-endian integer reduced mod (p-1).
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass
from typing import Optional

import gmpy2


class ParameterError(ValueError):
    """Raised for invalid group parameters or out-of-range key material."""


@dataclass(frozen=True)
class GroupParams:
    p: int
    g: int

    def validate(self) -> None:
        p, g = self.p, self.g
        if not isinstance(p, int) or not isinstance(g, int):
            raise ParameterError("p and g must be integers")
        if p <= 3 or not gmpy2.is_prime(p):
            raise ParameterError(f"p must be a prime greater than 3, got {p}")
        if not 1 < g < p:
            raise ParameterError("g must satisfy 1 < g < p")
        if pow(g, 2, p) == 1:
            raise ParameterError("g must have multiplicative order greater than 2")

    @classmethod
    def from_strings(cls, p: str, g: str) -> GroupParams:
        """Parse decimal or ``0x``-prefixed hex strings."""
        try:
            params = cls(_parse_int(p), _parse_int(g))
        except ValueError as exc:
            raise ParameterError(str(exc)) from None
        params.validate()
        return params

    @property
    def bits(self) -> int:
        return self.p.bit_length()


def _parse_int(text) -> int:
    if isinstance(text, int):
        return text
    text = str(text).strip().replace("_", "")
    if text.lower().startswith("0x"):
        return int(text, 16)
    return int(text, 10)


# Oracle-checkable toy group; 5 is a primitive root mod 23.
TEST_PARAMS = GroupParams(p=23, g=5)

# 512-bit safe prime p = 2q + 1 (openssl dhparam); 2 generates the order-q subgroup.
BENCH_PARAMS = GroupParams(
    p=int(
        "fe7451abe36b4172ed15f8e55f76d935362fe84eccf44204452e6d42a26282d5"
        "c604fa38e80e95621a9c280f2d55575c007b0c621de57ccacc05ee0a5e50419f",
        16,
    ),
    g=2,
)

PROFILES = {"test": TEST_PARAMS, "bench512": BENCH_PARAMS}


@dataclass(frozen=True)
class KeyPair:
    private_key: int
    public_key: int

    @property
    def x(self) -> int:
        return self.private_key

    @property
    def y(self) -> int:
        return self.public_key


@dataclass(frozen=True)
class Signature:
    r: int
    s: int


def digest(data: bytes) -> bytes:
    """SHA-256 of ``data`` (32 bytes)."""
    return hashlib.sha256(bytes(data)).digest()


def hash_to_int(message: bytes, params: GroupParams) -> int:
    return int.from_bytes(digest(message), "big") % (params.p - 1)


def keygen(
    params: GroupParams,
    rng: Optional[random.Random] = None,
    private_key: Optional[int] = None,
) -> KeyPair:
    """Draw a key pair from ``rng``, or derive one from a forced ``private_key``."""
    params.validate()
    p = params.p
    if private_key is None:
        if rng is None:
            raise ParameterError("keygen needs an rng or an explicit private key")
        x = rng.randrange(1, p - 1)
    else:
        x = private_key
        if not 1 <= x <= p - 2:
            raise ParameterError(f"private key must lie in [1, {p - 2}], got {x}")
    return KeyPair(private_key=x, public_key=int(gmpy2.powmod(params.g, x, p)))


def sign(
    message: bytes,
    key: KeyPair,
    params: GroupParams,
    rng: Optional[random.Random] = None,
    nonce: Optional[int] = None,
) -> Signature:
    """Sign ``digest(message)``.

    The nonce is drawn from ``rng`` and redrawn until it is coprime to p-1 and
    yields s != 0. Passing ``nonce`` forces k (used by oracle tests); a forced
    nonce that is unusable raises ParameterError instead of being redrawn.
    """
    if not message:
        raise ValueError("cannot sign an empty message")
    p, g = params.p, params.g
    order = p - 1
    h = hash_to_int(message, params)
    while True:
        if nonce is not None:
            k = nonce
        elif rng is not None:
            k = rng.randrange(1, order)
        else:
            raise ParameterError("sign needs an rng or an explicit nonce")
        if math.gcd(k, order) != 1:
            if nonce is not None:
                raise ParameterError(f"nonce {k} is not coprime to p-1")
            continue
        r = int(gmpy2.powmod(g, k, p))
        s = int(gmpy2.invert(k, order) * (h - key.private_key * r) % order)
        if s == 0:
            if nonce is not None:
                raise ParameterError(f"nonce {k} yields s = 0")
            continue
        return Signature(r, s)


def verify(message: bytes, sig: Signature, public_key: int, params: GroupParams) -> bool:
    """Return True iff ``sig`` is a valid signature of ``message`` under ``public_key``.

    Malformed input of any kind is a rejection, never an exception.
    """
    try:
        p, g = params.p, params.g
        r, s, y = int(sig.r), int(sig.s), int(public_key)
        if not (0 < r < p and 0 <= s < p - 1 and 0 < y < p):
            return False
        h = hash_to_int(bytes(message), params)
        lhs = gmpy2.powmod(g, h, p)
        rhs = gmpy2.powmod(y, r, p) * gmpy2.powmod(r, s, p) % p
        return lhs == rhs
    except (TypeError, ValueError, AttributeError, OverflowError):
        return False
