import hashlib
import random

import pytest
from hypothesis import given, settings, strategies as st

from poah.crypto import (
    BENCH_PARAMS,
    PROFILES,
    TEST_PARAMS,
    GroupParams,
    KeyPair,
    ParameterError,
    Signature,
    digest,
    hash_to_int,
    keygen,
    sign,
    verify,
)

from _support import modexp, modinv

P, G = 23, 5

SHA256_VECTORS = [
    (b"", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    (b"abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
    (
        b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1",
    ),
]


class TestDigest:
    @pytest.mark.parametrize("message,expected", SHA256_VECTORS)
    def test_published_vectors(self, message, expected):
        assert digest(message).hex() == expected

    def test_million_a(self):
        assert digest(b"a" * 1_000_000).hex() == (
            "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0"
        )

    def test_deterministic(self):
        assert digest(b"block") == digest(b"block")
        assert len(digest(b"block")) == 32


class TestParams:
    def test_small_profile_is_primitive_root(self):
        # 5 generates all of Z_23^*: its order is 22
        assert sorted(modexp(G, k, P) for k in range(1, P)) == list(range(1, P))

    def test_bench_profile_validates(self):
        BENCH_PARAMS.validate()
        assert BENCH_PARAMS.bits == 512
        # safe prime: (p - 1) / 2 is also prime
        q = (BENCH_PARAMS.p - 1) // 2
        assert all(pow(a, q - 1, q) == 1 for a in (2, 3, 5, 7, 11))

    def test_profiles(self):
        assert PROFILES["test"] == TEST_PARAMS
        assert PROFILES["bench512"] == BENCH_PARAMS

    @pytest.mark.parametrize("p,g", [(24, 5), (23, 1), (23, 23), (23, 22), (3, 2)])
    def test_invalid_params_rejected(self, p, g):
        with pytest.raises(ParameterError):
            keygen(GroupParams(p, g), random.Random(0))

    def test_from_strings(self):
        assert GroupParams.from_strings("0x17", "5") == TEST_PARAMS
        with pytest.raises(ParameterError):
            GroupParams.from_strings("twenty-three", "5")


class TestKeygen:
    def test_forced_private_key_matches_oracle(self):
        kp = keygen(TEST_PARAMS, private_key=6)
        assert kp.public_key == modexp(5, 6, 23) == 8

    @pytest.mark.parametrize("x", [0, -1, 22, 23])
    def test_private_key_out_of_range(self, x):
        with pytest.raises(ParameterError):
            keygen(TEST_PARAMS, private_key=x)

    def test_same_seed_same_key(self):
        assert keygen(BENCH_PARAMS, random.Random(9)) == keygen(BENCH_PARAMS, random.Random(9))

    def test_every_private_key_matches_oracle(self):
        for x in range(1, P - 1):
            assert keygen(TEST_PARAMS, private_key=x).public_key == modexp(G, x, P)

    def test_needs_a_source_of_randomness(self):
        with pytest.raises(ParameterError):
            keygen(TEST_PARAMS)


class TestSignSmallPrime:
    message = b"trx1"

    def oracle_signature(self, x, k):
        h = int.from_bytes(hashlib.sha256(self.message).digest(), "big") % (P - 1)
        r = modexp(G, k, P)
        s = modinv(k, P - 1) * (h - x * r) % (P - 1)
        return h, r, s

    def test_fixed_nonce_example(self):
        kp = keygen(TEST_PARAMS, private_key=6)
        h, r, s = self.oracle_signature(6, 3)
        assert r == 10
        sig = sign(self.message, kp, TEST_PARAMS, nonce=3)
        assert (sig.r, sig.s) == (r, s)
        # verification equation, evaluated by the oracle
        assert modexp(G, h, P) == modexp(8, r, P) * modexp(r, s, P) % P
        assert verify(self.message, sig, 8, TEST_PARAMS)

    def test_all_usable_nonces_match_oracle(self):
        kp = keygen(TEST_PARAMS, private_key=6)
        for k in (1, 3, 5, 7, 9, 13, 15, 17, 19, 21):
            _, r, s = self.oracle_signature(6, k)
            if s == 0:
                with pytest.raises(ParameterError):
                    sign(self.message, kp, TEST_PARAMS, nonce=k)
                continue
            assert sign(self.message, kp, TEST_PARAMS, nonce=k) == Signature(r, s)

    @pytest.mark.parametrize("k", [2, 11, 22])
    def test_nonce_not_coprime(self, k):
        with pytest.raises(ParameterError):
            sign(self.message, keygen(TEST_PARAMS, private_key=6), TEST_PARAMS, nonce=k)

    def test_hash_reduction(self):
        h = hash_to_int(self.message, TEST_PARAMS)
        assert h == int(hashlib.sha256(self.message).hexdigest(), 16) % 22


class TestSignVerify:
    key = keygen(BENCH_PARAMS, random.Random(1))
    other = keygen(BENCH_PARAMS, random.Random(2))

    def test_round_trip(self):
        sig = sign(b"block bytes", self.key, BENCH_PARAMS, random.Random(3))
        assert verify(b"block bytes", sig, self.key.public_key, BENCH_PARAMS)

    def test_distinct_nonces_both_verify(self):
        rng = random.Random(4)
        a = sign(b"m", self.key, BENCH_PARAMS, rng)
        b = sign(b"m", self.key, BENCH_PARAMS, rng)
        assert a != b
        assert verify(b"m", a, self.key.public_key, BENCH_PARAMS)
        assert verify(b"m", b, self.key.public_key, BENCH_PARAMS)

    def test_bit_flip_rejected(self):
        msg = bytearray(b"transaction payload")
        sig = sign(bytes(msg), self.key, BENCH_PARAMS, random.Random(5))
        msg[3] ^= 0x01
        assert not verify(bytes(msg), sig, self.key.public_key, BENCH_PARAMS)

    def test_wrong_key_rejected(self):
        sig = sign(b"m", self.key, BENCH_PARAMS, random.Random(6))
        assert not verify(b"m", sig, self.other.public_key, BENCH_PARAMS)

    def test_empty_message_refused(self):
        with pytest.raises(ValueError):
            sign(b"", self.key, BENCH_PARAMS, random.Random(0))

    @pytest.mark.parametrize(
        "sig",
        [
            Signature(0, 1),
            Signature(BENCH_PARAMS.p, 1),
            Signature(5, BENCH_PARAMS.p - 1),
            Signature(-1, 3),
            Signature("x", None),
            None,
        ],
    )
    def test_malformed_signature_rejected_without_raising(self, sig):
        assert verify(b"m", sig, self.key.public_key, BENCH_PARAMS) is False

    def test_malformed_key_rejected(self):
        sig = sign(b"m", self.key, BENCH_PARAMS, random.Random(7))
        assert verify(b"m", sig, 0, BENCH_PARAMS) is False
        assert verify(b"m", sig, "nope", BENCH_PARAMS) is False


@settings(max_examples=200, deadline=None)
@given(
    x=st.integers(min_value=1, max_value=P - 2),
    message=st.binary(min_size=1, max_size=64),
    seed=st.integers(min_value=0, max_value=2**32),
)
def test_small_prime_round_trip_property(x, message, seed):
    kp = keygen(TEST_PARAMS, private_key=x)
    sig = sign(message, kp, TEST_PARAMS, random.Random(seed))
    assert 0 < sig.r < P and 0 < sig.s < P - 1
    assert verify(message, sig, kp.public_key, TEST_PARAMS)
    h = hash_to_int(message, TEST_PARAMS)
    assert modexp(G, h, P) == modexp(kp.public_key, sig.r, P) * modexp(sig.r, sig.s, P) % P


def random_forgery_rate(trials: int, seed: int) -> float:
    rng = random.Random(seed)
    hits = 0
    for _ in range(trials):
        kp = keygen(TEST_PARAMS, rng)
        message = rng.randbytes(8)
        sig = Signature(rng.randrange(1, P), rng.randrange(0, P - 1))
        hits += verify(message, sig, kp.public_key, TEST_PARAMS)
    return hits / trials


def test_random_forgery_rate_bounded():
    assert random_forgery_rate(20_000, seed=11) <= 2 / (P - 1)


def test_keypair_accessors():
    kp = KeyPair(6, 8)
    assert (kp.x, kp.y) == (6, 8)
