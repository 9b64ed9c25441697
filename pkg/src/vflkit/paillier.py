"""Paillier cryptosystem with signed fixed-point encoding.

Supports exactly what the arbitered gradient protocol needs: encryption
of fixed-point encodings, ciphertext addition, and plaintext-scalar
multiplication (one depth of it, tracked through exponents). Uses the
g = n + 1 generator so encryption needs a single modular exponentiation,
with lambda = lcm(p-1, q-1) and mu = L(g^lambda mod n^2)^-1 mod n.

Encoding is base-2 fixed point at a default exponent of -40: a float x
maps to mantissa round(x * 2^40) stored mod n (negatives as n - |m|).
All protocol values are bounded by 2^20 and a headroom guard keeps
|mantissa| below n / 2^32 so sums never wrap the modulus.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from random import Random

from .errors import (
    CipherRangeError,
    ExponentMismatch,
    HeEncodingError,
    HeError,
)
from .seeds import substream

DEFAULT_EXPONENT = -40
VALUE_BOUND = 1 << 20
HEADROOM_BITS = 32
ALLOWED_KEY_BITS = (128, 1024, 2048)
MILLER_RABIN_ROUNDS = 40

_SMALL_PRIMES = (
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67,
    71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131, 137, 139,
    149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223,
    227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293,
)


@dataclass(frozen=True)
class PublicKey:
    n: int
    n_squared: int
    g: int
    key_bits: int

    def __post_init__(self) -> None:
        if self.g != self.n + 1:
            raise HeError("generator must be n + 1")
        if self.n_squared != self.n * self.n:
            raise HeError("n_squared does not match n")
        if self.n % 2 == 0:
            raise HeError("modulus must be odd")


@dataclass(frozen=True)
class PrivateKey:
    lam: int
    mu: int


@dataclass(frozen=True)
class EncodedNumber:
    """Fixed-point plaintext: value = signed(mantissa) * 2**exponent."""

    mantissa: int
    exponent: int
    n: int

    def __post_init__(self) -> None:
        if not 0 <= self.mantissa < self.n:
            raise HeEncodingError(
                f"mantissa {self.mantissa} outside [0, n)"
            )

    def signed(self) -> int:
        if self.mantissa > self.n // 2:
            return self.mantissa - self.n
        return self.mantissa


@dataclass(frozen=True)
class Ciphertext:
    c: int
    exponent: int


def _is_probable_prime(candidate: int, rng: Random) -> bool:
    if candidate < 2:
        return False
    if candidate in (2, 3):
        return True
    if candidate % 2 == 0:
        return False
    for p in _SMALL_PRIMES:
        if candidate == p:
            return True
        if candidate % p == 0:
            return False
    d = candidate - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(MILLER_RABIN_ROUNDS):
        a = rng.randrange(2, candidate - 1)
        x = pow(a, d, candidate)
        if x in (1, candidate - 1):
            continue
        for _ in range(r - 1):
            x = pow(x, 2, candidate)
            if x == candidate - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: Random) -> int:
    # Top two bits forced so p*q keeps its full bit length.
    while True:
        candidate = rng.getrandbits(bits) | (0b11 << (bits - 2)) | 1
        if _is_probable_prime(candidate, rng):
            return candidate


def keypair_from_primes(p: int, q: int) -> tuple[PublicKey, PrivateKey]:
    """Build a keypair from explicit primes (test hook, e.g. p=5, q=7)."""
    check_rng = Random(0)
    if p == q:
        raise HeError("p and q must differ")
    for prime in (p, q):
        if not _is_probable_prime(prime, check_rng):
            raise HeError(f"{prime} is not prime")
    n = p * q
    n_squared = n * n
    g = n + 1
    lam = math.lcm(p - 1, q - 1)
    x = pow(g, lam, n_squared)
    ell = (x - 1) // n
    try:
        mu = pow(ell, -1, n)
    except ValueError:
        raise HeError("L(g^lambda) is not invertible mod n") from None
    return (
        PublicKey(n=n, n_squared=n_squared, g=g, key_bits=n.bit_length()),
        PrivateKey(lam=lam, mu=mu),
    )


def keygen(key_bits: int, seed: int, insecure: bool = False) -> tuple[PublicKey, PrivateKey]:
    """Deterministic keypair from a seed; same seed gives the same keys."""
    if key_bits not in ALLOWED_KEY_BITS:
        raise HeError(f"key_bits must be one of {ALLOWED_KEY_BITS}, got {key_bits}")
    if key_bits == 128 and not insecure:
        raise HeError("128-bit keys are test-only; pass insecure=True")
    rng = substream(seed, "paillier-keygen", key_bits)
    half = key_bits // 2
    p = _random_prime(half, rng)
    q = _random_prime(half, rng)
    while q == p:
        q = _random_prime(half, rng)
    pk, sk = keypair_from_primes(p, q)
    return PublicKey(n=pk.n, n_squared=pk.n_squared, g=pk.g, key_bits=key_bits), sk


def encode(x: float, pk: PublicKey, exponent: int = DEFAULT_EXPONENT) -> EncodedNumber:
    """Exact fixed-point encoding: mantissa = round(x * 2**-exponent).

    Goes through Fraction so the rounding is exact even where the
    product exceeds 2^53; ties round half-to-even like round() itself.
    """
    if not math.isfinite(x):
        raise HeEncodingError(f"cannot encode non-finite value {x!r}")
    if abs(x) >= VALUE_BOUND:
        raise HeEncodingError(
            f"|{x!r}| exceeds the protocol value bound 2^20"
        )
    signed = round(Fraction(x) * Fraction(2) ** (-exponent))
    if abs(signed) >= (pk.n >> HEADROOM_BITS):
        raise HeEncodingError(
            f"encoding of {x!r} breaks the n/2^{HEADROOM_BITS} headroom guard"
        )
    return EncodedNumber(mantissa=signed % pk.n, exponent=exponent, n=pk.n)


def decode(e: EncodedNumber) -> float:
    """Signed mantissa scaled by 2**exponent, rounded once to a float."""
    signed = e.signed()
    try:
        return math.ldexp(float(signed), e.exponent)
    except OverflowError:
        raise HeEncodingError(
            f"decoded value 2^{signed.bit_length() + e.exponent} overflows a float"
        ) from None


def encrypt_with_r(e: EncodedNumber, pk: PublicKey, r: int) -> Ciphertext:
    """Encrypt with an explicit blinding factor (golden-value tests)."""
    if not 0 < r < pk.n or math.gcd(r, pk.n) != 1:
        raise HeError(f"blinding factor {r} not in (0, n) coprime to n")
    # g = n + 1 means g^m mod n^2 collapses to 1 + n*m.
    gm = (1 + pk.n * e.mantissa) % pk.n_squared
    c = (gm * pow(r, pk.n, pk.n_squared)) % pk.n_squared
    return Ciphertext(c=c, exponent=e.exponent)


def encrypt(e: EncodedNumber, pk: PublicKey, rng: Random) -> Ciphertext:
    while True:
        r = rng.randrange(1, pk.n)
        if math.gcd(r, pk.n) == 1:
            return encrypt_with_r(e, pk, r)


def decrypt(ct: Ciphertext, sk: PrivateKey, pk: PublicKey) -> EncodedNumber:
    if not 0 <= ct.c < pk.n_squared:
        raise CipherRangeError(f"ciphertext {ct.c} outside [0, n^2)")
    x = pow(ct.c, sk.lam, pk.n_squared)
    mantissa = ((x - 1) // pk.n) * sk.mu % pk.n
    return EncodedNumber(mantissa=mantissa, exponent=ct.exponent, n=pk.n)


def add_cipher(a: Ciphertext, b: Ciphertext, pk: PublicKey) -> Ciphertext:
    if a.exponent != b.exponent:
        raise ExponentMismatch(
            f"cannot add ciphertexts at exponents {a.exponent} and {b.exponent}"
        )
    return Ciphertext(c=(a.c * b.c) % pk.n_squared, exponent=a.exponent)


def mul_scalar(a: Ciphertext, k: EncodedNumber, pk: PublicKey) -> Ciphertext:
    """Multiply an encrypted value by a plaintext encoding.

    Exponents add, so one multiplication doubles the fixed-point depth.
    Only the plaintext side's headroom is checkable here; the design
    bound (values < 2^20, keys >= 1024 bits in real runs) keeps the
    hidden product itself clear of the modulus.
    """
    signed = k.signed()
    limit = pk.n >> HEADROOM_BITS
    if limit and abs(signed) >= limit:
        raise HeEncodingError("plaintext factor breaks the headroom guard")
    # Exponentiating by the signed value (inverse then a short exponent)
    # is far cheaper than by the n-sized unsigned mantissa and yields a
    # ciphertext of the same plaintext.
    try:
        c = pow(a.c, signed, pk.n_squared)
    except ValueError:
        raise CipherRangeError(f"ciphertext {a.c} is not invertible mod n^2") from None
    return Ciphertext(c=c, exponent=a.exponent + k.exponent)


def sub_encoded(a: EncodedNumber, b: EncodedNumber) -> EncodedNumber:
    """Mantissa subtraction mod n; exact inverse of an additive mask."""
    if a.exponent != b.exponent:
        raise ExponentMismatch(
            f"cannot subtract encodings at exponents {a.exponent} and {b.exponent}"
        )
    if a.n != b.n:
        raise HeError("encodings under different moduli")
    return EncodedNumber(
        mantissa=(a.mantissa - b.mantissa) % a.n, exponent=a.exponent, n=a.n
    )


# ---------------------------------------------------------------------------
# wire codecs: [u32 LE length][i32 LE exponent][big-endian magnitude]

def _pack_entry(value: int, exponent: int) -> bytes:
    nbytes = (value.bit_length() + 7) // 8
    return struct.pack("<Ii", nbytes, exponent) + value.to_bytes(nbytes, "big")


def _unpack_entries(raw: bytes) -> list[tuple[int, int]]:
    out = []
    pos = 0
    while pos < len(raw):
        if pos + 8 > len(raw):
            raise HeError(f"truncated entry header at byte {pos}")
        nbytes, exponent = struct.unpack_from("<Ii", raw, pos)
        pos += 8
        if pos + nbytes > len(raw):
            raise HeError(f"entry at byte {pos - 8} runs past the blob end")
        out.append((int.from_bytes(raw[pos:pos + nbytes], "big"), exponent))
        pos += nbytes
    return out


def encode_cipher_vector(cts: list[Ciphertext]) -> bytes:
    return b"".join(_pack_entry(ct.c, ct.exponent) for ct in cts)


def decode_cipher_vector(raw: bytes) -> list[Ciphertext]:
    return [Ciphertext(c=v, exponent=e) for v, e in _unpack_entries(raw)]


def encode_encoded_vector(values: list[EncodedNumber]) -> bytes:
    return b"".join(_pack_entry(v.mantissa, v.exponent) for v in values)


def decode_encoded_vector(raw: bytes, pk: PublicKey) -> list[EncodedNumber]:
    return [
        EncodedNumber(mantissa=v, exponent=e, n=pk.n)
        for v, e in _unpack_entries(raw)
    ]


def encode_public_key(pk: PublicKey) -> bytes:
    return _pack_entry(pk.n, pk.key_bits)


def decode_public_key(raw: bytes) -> PublicKey:
    entries = _unpack_entries(raw)
    if len(entries) != 1:
        raise HeError(f"public key blob holds {len(entries)} entries, expected 1")
    n, key_bits = entries[0]
    return PublicKey(n=n, n_squared=n * n, g=n + 1, key_bits=key_bits)
