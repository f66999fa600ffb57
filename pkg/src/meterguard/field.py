"""Prime-field arithmetic and fixed-point encoding of physical quantities.

Scalars are handled through :class:`FieldElement`; bulk share arithmetic
uses numpy object arrays of Python ints so that products up to 122 bits
stay exact before reduction.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from numbers import Rational

import numpy as np

from .errors import ProtocolError, RangeOverflow, ZeroInverse

MERSENNE61 = (1 << 61) - 1
WORD = 8  # wire bytes per field element


def mersenne_reduce(x: int) -> int:
    """Reduce ``0 <= x < 2**122`` modulo 2**61 - 1 by folding."""
    x = (x & MERSENNE61) + (x >> 61)
    x = (x & MERSENNE61) + (x >> 61)
    return x - MERSENNE61 if x >= MERSENNE61 else x


@dataclass(frozen=True)
class FieldElement:
    value: int
    modulus: int = MERSENNE61

    def __post_init__(self):
        if not 0 <= self.value < self.modulus:
            raise ValueError(f"{self.value} is not canonical mod {self.modulus}")

    def _other(self, other) -> int:
        if isinstance(other, FieldElement):
            if other.modulus != self.modulus:
                raise ValueError("operands live in different fields")
            return other.value
        return int(other) % self.modulus

    def __add__(self, other):
        return fe_add(self, FieldElement(self._other(other), self.modulus))

    __radd__ = __add__

    def __sub__(self, other):
        return FieldElement((self.value - self._other(other)) % self.modulus, self.modulus)

    def __neg__(self):
        return FieldElement((-self.value) % self.modulus, self.modulus)

    def __mul__(self, other):
        return fe_mul(self, FieldElement(self._other(other), self.modulus))

    __rmul__ = __mul__

    def inverse(self) -> FieldElement:
        return fe_inv(self)

    def __int__(self):
        return self.value

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(WORD, "little")

    @classmethod
    def from_bytes(cls, data: bytes, modulus: int = MERSENNE61) -> FieldElement:
        if len(data) != WORD:
            raise ValueError("field elements are exactly 8 bytes")
        return cls(int.from_bytes(data, "little"), modulus)


def fe_add(a: FieldElement, b: FieldElement) -> FieldElement:
    s = a.value + b.value
    if s >= a.modulus:
        s -= a.modulus
    return FieldElement(s, a.modulus)


def fe_mul(a: FieldElement, b: FieldElement) -> FieldElement:
    if a.modulus == MERSENNE61:
        return FieldElement(mersenne_reduce(a.value * b.value))
    return FieldElement(a.value * b.value % a.modulus, a.modulus)


def fe_inv(a: FieldElement) -> FieldElement:
    if a.value == 0:
        raise ZeroInverse("0 has no multiplicative inverse")
    # extended Euclid; Fermat exponentiation is kept as a test oracle
    t, new_t, r, new_r = 0, 1, a.modulus, a.value
    while new_r:
        q = r // new_r
        t, new_t = new_t, t - q * new_t
        r, new_r = new_r, r - q * new_r
    return FieldElement(t % a.modulus, a.modulus)


class Field:
    """Vector helpers for one prime modulus."""

    def __init__(self, modulus: int = MERSENNE61):
        if modulus < 3 or modulus >= 1 << 64:
            raise ValueError("modulus must fit in one 64-bit word")
        self.modulus = modulus
        self.half_range = modulus // 2

    def __repr__(self):
        return f"Field({self.modulus})"

    def __eq__(self, other):
        return isinstance(other, Field) and other.modulus == self.modulus

    def __hash__(self):
        return hash(self.modulus)

    def element(self, value: int) -> FieldElement:
        return FieldElement(int(value) % self.modulus, self.modulus)

    def array(self, values) -> np.ndarray:
        arr = np.array(values, dtype=object)
        return arr % self.modulus

    def zeros(self, shape) -> np.ndarray:
        arr = np.empty(shape, dtype=object)
        arr.fill(0)
        return arr

    def random(self, rng: np.random.Generator, shape, nonzero: bool = False) -> np.ndarray:
        low = 1 if nonzero else 0
        draws = rng.integers(low, self.modulus, size=shape, dtype=np.uint64)
        return draws.astype(object)

    def expand(self, seed: bytes, label: str, count: int, nonzero: bool = False) -> np.ndarray:
        """Deterministic pseudorandom field vector from a seed (SHAKE-256 stream)."""
        stream = hashlib.shake_256(label.encode() + b"\x00" + seed).digest(WORD * count)
        words = np.frombuffer(stream, dtype="<u8")
        if nonzero:
            words = words % np.uint64(self.modulus - 1) + np.uint64(1)
        else:
            words = words % np.uint64(self.modulus)
        return words.astype(object)

    def pack(self, values) -> bytes:
        arr = np.asarray(values, dtype=object).ravel()
        return arr.astype(np.uint64).astype("<u8").tobytes()

    def unpack(self, data: bytes) -> np.ndarray:
        if len(data) % WORD:
            raise ProtocolError("field payload is not a whole number of words")
        words = np.frombuffer(data, dtype="<u8")
        if words.size and int(words.max()) >= self.modulus:
            raise ProtocolError("non-canonical field element on the wire")
        return words.astype(object)

    def signed(self, value: int) -> int:
        value = int(value) % self.modulus
        return value - self.modulus if value > self.half_range else value


def round_half_away(num: int, den: int) -> int:
    """Integer nearest to num/den, ties away from zero (den > 0)."""
    q, r = divmod(abs(num), den)
    if 2 * r >= den:
        q += 1
    return q if num >= 0 else -q


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point embedding: x -> round(x * scale) mod p.

    Negative values land above ``half_range``. Products of two encoded
    values carry ``scale**2``; callers decode them with ``power=2``.
    """

    scale: int = 1000
    modulus: int = MERSENNE61

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")

    @property
    def half_range(self) -> int:
        return self.modulus // 2

    def scaled_int(self, x) -> int:
        """Signed integer round(x * scale) without reducing into the field."""
        if isinstance(x, float) and not np.isfinite(x):
            raise RangeOverflow(f"cannot encode {x}")
        if isinstance(x, Decimal):
            x = Fraction(x)
        elif not isinstance(x, Rational):
            x = Fraction(float(x))
        q = Fraction(x) * self.scale
        n = round_half_away(q.numerator, q.denominator)
        if abs(n) > self.half_range:
            raise RangeOverflow(f"{x} exceeds the representable range at scale {self.scale}")
        return n

    def encode(self, x) -> FieldElement:
        return FieldElement(self.scaled_int(x) % self.modulus, self.modulus)

    def encode_array(self, xs) -> np.ndarray:
        flat = [self.scaled_int(x) % self.modulus for x in np.asarray(xs, dtype=float).ravel()]
        return np.array(flat, dtype=object).reshape(np.shape(xs))

    def signed(self, e) -> int:
        v = int(e.value if isinstance(e, FieldElement) else e) % self.modulus
        return v - self.modulus if v > self.half_range else v

    def decode(self, e, power: int = 1) -> Fraction:
        return Fraction(self.signed(e), self.scale**power)

    def decode_rounded(self, e, power: int = 1) -> int:
        """Round a value carrying ``scale**power`` back to ``scale`` units."""
        return round_half_away(self.signed(e), self.scale ** (power - 1))


def encode_fixed(x, codec: FixedPointCodec = FixedPointCodec()) -> FieldElement:
    return codec.encode(x)


def decode_fixed(e, codec: FixedPointCodec = FixedPointCodec(), power: int = 1) -> Fraction:
    return codec.decode(e, power)
