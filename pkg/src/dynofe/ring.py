"""Arithmetic over Z_q for q = 2**bits, plus signed fixed-point encoding.

Vectors with ``bits <= 64`` are stored as ``uint64`` arrays. Since q divides
2**64, native wraparound followed by a bit mask is exact reduction mod q.
Wider moduli fall back to object arrays of Python ints, whose products never
overflow.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, RangeError

MIN_BITS = 16
MAX_BITS = 127


@dataclass(frozen=True)
class Modulus:
    """The ring Z_q with q = 2**bits."""

    bits: int

    def __post_init__(self):
        if not MIN_BITS <= self.bits <= MAX_BITS:
            raise ValueError(f"bits must lie in [{MIN_BITS}, {MAX_BITS}], got {self.bits}")

    @property
    def q(self) -> int:
        return 1 << self.bits

    @property
    def half(self) -> int:
        return 1 << (self.bits - 1)

    @property
    def mask(self) -> int:
        return (1 << self.bits) - 1

    @property
    def nbytes(self) -> int:
        """Bytes needed to serialize one ring element."""
        return (self.bits + 7) // 8

    @property
    def native(self) -> bool:
        return self.bits <= 64

    @property
    def dtype(self):
        return np.uint64 if self.native else object

    def reduce(self, value: int) -> int:
        return int(value) & self.mask

    def from_signed(self, value: int) -> int:
        """Map a signed integer with |value| < q/2 to its representative in [0, q)."""
        value = int(value)
        if not -self.half <= value < self.half:
            raise RangeError(f"{value} does not fit the signed range of Z_2^{self.bits}")
        return value & self.mask


def centered_lift(e: int, modulus: Modulus) -> int:
    """Interpret a ring element as a signed integer in [-q/2, q/2)."""
    e = int(e) & modulus.mask
    return e - modulus.q if e >= modulus.half else e


class RingVector:
    """Immutable vector over Z_q."""

    __slots__ = ("elems", "modulus")

    def __init__(self, elems, modulus: Modulus):
        arr = np.asarray(elems, dtype=modulus.dtype)
        if arr.ndim != 1:
            arr = arr.reshape(-1)
        arr = arr.copy()
        if modulus.native:
            if modulus.bits < 64:
                arr &= np.uint64(modulus.mask)
        else:
            arr = np.array([int(v) & modulus.mask for v in arr], dtype=object)
        arr.flags.writeable = False
        object.__setattr__(self, "elems", arr)
        object.__setattr__(self, "modulus", modulus)

    def __setattr__(self, name, value):
        raise AttributeError("RingVector is immutable")

    @classmethod
    def from_ints(cls, values: Iterable[int], modulus: Modulus) -> "RingVector":
        """Reduce arbitrary (possibly negative) integers mod q."""
        if isinstance(values, np.ndarray) and modulus.native and values.dtype.kind in "iu":
            return cls(values.astype(np.int64 if values.dtype.kind == "i" else np.uint64)
                       .astype(np.uint64), modulus)
        return cls([int(v) & modulus.mask for v in values], modulus)

    @classmethod
    def zeros(cls, m: int, modulus: Modulus) -> "RingVector":
        if modulus.native:
            return cls(np.zeros(m, dtype=np.uint64), modulus)
        return cls([0] * m, modulus)

    def __len__(self) -> int:
        return len(self.elems)

    def __iter__(self):
        return (int(v) for v in self.elems)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return RingVector(self.elems[index], self.modulus)
        return int(self.elems[index])

    def __eq__(self, other) -> bool:
        if not isinstance(other, RingVector):
            return NotImplemented
        return self.modulus == other.modulus and np.array_equal(self.elems, other.elems)

    def __hash__(self):
        return hash((self.modulus, tuple(self.tolist())))

    def __repr__(self) -> str:
        head = ", ".join(str(v) for v in self.tolist()[:4])
        more = ", ..." if len(self) > 4 else ""
        return f"RingVector([{head}{more}], bits={self.modulus.bits})"

    def _check(self, other: "RingVector"):
        if self.modulus != other.modulus:
            raise DimensionError(f"modulus mismatch: 2^{self.modulus.bits} vs 2^{other.modulus.bits}")
        if len(self) != len(other):
            raise DimensionError(f"length mismatch: {len(self)} vs {len(other)}")

    def __add__(self, other: "RingVector") -> "RingVector":
        self._check(other)
        return RingVector(self.elems + other.elems, self.modulus)

    def __sub__(self, other: "RingVector") -> "RingVector":
        self._check(other)
        if self.modulus.native:
            return RingVector(self.elems - other.elems, self.modulus)
        return RingVector(self.elems - other.elems + self.modulus.q, self.modulus)

    def __neg__(self) -> "RingVector":
        return RingVector.zeros(len(self), self.modulus) - self

    def tolist(self) -> list[int]:
        return [int(v) for v in self.elems]

    def to_signed(self) -> list[int]:
        return [centered_lift(v, self.modulus) for v in self.elems]


def random_vector(m: int, modulus: Modulus, rng: np.random.Generator | None = None) -> RingVector:
    """Uniform vector in Z_q^m.

    Without ``rng`` the bytes come from the OS CSPRNG. Masking uniform bytes
    is unbiased because q is a power of two.
    """
    width = modulus.nbytes
    raw = os.urandom(width * m) if rng is None else rng.bytes(width * m)
    if modulus.native:
        buf = np.zeros((m, 8), dtype=np.uint8)
        buf[:, :width] = np.frombuffer(raw, dtype=np.uint8).reshape(m, width)
        return RingVector(buf.view("<u8").reshape(m), modulus)
    return RingVector(
        [int.from_bytes(raw[k * width:(k + 1) * width], "little") for k in range(m)], modulus
    )


def ring_inner_product(x: RingVector, y: RingVector) -> int:
    """Return sum_j x[j] * y[j] mod q."""
    x._check(y)
    return int(np.dot(x.elems, y.elems)) & x.modulus.mask


def stacked_inner_product(xs: Sequence[RingVector], ys: Sequence[RingVector]) -> int:
    """Return sum_i <xs[i], ys[i]> mod q in one pass."""
    if len(xs) != len(ys):
        raise DimensionError(f"{len(xs)} left vectors but {len(ys)} right vectors")
    if not xs:
        return 0
    for x, y in zip(xs, ys):
        x._check(y)
    modulus = xs[0].modulus
    if any(x.modulus != modulus for x in xs):
        raise DimensionError("vectors use different moduli")
    if modulus.native:
        a = np.stack([x.elems for x in xs])
        b = np.stack([y.elems for y in ys])
        return int((a * b).sum(dtype=np.uint64)) & modulus.mask
    return sum(int(np.dot(x.elems, y.elems)) for x, y in zip(xs, ys)) & modulus.mask


# --- fixed point -----------------------------------------------------------


@dataclass(frozen=True)
class FixedPointCodec:
    """Scale reals by ``scale`` and round half away from zero."""

    scale: int
    modulus: Modulus

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if 2 * self.scale >= self.modulus.q:
            raise ValueError(f"scale {self.scale} too large for q = 2^{self.modulus.bits}")


def round_half_away(value: Fraction | float) -> int:
    value = Fraction(value)
    n = math.floor(abs(value) + Fraction(1, 2))
    return -n if value < 0 else n


def encode_fixed(r: float, codec: FixedPointCodec) -> int:
    """Encode a real as round(r * scale), lifted into [0, q)."""
    if not math.isfinite(r):
        raise RangeError(f"cannot encode {r}")
    scaled = Fraction(r) * codec.scale
    if abs(scaled) * 2 >= codec.modulus.q:
        raise RangeError(f"|{r}| * {codec.scale} exceeds q/2")
    return codec.modulus.from_signed(round_half_away(scaled))


def decode_fixed(e: int, codec: FixedPointCodec, out_scale: int | None = None) -> float:
    """Centered lift of ``e`` divided by ``out_scale`` (defaults to the codec scale)."""
    return centered_lift(e, codec.modulus) / (codec.scale if out_scale is None else out_scale)


def round_half_away_array(values: np.ndarray) -> np.ndarray:
    """Vectorized half-away-from-zero rounding of the float products."""
    a = np.abs(values)
    floor = np.floor(a)
    out = floor + (a - floor >= 0.5)
    return np.copysign(out, values)


def encode_signed_ints(values: np.ndarray, modulus: Modulus) -> RingVector:
    """Lift integer-valued floats or ints (|v| < q/2) into the ring."""
    values = np.asarray(values)
    if modulus.native and np.all(np.abs(values) < min(modulus.half, 2.0**62)):
        return RingVector(values.astype(np.int64).astype(np.uint64), modulus)
    return RingVector([modulus.from_signed(int(v)) for v in values], modulus)


def encode_vector(values: Sequence[float], codec: FixedPointCodec) -> RingVector:
    """Encode a real vector at the codec scale."""
    scaled = np.asarray(values, dtype=float) * codec.scale
    if not np.all(np.isfinite(scaled)) or np.any(np.abs(scaled) * 2 >= codec.modulus.q):
        raise RangeError("vector does not fit the signed range at this scale")
    return encode_signed_ints(round_half_away_array(scaled), codec.modulus)


def decode_vector(v: RingVector, out_scale: int) -> np.ndarray:
    return np.array([x / out_scale for x in v.to_signed()], dtype=float)
