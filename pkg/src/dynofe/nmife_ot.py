"""One-time-pad noisy multi-input inner-product encryption.

Each of the n slots holds a uniform pad of length m. A ciphertext is the
plaintext plus the pad; a decryption key for coefficients y carries
z = sum_i <pad_i, y_i> - e, so decryption yields sum_i <x_i, y_i> + e.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dp import NoiseSpec, PointMass, RoundedGaussian
from .errors import (AlreadyRegisteredError, AssemblyError, DimensionError,
                     RegistrationError, SlotError)
from .ring import (Modulus, RingVector, centered_lift, random_vector,
                   stacked_inner_product)

__all__ = ["NoiseSpec", "PointMass", "RoundedGaussian", "OtMasterSecret", "OtCiphertext",
           "OtDecryptionKey", "ot_setup", "ot_ekeygen", "ot_enc", "ot_keygen", "ot_dec"]


@dataclass
class OtMasterSecret:
    n: int
    m: int
    modulus: Modulus
    keys: dict[int, RingVector] = field(default_factory=dict)


@dataclass(frozen=True)
class OtCiphertext:
    slot: int
    c: RingVector


@dataclass(frozen=True)
class OtDecryptionKey:
    y: RingVector
    z: int


def ot_setup(n: int, m: int, modulus: Modulus) -> OtMasterSecret:
    """Empty master secret; slots are filled by :func:`ot_ekeygen`."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    return OtMasterSecret(n, m, modulus)


def ot_ekeygen(msk: OtMasterSecret, i: int, rng: np.random.Generator | None = None) -> RingVector:
    if not 1 <= i <= msk.n:
        raise SlotError(f"slot {i} outside [1, {msk.n}]")
    if i in msk.keys:
        raise AlreadyRegisteredError(f"slot {i} already registered")
    ek = random_vector(msk.m, msk.modulus, rng)
    msk.keys[i] = ek
    return ek


def ot_enc(ek: RingVector, x: RingVector, slot: int = 0) -> OtCiphertext:
    if len(x) != len(ek):
        raise DimensionError(f"plaintext length {len(x)} != key length {len(ek)}")
    return OtCiphertext(slot, x + ek)


def _split(y: RingVector, n: int, m: int) -> list[RingVector]:
    return [y[k * m:(k + 1) * m] for k in range(n)]


def ot_keygen(msk: OtMasterSecret, y: RingVector, noise: NoiseSpec,
              rng: np.random.Generator | None = None) -> OtDecryptionKey:
    missing = [i for i in range(1, msk.n + 1) if i not in msk.keys]
    if missing:
        raise RegistrationError(f"slots {missing} are not registered")
    if len(y) != msk.n * msk.m:
        raise DimensionError(f"coefficient length {len(y)} != n*m = {msk.n * msk.m}")
    e = noise.sample(msk.modulus, rng)
    pads = [msk.keys[i] for i in range(1, msk.n + 1)]
    z = (stacked_inner_product(pads, _split(y, msk.n, msk.m)) - e) & msk.modulus.mask
    return OtDecryptionKey(y, z)


def ot_dec(dk: OtDecryptionKey, cts: Sequence[OtCiphertext]) -> int:
    """Decrypt to the signed value sum_i <x_i, y_i> + e (centered lift)."""
    if not cts:
        raise AssemblyError("no ciphertexts supplied")
    ordered = sorted(cts, key=lambda ct: ct.slot)
    m = len(ordered[0].c)
    n = len(dk.y) // m
    if [ct.slot for ct in ordered] != list(range(1, n + 1)) or len(dk.y) != n * m:
        raise AssemblyError(
            f"need exactly one ciphertext per slot 1..{n}, got {[ct.slot for ct in cts]}")
    total = stacked_inner_product([ct.c for ct in ordered], _split(dk.y, n, m))
    return centered_lift(total - dk.z, dk.y.modulus)
