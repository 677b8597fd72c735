"""Dynamic noisy multi-client functional encryption for inner products.

Clients register on demand and receive a 256-bit PRF key. Encrypting x under
label ``l`` adds the pad PRF_m(ek_i, l). A decryption key for label ``l``,
client subset S and per-client coefficients y_i carries

    z = sum_{i in S} <PRF_m(ek_i, l), y_i> - e  (mod q)

so that decrypting the ciphertexts of S under ``l`` gives
sum_i <x_i, y_i> + e over the integers, as long as that value stays inside
the signed range of Z_q.

Wire formats are little-endian:

* ciphertext: slot u32 | label length u16 | label | m u32 | m elements
* decryption key payload: z, ceil(bits/8) bytes
* decryption key with public metadata: label length u16 | label |
  |S| u32 | slots u32... | m u32 | |S|*m coefficients | z
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dp import NoiseSpec
from .errors import (AlreadyRegisteredError, AssemblyError, DimensionError,
                     LabelError, RegistrationError, SlotError, SubsetError)
from .prf import KEY_BYTES, PrfKey, as_label, prf_expand
from .ring import Modulus, RingVector, centered_lift, stacked_inner_product


@dataclass(frozen=True)
class PublicParams:
    m_max: int
    n_max: int
    modulus: Modulus
    security: int = 256


@dataclass
class DynoMasterSecret:
    params: PublicParams
    keys: dict[int, PrfKey] = field(default_factory=dict)


@dataclass(frozen=True)
class Ciphertext:
    slot: int
    label: bytes
    c: RingVector


@dataclass(frozen=True)
class DecryptionKey:
    label: bytes
    subset: tuple[int, ...]
    y: tuple[RingVector, ...]
    z: int

    @property
    def m(self) -> int:
        return len(self.y[0])


def dyno_setup(security: int, m_max: int, n_max: int,
               modulus: Modulus | None = None) -> tuple[PublicParams, DynoMasterSecret]:
    """Create public parameters and an empty master secret.

    Storage grows with registered clients only, so ``n_max`` may be huge.
    """
    if m_max < 1 or n_max < 1:
        raise ValueError("m_max and n_max must be positive")
    if security != 8 * KEY_BYTES:
        raise ValueError(f"only {8 * KEY_BYTES}-bit keys are supported")
    pp = PublicParams(m_max, n_max, modulus or Modulus(64), security)
    return pp, DynoMasterSecret(pp)


def dyno_ekeygen(msk: DynoMasterSecret, i: int) -> PrfKey:
    if not 1 <= i <= msk.params.n_max:
        raise SlotError(f"slot {i} outside [1, {msk.params.n_max}]")
    if i in msk.keys:
        raise AlreadyRegisteredError(f"slot {i} already registered")
    ek = PrfKey.generate()
    msk.keys[i] = ek
    return ek


def dyno_enc(ek: PrfKey, x: RingVector, label: bytes | str, i: int,
             pp: PublicParams) -> Ciphertext:
    m = len(x)
    if m > pp.m_max:
        raise DimensionError(f"plaintext length {m} exceeds m_max = {pp.m_max}")
    if not 1 <= i <= pp.n_max:
        raise SlotError(f"slot {i} outside [1, {pp.n_max}]")
    if x.modulus != pp.modulus:
        raise DimensionError("plaintext modulus differs from the scheme modulus")
    label = as_label(label)
    return Ciphertext(i, label, x + prf_expand(ek, label, m, pp.modulus))


def _coefficients(subset: Sequence[int], y) -> list[RingVector]:
    if isinstance(y, RingVector):
        return [y] * len(subset)
    if isinstance(y, Mapping):
        try:
            return [y[i] for i in subset]
        except KeyError as exc:
            raise DimensionError(f"no coefficients for slot {exc.args[0]}") from None
    y = list(y)
    if len(y) != len(subset):
        raise DimensionError(f"{len(y)} coefficient vectors for {len(subset)} slots")
    return y


def _check_subset(msk: DynoMasterSecret, subset: Iterable[int]) -> tuple[int, ...]:
    subset = tuple(sorted(set(subset)))
    if not subset:
        raise SubsetError("the client subset is empty")
    missing = [i for i in subset if i not in msk.keys]
    if missing:
        raise RegistrationError(f"slots {missing} are not registered")
    return subset


def dyno_keygen_many(msk: DynoMasterSecret, subset: Iterable[int], ys: Sequence,
                     label: bytes | str, noises: Sequence[NoiseSpec],
                     rng: np.random.Generator | None = None) -> list[DecryptionKey]:
    """Issue several keys for the same (label, subset), expanding each pad once.

    ``ys[k]`` is either one RingVector shared by all slots, a mapping
    slot -> RingVector, or a sequence aligned with the sorted subset.
    """
    if len(ys) != len(noises):
        raise ValueError("need one noise distribution per coefficient set")
    pp = msk.params
    subset = _check_subset(msk, subset)
    label = as_label(label)
    per_key = [_coefficients(subset, y) for y in ys]
    if not per_key:
        return []
    m = len(per_key[0][0])
    for coeffs in per_key:
        if any(len(v) != m for v in coeffs):
            raise DimensionError("coefficient vectors must share one length")
        if any(v.modulus != pp.modulus for v in coeffs):
            raise DimensionError("coefficient modulus differs from the scheme modulus")
    if m > pp.m_max:
        raise DimensionError(f"coefficient length {m} exceeds m_max = {pp.m_max}")
    pads = [prf_expand(msk.keys[i], label, m, pp.modulus) for i in subset]
    keys = []
    for coeffs, noise in zip(per_key, noises):
        e = noise.sample(pp.modulus, rng)
        z = (stacked_inner_product(pads, coeffs) - e) & pp.modulus.mask
        keys.append(DecryptionKey(label, subset, tuple(coeffs), z))
    return keys


def dyno_keygen(msk: DynoMasterSecret, subset: Iterable[int], y, label: bytes | str,
                noise: NoiseSpec, rng: np.random.Generator | None = None) -> DecryptionKey:
    return dyno_keygen_many(msk, subset, [y], label, [noise], rng)[0]


def dyno_dec(dk: DecryptionKey, cts: Iterable[Ciphertext]) -> int:
    """Return the centered lift of sum_{i in S} <c_i, y_i> - z."""
    cts = list(cts)
    wrong = [ct.slot for ct in cts if ct.label != dk.label]
    if wrong:
        raise LabelError(f"ciphertexts from slots {wrong} carry a different label")
    by_slot = {}
    for ct in cts:
        if ct.slot in by_slot:
            raise AssemblyError(f"two ciphertexts for slot {ct.slot}")
        by_slot[ct.slot] = ct
    if tuple(sorted(by_slot)) != dk.subset:
        raise AssemblyError(f"ciphertext slots {sorted(by_slot)} != key subset {list(dk.subset)}")
    rows = [by_slot[i].c for i in dk.subset]
    modulus = dk.y[0].modulus
    return centered_lift(stacked_inner_product(rows, dk.y) - dk.z, modulus)


# --- serialization -------------------------------------------------------------


def _pack_elements(v: RingVector) -> bytes:
    width = v.modulus.nbytes
    if v.modulus.native:
        raw = np.ascontiguousarray(v.elems, dtype="<u8").view(np.uint8).reshape(len(v), 8)
        return raw[:, :width].tobytes()
    return b"".join(int(e).to_bytes(width, "little") for e in v.elems)


def _unpack_elements(data: bytes, m: int, modulus: Modulus) -> RingVector:
    width = modulus.nbytes
    if len(data) != m * width:
        raise ValueError(f"expected {m * width} element bytes, got {len(data)}")
    if modulus.native:
        buf = np.zeros((m, 8), dtype=np.uint8)
        buf[:, :width] = np.frombuffer(data, dtype=np.uint8).reshape(m, width)
        return RingVector(buf.view("<u8").reshape(m), modulus)
    return RingVector([int.from_bytes(data[k * width:(k + 1) * width], "little")
                       for k in range(m)], modulus)


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    header = struct.pack("<IH", ct.slot, len(ct.label)) + ct.label + struct.pack("<I", len(ct.c))
    return header + _pack_elements(ct.c)


def ciphertext_header_size(ct: Ciphertext) -> int:
    return 4 + 2 + len(ct.label) + 4


def deserialize_ciphertext(data: bytes, modulus: Modulus) -> Ciphertext:
    slot, n_label = struct.unpack_from("<IH", data, 0)
    label = bytes(data[6:6 + n_label])
    (m,) = struct.unpack_from("<I", data, 6 + n_label)
    return Ciphertext(slot, label, _unpack_elements(data[10 + n_label:], m, modulus))


def serialize_key_payload(dk: DecryptionKey, modulus: Modulus) -> bytes:
    """The secret-dependent part of a key: z only."""
    return int(dk.z).to_bytes(modulus.nbytes, "little")


def serialize_decryption_key(dk: DecryptionKey) -> bytes:
    modulus = dk.y[0].modulus
    parts = [struct.pack("<H", len(dk.label)), dk.label,
             struct.pack(f"<I{len(dk.subset)}I", len(dk.subset), *dk.subset),
             struct.pack("<I", dk.m)]
    parts.extend(_pack_elements(v) for v in dk.y)
    parts.append(serialize_key_payload(dk, modulus))
    return b"".join(parts)


def deserialize_decryption_key(data: bytes, modulus: Modulus) -> DecryptionKey:
    (n_label,) = struct.unpack_from("<H", data, 0)
    pos = 2
    label = bytes(data[pos:pos + n_label])
    pos += n_label
    (k,) = struct.unpack_from("<I", data, pos)
    subset = struct.unpack_from(f"<{k}I", data, pos + 4)
    pos += 4 + 4 * k
    (m,) = struct.unpack_from("<I", data, pos)
    pos += 4
    width = modulus.nbytes
    ys = []
    for _ in range(k):
        ys.append(_unpack_elements(data[pos:pos + m * width], m, modulus))
        pos += m * width
    z = int.from_bytes(data[pos:pos + width], "little")
    if pos + width != len(data):
        raise ValueError("trailing bytes after decryption key")
    return DecryptionKey(label, tuple(subset), tuple(ys), z)


def serialize_prf_key(ek: PrfKey) -> bytes:
    return ek.raw
