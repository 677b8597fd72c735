"""AES-256 counter-mode expansion of (key, label) into a vector over Z_q.

Element j is the AES-256 encryption of the block ``digest XOR j`` where
``digest`` is the first 16 bytes of SHA-256(label) and j is a 128-bit
big-endian counter. The first ceil(bits/8) bytes of each output block are read
big-endian and masked to ``bits`` bits. Because every element depends on its
own counter only, a shorter expansion is an exact prefix of a longer one.
"""

from __future__ import annotations

import hashlib
import secrets
from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import DimensionError
from .ring import Modulus, RingVector

KEY_BYTES = 32
MAX_LABEL_BYTES = (1 << 16) - 1


@dataclass(frozen=True)
class PrfKey:
    """A 256-bit secret key."""

    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, (bytes, bytearray)) or len(self.raw) != KEY_BYTES:
            raise ValueError(f"PRF keys are exactly {KEY_BYTES} bytes")
        object.__setattr__(self, "raw", bytes(self.raw))

    @classmethod
    def generate(cls) -> "PrfKey":
        return cls(secrets.token_bytes(KEY_BYTES))

    def __repr__(self) -> str:
        return "PrfKey(<secret>)"


def as_label(label: bytes | str | None) -> bytes:
    """Normalize a label; ``None`` stands for the empty label."""
    if label is None:
        return b""
    if isinstance(label, str):
        label = label.encode("utf-8")
    label = bytes(label)
    if len(label) > MAX_LABEL_BYTES:
        raise ValueError(f"labels are limited to {MAX_LABEL_BYTES} bytes")
    return label


def label_digest(label: bytes | str) -> bytes:
    return hashlib.sha256(as_label(label)).digest()[:16]


def _counter_blocks(digest: bytes, m: int) -> bytes:
    hi, lo = np.frombuffer(digest, dtype=">u8")
    blocks = np.empty((m, 2), dtype=">u8")
    blocks[:, 0] = hi
    blocks[:, 1] = np.uint64(lo) ^ np.arange(m, dtype=np.uint64)
    return blocks.tobytes()


def prf_expand(key: PrfKey, label: bytes | str, m: int, modulus: Modulus) -> RingVector:
    """Expand ``key`` and ``label`` into m pseudorandom elements of Z_q."""
    if m < 1:
        raise DimensionError("PRF output length must be at least 1")
    encryptor = Cipher(algorithms.AES(key.raw), modes.ECB()).encryptor()
    stream = encryptor.update(_counter_blocks(label_digest(label), m)) + encryptor.finalize()
    width = modulus.nbytes
    if modulus.native:
        words = np.frombuffer(stream, dtype=">u8").reshape(m, 2)[:, 0].astype(np.uint64)
        if width < 8:
            words = words >> np.uint64(64 - 8 * width)
        return RingVector(words, modulus)
    return RingVector(
        [int.from_bytes(stream[16 * j:16 * j + width], "big") for j in range(m)], modulus
    )
