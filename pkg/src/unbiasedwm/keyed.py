"""Context codes, keyed watermark-code derivation and context-code history.

A watermark code is a deterministic function of ``SHA-256(context ‖ key)``:
the digest keys a ChaCha20 keystream (zero nonce, counter 0) which is read
as little-endian 64-bit words.
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .reweight import (GumbelVector, Permutation, RedGreenPartition, Reweighter, UnitReal,
                       green_count)

KEY_BYTES = 128
MAX_WINDOW = 255
_TWO53 = 2.0 ** -53
_MASK64 = 2 ** 64 - 1


@dataclass(frozen=True)
class WatermarkKey:
    key_bytes: bytes

    def __post_init__(self):
        if len(self.key_bytes) != KEY_BYTES:
            raise ValueError(f"watermark key must be {KEY_BYTES} bytes, got {len(self.key_bytes)}")

    def __repr__(self):
        return f"WatermarkKey(fingerprint={self.fingerprint})"

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.key_bytes).digest()[:8].hex()

    @classmethod
    def generate(cls) -> "WatermarkKey":
        return cls(os.urandom(KEY_BYTES))

    @classmethod
    def from_seed(cls, seed) -> "WatermarkKey":
        """Reproducible key for experiments; not for deployment."""
        return cls(np.random.default_rng(seed).bytes(KEY_BYTES))

    def to_hex(self) -> str:
        return self.key_bytes.hex()

    @classmethod
    def from_hex(cls, text: str) -> "WatermarkKey":
        text = text.strip()
        if len(text) != 2 * KEY_BYTES:
            raise ValueError(f"key file must hold {2 * KEY_BYTES} hex characters")
        return cls(bytes.fromhex(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_hex() + "\n", encoding="ascii")

    @classmethod
    def load(cls, path) -> "WatermarkKey":
        return cls.from_hex(Path(path).read_text(encoding="ascii"))


@dataclass(frozen=True)
class ContextCode:
    code_bytes: bytes

    def hex(self) -> str:
        return self.code_bytes.hex()

    @classmethod
    def from_hex(cls, text: str) -> "ContextCode":
        return cls(bytes.fromhex(text))


def context_code(tokens: Sequence[int], m: int) -> ContextCode:
    """Serialise the last ``min(m, len(tokens))`` token ids.

    Layout: one count byte, then each id as 4-byte big-endian.
    """
    if m < 1:
        raise ValueError("context window must be >= 1")
    window = list(tokens[-m:]) if len(tokens) else []
    if len(window) > MAX_WINDOW:
        raise ValueError(f"context window longer than {MAX_WINDOW} tokens")
    out = bytearray([len(window)])
    for t in window:
        t = int(t)
        if not 0 <= t < 2 ** 32:
            raise ValueError(f"token id {t} does not fit in 32 bits")
        out += t.to_bytes(4, "big")
    return ContextCode(bytes(out))


class KeyStream:
    """ChaCha20 keystream read as uniform 64-bit words."""

    def __init__(self, seed32: bytes, chunk_words: int = 8):
        self._enc = Cipher(algorithms.ChaCha20(seed32, bytes(16)), mode=None).encryptor()
        self._buf = b""
        self._pos = 0
        self._chunk = chunk_words

    def read(self, n_bytes: int) -> bytes:
        if self._pos + n_bytes > len(self._buf):
            need = max(n_bytes, 8 * self._chunk)
            self._buf = self._buf[self._pos:] + self._enc.update(bytes(need))
            self._pos = 0
        out = self._buf[self._pos:self._pos + n_bytes]
        self._pos += n_bytes
        return out

    def next_u64(self) -> int:
        return struct.unpack("<Q", self.read(8))[0]

    def u64_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.read(8 * n), dtype="<u8")

    def uniform(self) -> float:
        """Uniform in [0, 1) from the high 53 bits."""
        return (self.next_u64() >> 11) * _TWO53

    def below(self, bound: int) -> int:
        """Unbiased integer in ``[0, bound)`` by multiply-and-reject."""
        zone = _MASK64 - (2 ** 64 - bound) % bound
        while True:
            v = self.next_u64() * bound
            if v & _MASK64 <= zone:
                return v >> 64

    def shuffle(self, n: int) -> np.ndarray:
        """Fisher-Yates over ``range(n)``, drawing ``below(i + 1)`` for i = n-1 .. 1.

        Words are unpacked in bulk but consumed strictly in stream order, so a
        rejected word shifts every later draw exactly as sequential calls would.
        """
        a = list(range(n))
        if n < 2:
            return np.array(a, dtype=np.int64)
        words = list(struct.unpack(f"<{n - 1}Q", self.read(8 * (n - 1))))
        k = 0
        for i in range(n - 1, 0, -1):
            bound = i + 1
            zone = _MASK64 - (2 ** 64 - bound) % bound
            while True:
                if k == len(words):
                    words.append(self.next_u64())
                v = words[k] * bound
                k += 1
                if v & _MASK64 <= zone:
                    break
            j = v >> 64
            a[i], a[j] = a[j], a[i]
        return np.array(a, dtype=np.int64)


def code_stream(c: ContextCode, k: WatermarkKey, chunk_words: int = 8) -> KeyStream:
    return KeyStream(hashlib.sha256(c.code_bytes + k.key_bytes).digest(), chunk_words)


def derive_code(c: ContextCode, k: WatermarkKey, rw: Reweighter, vocab_size: int):
    """Watermark code for reweighter ``rw`` at context ``c`` under key ``k``."""
    kind = rw.kind
    if kind == "delta":
        return UnitReal(code_stream(c, k).uniform())
    if kind == "gamma":
        return Permutation(code_stream(c, k, vocab_size + 8).shuffle(vocab_size))
    if kind == "gumbel_delta":
        words = code_stream(c, k).u64_array(vocab_size)
        u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53
        return GumbelVector(-np.log(-np.log(u)))
    order = code_stream(c, k, vocab_size + 8).shuffle(vocab_size)
    green = np.zeros(vocab_size, dtype=bool)
    green[order[: green_count(vocab_size, rw.gamma_frac)]] = True
    return RedGreenPartition(green, rw.gamma_frac)


class CodeHistory:
    """Set of context codes already used for reweighting under one key."""

    def __init__(self, codes: Iterable[ContextCode] = ()):
        self._seen: set[bytes] = set()
        self._order: list[bytes] = []
        for c in codes:
            self.insert(c)

    def __contains__(self, c: ContextCode) -> bool:
        return c.code_bytes in self._seen

    contains = __contains__

    def __len__(self):
        return len(self._seen)

    def insert(self, c: ContextCode) -> "CodeHistory":
        if c.code_bytes not in self._seen:
            self._seen.add(c.code_bytes)
            self._order.append(c.code_bytes)
        return self

    def copy(self) -> "CodeHistory":
        h = CodeHistory()
        h._seen = set(self._seen)
        h._order = list(self._order)
        return h

    @classmethod
    def load(cls, path) -> "CodeHistory":
        path = Path(path)
        h = cls()
        if path.exists():
            for line in path.read_text(encoding="ascii").splitlines():
                if line.strip():
                    h.insert(ContextCode.from_hex(line.strip()))
        return h

    def save(self, path, since: int = 0) -> None:
        """Append codes inserted after the first ``since`` entries."""
        with open(path, "a", encoding="ascii") as f:
            for b in self._order[since:]:
                f.write(b.hex() + "\n")
