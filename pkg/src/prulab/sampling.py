"""Randomness: seeded streams, truly random f/g/pi, Haar unitaries, keyed F/G/P.

The keyed primitives draw from a ChaCha20 keystream used in counter mode,
so bit ``b`` of a stream lives in 64-byte block ``b // 512`` and can be
fetched without generating the prefix.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numba as nb
import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

from .oracles import TABLE_CAP_BITS, BinaryPhaseFunction, InnerPermutation
from .qcore import DEFAULT_DENSE_CAP, CapExceeded

KEY_BYTES = 32
CIPHER = "chacha20"


@dataclass(frozen=True)
class SeededStream:
    """Reproducible random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= v < 1 << 64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "SeededStream":
        """Independent sub-stream; mixes ``index`` into the stream id."""
        h = hashlib.blake2b(struct.pack("<QQ", self.stream_id, index), digest_size=8).digest()
        return SeededStream(self.seed, int.from_bytes(h, "little"))

    @classmethod
    def from_hex(cls, seed_hex: str, stream_id: int = 0) -> "SeededStream":
        return cls(int(seed_hex, 16), stream_id)


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, SeededStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError("rng must be a SeededStream or numpy Generator")


def _check_table_cap(n: int, cap_bits: int = TABLE_CAP_BITS):
    if n > cap_bits:
        raise CapExceeded(f"table for n={n} exceeds cap 2^{cap_bits}")


def sample_binary_function(n: int, rng, cap_bits: int = TABLE_CAP_BITS) -> BinaryPhaseFunction:
    _check_table_cap(n, cap_bits)
    bits = _rng(rng).integers(0, 2, size=1 << n, dtype=np.int8)
    return BinaryPhaseFunction(n, 1 - 2 * bits)


def sample_inner_permutation(n: int, rng, cap_bits: int = TABLE_CAP_BITS) -> InnerPermutation:
    _check_table_cap(n, cap_bits)
    # Generator.permutation is a Fisher-Yates shuffle.
    fwd = _rng(rng).permutation(1 << n)
    return InnerPermutation(n, fwd)


def sample_haar_unitary(dim: int, rng, cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    if dim > cap:
        raise CapExceeded(f"Haar unitary of dim {dim} exceeds cap {cap}")
    g = _rng(rng)
    z = (g.normal(size=(dim, dim)) + 1j * g.normal(size=(dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def sample_haar_state(dim: int, rng) -> np.ndarray:
    """First column of a Haar unitary, i.e. a normalized complex Gaussian vector."""
    g = _rng(rng)
    v = g.normal(size=dim) + 1j * g.normal(size=dim)
    return v / np.linalg.norm(v)


# -- keyed primitives ---------------------------------------------------------


@dataclass(frozen=True)
class PrfKey:
    key: bytes

    def __post_init__(self):
        if len(self.key) != KEY_BYTES:
            raise ValueError(f"keys are {KEY_BYTES} bytes")

    @classmethod
    def from_hex(cls, h: str) -> "PrfKey":
        return cls(bytes.fromhex(h))

    def hex(self) -> str:
        return self.key.hex()


class PrpKey(PrfKey):
    pass


@dataclass(frozen=True)
class ConstructionKey:
    """The key triple ``(k_F, k_G, k_P)``."""

    f: PrfKey
    g: PrfKey
    p: PrpKey

    @classmethod
    def derive(cls, master: bytes) -> "ConstructionKey":
        def sub(label: bytes) -> bytes:
            return hashlib.blake2b(label, key=master, digest_size=KEY_BYTES).digest()
        return cls(PrfKey(sub(b"prulab/F")), PrfKey(sub(b"prulab/G")), PrpKey(sub(b"prulab/P")))

    @classmethod
    def from_seed(cls, seed: int, index: int) -> "ConstructionKey":
        master = hashlib.blake2b(struct.pack("<QQ", seed, index), digest_size=KEY_BYTES,
                                 person=b"prulab-keys").digest()
        return cls.derive(master)


_NONCE_PRF = b"prf-bits\0\0\0\0"
_NONCE_PRP_KEYS = b"prp-keys\0\0\0\0"
_NONCE_PRP_BITS = b"prp-bits\0\0\0\0"


def _keystream(key: bytes, nonce12: bytes, first_block: int, n_blocks: int) -> bytes:
    if first_block + n_blocks > 1 << 32:
        raise CapExceeded("keystream position beyond the 32-bit block counter")
    nonce = struct.pack("<I", first_block) + nonce12
    enc = Cipher(algorithms.ChaCha20(key, nonce), mode=None).encryptor()
    return enc.update(bytes(64 * n_blocks))


def keystream_bits(key: bytes, nonce12: bytes, start_bit: int, count: int) -> np.ndarray:
    """Bits ``[start_bit, start_bit + count)`` of the stream, as a uint8 0/1 array."""
    first_block = start_bit // 512
    last_block = (start_bit + count - 1) // 512
    raw = _keystream(key, nonce12, first_block, last_block - first_block + 1)
    bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
    off = start_bit - 512 * first_block
    return bits[off:off + count]


def keystream_bits_at(key: bytes, nonce12: bytes, positions: np.ndarray) -> np.ndarray:
    """Random-access gather of individual stream bits."""
    positions = np.asarray(positions, dtype=np.int64)
    out = np.empty(positions.shape, dtype=np.uint8)
    blocks = positions // 512
    for b in np.unique(blocks):
        sel = blocks == b
        raw = _keystream(key, nonce12, int(b), 1)
        bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")
        out[sel] = bits[positions[sel] - 512 * b]
    return out


def keyed_prf(key: PrfKey, n: int) -> BinaryPhaseFunction:
    """``F_k(x) = (-1)^{b_x}`` where ``b_x`` is keystream bit ``x``."""
    k = key.key

    def evaluate(xs):
        return (1 - 2 * keystream_bits_at(k, _NONCE_PRF, xs).astype(np.int8)).astype(np.int8)

    def materialize():
        return (1 - 2 * keystream_bits(k, _NONCE_PRF, 0, 1 << n).astype(np.int8)).astype(np.int8)

    return BinaryPhaseFunction(n, evaluate=evaluate, materialize=materialize, label=f"{CIPHER}-prf")


def swap_or_not_rounds(n: int) -> int:
    return 6 * n + 6


def _round_keys(k: bytes, n: int, rounds: int) -> np.ndarray:
    # One 64-bit word per round, truncated to n bits.
    raw = _keystream(k, _NONCE_PRP_KEYS, 0, (8 * rounds + 63) // 64)
    words = np.frombuffer(raw[:8 * rounds], dtype="<u8")
    return (words & np.uint64((1 << n) - 1)).astype(np.int64)


@nb.njit(cache=True)
def _swap_or_not(xs, rkeys, bits, forward):
    # bits[r, y] is the round-r function bit at point y
    out = xs.copy()
    R = rkeys.shape[0]
    for idx in range(out.shape[0]):
        x = out[idx]
        for step in range(R):
            r = step if forward else R - 1 - step
            xp = x ^ rkeys[r]
            xh = x if x > xp else xp
            if bits[r, xh]:
                x = xp
        out[idx] = x
    return out


ROUND_BITS_CACHE = 1 << 27


def keyed_prp(key: PrpKey, n: int) -> InnerPermutation:
    """Swap-or-not shuffle on ``{0,1}^n`` under XOR, ``6n + 6`` rounds.

    Round ``r`` pairs ``x`` with ``x ^ K_r`` and swaps the pair when the
    round-function bit at the pair's larger element is set. Each round is an
    involution, so the inverse runs the rounds backwards. Round-function bits
    for round ``r`` occupy stream bits ``[r 2^n, (r+1) 2^n)``.
    """
    if n < 1:
        raise ValueError("keyed_prp needs n >= 1")
    k = key.key
    rounds = swap_or_not_rounds(n)
    rkeys = _round_keys(k, n, rounds)
    N = 1 << n
    cache: dict = {}

    def all_bits():
        if "bits" not in cache:
            cache["bits"] = keystream_bits(k, _NONCE_PRP_BITS, 0, rounds * N).reshape(rounds, N)
        return cache["bits"]

    def run(xs, forward):
        xs = np.asarray(xs, dtype=np.int64)
        if rounds * N <= ROUND_BITS_CACHE:
            return _swap_or_not(xs, rkeys, all_bits(), forward)
        x = xs.copy()
        order = range(rounds) if forward else range(rounds - 1, -1, -1)
        for r in order:
            xp = x ^ rkeys[r]
            xh = np.maximum(x, xp)
            swap = keystream_bits_at(k, _NONCE_PRP_BITS, r * N + xh).astype(bool)
            x = np.where(swap, xp, x)
        return x

    def materialize():
        if rounds * N <= ROUND_BITS_CACHE:
            return run(np.arange(N, dtype=np.int64), True)
        x = np.arange(N, dtype=np.int64)
        for r in range(rounds):
            bits = keystream_bits(k, _NONCE_PRP_BITS, r * N, N).astype(bool)
            xp = x ^ rkeys[r]
            x = np.where(bits[np.maximum(x, xp)], xp, x)
        return x

    return InnerPermutation(
        n,
        evaluate=lambda xs: run(xs, True),
        evaluate_inverse=lambda xs: run(xs, False),
        materialize=materialize,
        label=f"{CIPHER}-swap-or-not",
    )


def construction_components(n: int, mode: str, seed: int, index: int):
    """``(f, g, pi)`` for instance ``index`` of a run, in either backing mode.

    ``mode="random"`` samples tables from seeded streams; ``mode="keyed"``
    derives a key triple from ``(seed, index)``.
    """
    if mode == "random":
        g = SeededStream(seed, 0).child(index).generator()
        return sample_binary_function(n, g), sample_binary_function(n, g), sample_inner_permutation(n, g)
    if mode == "keyed":
        ck = ConstructionKey.from_seed(seed, index)
        return keyed_prf(ck.f, n), keyed_prf(ck.g, n), keyed_prp(ck.p, n)
    raise ValueError(f"unknown backing mode {mode!r}")
