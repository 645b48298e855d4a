"""Deterministic, splittable, index-addressable randomness.

Every random quantity in this package is a pure function of a
``SeedContext`` and an index (a finite subset of the positive integers).
Uniforms are produced by a keyed 64-bit mixing hash, so any member of an
i.i.d. family indexed by subsets can be materialized in O(1), in any
order, from any thread.  The hash output is treated as exactly i.i.d.
uniform for all statistical purposes; this is the usual counter-based
generator modeling assumption and is exercised by the statistical test
suite rather than proven.

Hash construction (all arithmetic mod 2**64, ``mix`` is the 64-bit
murmur3 finalizer):

* context prefix: ``h = mix(seed ^ SEED_TAG)``, absorb the number of
  label segments, then for each segment absorb its little-endian 8-byte
  words followed by its byte length;
* per subset: absorb ``len(elements) ^ COUNT_TAG``, absorb each element,
  and finish with ``mix(h ^ FINAL_TAG)``;
* a uniform is the top 53 bits scaled by 2**-53, so values lie in
  [0, 1) and are reproducible across platforms.

``absorb(h, w) = mix(h ^ w)``.  Golden values are frozen in the test
suite so the construction cannot drift silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_MASK = 0xFFFFFFFFFFFFFFFF
_SEED_TAG = 0x9E3779B97F4A7C15
_COUNT_TAG = 0xD1B54A32D192ED03
_FINAL_TAG = 0x2545F4914F6CDD1D
_C1 = 0xFF51AFD7ED558CCD
_C2 = 0xC4CEB9FE1A85EC53

_TWO53 = float(2**53)

_U64_C1 = np.uint64(_C1)
_U64_C2 = np.uint64(_C2)
_U64_33 = np.uint64(33)
_U64_11 = np.uint64(11)


def _mix(h: int) -> int:
    h ^= h >> 33
    h = (h * _C1) & _MASK
    h ^= h >> 33
    h = (h * _C2) & _MASK
    h ^= h >> 33
    return h


def _mix_vec(h):
    h ^= h >> _U64_33
    h *= _U64_C1
    h ^= h >> _U64_33
    h *= _U64_C2
    h ^= h >> _U64_33
    return h


@dataclass(frozen=True)
class SubsetKey:
    """A finite subset of the positive integers, canonically encoded.

    ``elements`` must be strictly increasing; the empty subset is valid.
    """

    elements: tuple[int, ...]

    def __init__(self, elements=()):
        elements = tuple(int(e) for e in elements)
        for a, b in zip(elements, elements[1:]):
            if a >= b:
                raise ValidationError(
                    f"subset elements must be strictly increasing, got {elements}"
                )
        if elements and elements[0] < 1:
            raise ValidationError(f"subset elements must be >= 1, got {elements}")
        object.__setattr__(self, "elements", elements)

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)


def encode_subset_key(key: SubsetKey) -> bytes:
    """Length-prefixed big-endian varint encoding, unique per subset."""
    out = bytearray(_varint(len(key.elements)))
    for e in key.elements:
        out += _varint(e)
    return bytes(out)


def decode_subset_key(data: bytes) -> SubsetKey:
    n, pos = _read_varint(data, 0)
    elems = []
    for _ in range(n):
        e, pos = _read_varint(data, pos)
        elems.append(e)
    if pos != len(data):
        raise ValidationError("trailing bytes in subset encoding")
    return SubsetKey(tuple(elems))


def _varint(n: int) -> bytes:
    # big-endian base-128, continuation bit on every byte but the last
    if n < 0:
        raise ValidationError("varint of negative integer")
    chunks = [n & 0x7F]
    n >>= 7
    while n:
        chunks.append((n & 0x7F) | 0x80)
        n >>= 7
    return bytes(reversed(chunks))


def _read_varint(data: bytes, pos: int):
    value = 0
    while True:
        if pos >= len(data):
            raise ValidationError("truncated varint")
        b = data[pos]
        pos += 1
        value = (value << 7) | (b & 0x7F)
        if not b & 0x80:
            return value, pos


_prefix_cache: dict = {}


@dataclass(frozen=True)
class SeedContext:
    """A master seed plus a chain of stream labels.

    Equal ``(master_seed, labels)`` produce identical uniforms at every
    index; distinct labels give statistically independent streams.
    """

    master_seed: int
    labels: tuple[bytes, ...] = ()

    def __init__(self, master_seed: int, labels=()):
        if isinstance(labels, (str, bytes)):
            labels = (labels,)
        object.__setattr__(self, "master_seed", int(master_seed) & _MASK)
        object.__setattr__(
            self,
            "labels",
            tuple(l.encode() if isinstance(l, str) else bytes(l) for l in labels),
        )

    @property
    def stream_label(self) -> bytes:
        return b"/".join(self.labels)

    def _prefix(self) -> int:
        key = (self.master_seed, self.labels)
        h = _prefix_cache.get(key)
        if h is None:
            h = _mix(self.master_seed ^ _SEED_TAG)
            h = _mix(h ^ len(self.labels))
            for seg in self.labels:
                padded = seg + b"\x00" * (-len(seg) % 8)
                for i in range(0, len(padded), 8):
                    h = _mix(h ^ int.from_bytes(padded[i : i + 8], "little"))
                h = _mix(h ^ len(seg))
            _prefix_cache[key] = h
        return h


def substream(ctx: SeedContext, label) -> SeedContext:
    """Child context; distinct labels yield disjoint uniform families."""
    if isinstance(label, str):
        label = label.encode()
    return SeedContext(ctx.master_seed, ctx.labels + (bytes(label),))


def uniform_at(ctx: SeedContext, key: SubsetKey) -> float:
    """The uniform attached to one subset index, in [0, 1)."""
    if not isinstance(key, SubsetKey):
        key = SubsetKey(key)
    h = _mix(ctx._prefix() ^ len(key.elements) ^ _COUNT_TAG)
    for e in key.elements:
        h = _mix(h ^ e)
    return (_mix(h ^ _FINAL_TAG) >> 11) / _TWO53


def subset_uniforms(ctx: SeedContext, elements: np.ndarray) -> np.ndarray:
    """Uniforms for a batch of same-size subsets.

    ``elements`` has shape (batch, j), rows strictly increasing; j may be
    0 (shape (batch, 0)) for the empty subset.
    """
    elements = np.asarray(elements, dtype=np.uint64)
    if elements.ndim != 2:
        raise ValidationError("expected a (batch, j) array of subset elements")
    batch, j = elements.shape
    with np.errstate(over="ignore"):
        h0 = np.uint64(_mix(ctx._prefix() ^ j ^ _COUNT_TAG))
        h = np.full(batch, h0, dtype=np.uint64)
        for t in range(j):
            h = _mix_vec(h ^ elements[:, t])
        h = _mix_vec(h ^ np.uint64(_FINAL_TAG))
    return (h >> _U64_11).astype(np.float64) / _TWO53


def index_uniforms(ctx: SeedContext, count_or_indices) -> np.ndarray:
    """Uniforms at singleton subsets {1}, {2}, ... or at given indices."""
    if np.isscalar(count_or_indices):
        idx = np.arange(1, int(count_or_indices) + 1, dtype=np.uint64)
    else:
        idx = np.asarray(count_or_indices, dtype=np.uint64)
    return subset_uniforms(ctx, idx.reshape(-1, 1))
