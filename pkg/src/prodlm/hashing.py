"""64-bit FNV-1a hashing used for seeds and file/stream checksums.

Every derived seed in the pipeline flows through ``hash64`` so that
per-product generation is order-independent: hashing (global_seed, key)
gives each product its own stream regardless of generation order.
"""

from __future__ import annotations

from pathlib import Path

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes, state: int = FNV64_OFFSET) -> int:
    """FNV-1a over ``data``, continuing from ``state`` (chainable)."""
    h = state
    prime = FNV64_PRIME
    mask = _MASK64
    for byte in data:
        h = ((h ^ byte) * prime) & mask
    return h


def hash64(seed: int, *parts: str | int) -> int:
    """Derive a 64-bit sub-seed from a seed and a sequence of key parts.

    Integers are mixed as 8 little-endian bytes, strings as UTF-8 with a
    separator byte so ("ab", "c") and ("a", "bc") hash differently.
    """
    h = fnv1a64((seed & _MASK64).to_bytes(8, "little"))
    for part in parts:
        if isinstance(part, int):
            h = fnv1a64(b"\x01" + (part & _MASK64).to_bytes(8, "little"), h)
        else:
            h = fnv1a64(b"\x02" + part.encode("utf-8"), h)
    return h


def file_checksum(path: str | Path) -> int:
    """FNV-1a checksum of a file's raw bytes."""
    return fnv1a64(Path(path).read_bytes())
