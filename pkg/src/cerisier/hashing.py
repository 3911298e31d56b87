"""Word hashing with exact injectivity.

A hash is a byte string made of framed atoms: each atom is a varint length
prefix followed by the canonical serialization of one word.  Concatenation of
hashes is byte concatenation, so ``region_hash(m1 + m2) ==
hash_concat(region_hash(m1), region_hash(m2))`` holds for every split.

Hashes live in machine registers as integers: ``int_of_hash(h)`` is the
big-endian value of ``b"\\x01" + h``.  The leading marker byte keeps leading
zero bytes of ``h`` significant.

``digest`` mode replaces each atom body by its SHA-256 digest; identities stay
small but injectivity degrades to collision resistance.
"""

from __future__ import annotations

import hashlib

from .isa import Cap, SealRange, Sealed, Word

EXACT = "exact"
DIGEST = "digest"


def uvarint(n: int) -> bytes:
    if n < 0:
        raise ValueError("uvarint of negative number")
    if n.bit_length() > 512:
        return _uvarint_big(n)
    out = bytearray()
    while True:
        group = n & 0x7F
        n >>= 7
        if n:
            out.append(group | 0x80)
        else:
            out.append(group)
            return bytes(out)


def _uvarint_big(n: int) -> bytes:
    # linear in the size of n: slice the binary expansion into 7-bit groups
    s = bin(n)[2:]
    s = "0" * (-len(s) % 7) + s
    groups = [int(s[i:i + 7], 2) for i in range(0, len(s), 7)]
    groups.reverse()
    out = bytearray(g | 0x80 for g in groups)
    out[-1] &= 0x7F
    return bytes(out)


def read_uvarint(buf: bytes, pos: int) -> tuple[int, int]:
    n = shift = 0
    while True:
        byte = buf[pos]
        pos += 1
        n |= (byte & 0x7F) << shift
        shift += 7
        if not byte & 0x80:
            return n, pos


def serialize_word(w: Word) -> bytes:
    """Canonical, prefix-free byte serialization of a word."""
    t = type(w)
    if t is int:
        return b"\x00" + (b"\x01" if w < 0 else b"\x00") + uvarint(abs(w))
    if t is Cap:
        return b"\x01" + bytes((w.p,)) + uvarint(w.b) + uvarint(w.e) + uvarint(w.a)
    if t is SealRange:
        return b"\x02" + bytes((w.sp,)) + uvarint(w.ob) + uvarint(w.oe) + uvarint(w.oa)
    if t is Sealed:
        return b"\x03" + uvarint(w.o) + serialize_word(w.sc)
    raise TypeError(f"not a machine word: {w!r}")


def hash_word(w: Word, mode: str = EXACT) -> bytes:
    body = serialize_word(w)
    if mode == DIGEST:
        body = hashlib.sha256(body).digest()
    return uvarint(len(body)) + body


def hash_concat(h1: bytes, h2: bytes) -> bytes:
    return h1 + h2


def region_hash(ws, mode: str = EXACT) -> bytes:
    return b"".join(hash_word(w, mode) for w in ws)


def split_atoms(h: bytes) -> list[bytes]:
    """Split a hash into its atom bodies.  Raises on malformed framing."""
    atoms = []
    pos = 0
    while pos < len(h):
        n, pos = read_uvarint(h, pos)
        if pos + n > len(h):
            raise ValueError("truncated atom")
        atoms.append(h[pos:pos + n])
        pos += n
    return atoms


def int_of_hash(h: bytes) -> int:
    return int.from_bytes(b"\x01" + h, "big")


def hash_of_int(z: int) -> bytes | None:
    """Inverse of :func:`int_of_hash`; ``None`` when ``z`` is not an embedding."""
    if type(z) is not int or z <= 0:
        return None
    bl = z.bit_length()
    if (bl - 1) % 8:
        return None
    return (z - (1 << (bl - 1))).to_bytes((bl - 1) // 8, "big")


def concat_ints(z1: int, z2: int) -> int | None:
    """``int_of_hash(hash_of_int(z1) + hash_of_int(z2))`` without the bytes."""
    if type(z1) is not int or type(z2) is not int or z1 <= 0 or z2 <= 0:
        return None
    bl1 = z1.bit_length()
    bl2 = z2.bit_length()
    if (bl1 - 1) % 8 or (bl2 - 1) % 8:
        return None
    low = bl2 - 1
    return (z1 << low) | (z2 - (1 << low))


def word_hash_int(w: Word, mode: str = EXACT) -> int:
    return int_of_hash(hash_word(w, mode))


def measure_identity(b: int, code, mode: str = EXACT) -> int:
    """Enclave identity: hash of the base address followed by the code words."""
    return int_of_hash(hash_concat(hash_word(b, mode), region_hash(code, mode)))


def pre_identity(code, mode: str = EXACT) -> int:
    """Hash of a code body alone, as an integer (mutual-attestation tables)."""
    return int_of_hash(region_hash(code, mode))
