import itertools

from hypothesis import given
from hypothesis import strategies as st

from cerisier.hashing import (
    DIGEST, EXACT, concat_ints, hash_concat, hash_of_int, hash_word, int_of_hash,
    measure_identity, region_hash, split_atoms,
)
from cerisier.isa import Cap, MemPerm, SealPerm, SealRange, Sealed

from strategies import words


def small_universe():
    """Ints in [-8, 8], caps over addresses 0..4, seal ranges over otypes 0..3, some sealed words."""
    out = list(range(-8, 9))
    for p in MemPerm:
        for b, e, a in itertools.product(range(5), repeat=3):
            out.append(Cap(p, b, e, a))
    for sp in SealPerm:
        for b, e, a in itertools.product(range(4), repeat=3):
            out.append(SealRange(sp, b, e, a))
    out += [Sealed(o, Cap(MemPerm.RW, 0, 1, 0)) for o in range(4)]
    return out


def test_distinct_ints_hash_apart():
    assert hash_word(0) != hash_word(1)


def test_hash_word_injective_on_small_universe():
    universe = small_universe()
    assert len(universe) > 1000
    for mode in (EXACT, DIGEST):
        seen = {}
        for w in universe:
            h = hash_word(w, mode)
            assert h not in seen, (w, seen.get(h))
            seen[h] = w


def test_cap_and_int_with_same_payload_differ():
    c = Cap(MemPerm.O, 0, 0, 0)
    assert hash_word(c) != hash_word(0)


def test_empty_is_identity():
    h = hash_word(Cap(MemPerm.RX, 1, 9, 3))
    assert hash_concat(h, b"") == h == hash_concat(b"", h)
    assert region_hash([]) == b""


@given(words)
def test_singleton_region(w):
    assert region_hash([w]) == hash_word(w)


@given(st.lists(words, max_size=8), st.lists(words, max_size=8), st.lists(words, max_size=8))
def test_concat_associative(a, b, c):
    x, y, z = region_hash(a), region_hash(b), region_hash(c)
    assert hash_concat(hash_concat(x, y), z) == hash_concat(x, hash_concat(y, z))


@given(st.lists(words, max_size=12))
def test_split_distributivity_everywhere(ws):
    for k in range(len(ws) + 1):
        assert region_hash(ws) == hash_concat(region_hash(ws[:k]), region_hash(ws[k:]))


@given(st.lists(words, max_size=12))
def test_fold_equivalence(ws):
    acc = b""
    for w in ws:
        acc = hash_concat(acc, hash_word(w))
    assert region_hash(ws) == acc
    assert len(split_atoms(acc)) == len(ws)


@given(st.lists(words, max_size=6))
def test_int_of_hash_roundtrip(ws):
    h = region_hash(ws)
    assert hash_of_int(int_of_hash(h)) == h


def test_leading_zero_payloads_survive():
    for h in (b"", b"\x00", b"\x00\x00\x07"):
        assert hash_of_int(int_of_hash(h)) == h
    assert int_of_hash(b"\x00") != int_of_hash(b"")


@given(st.lists(words, max_size=5), st.lists(words, max_size=5))
def test_concat_ints_matches_bytes(a, b):
    za, zb = int_of_hash(region_hash(a)), int_of_hash(region_hash(b))
    assert concat_ints(za, zb) == int_of_hash(region_hash(a + b))


def test_concat_ints_rejects_non_images():
    assert concat_ints(-1, int_of_hash(b"")) is None
    assert concat_ints(int_of_hash(b""), 0) is None


def test_identity_depends_on_base_and_every_word():
    code = [1, 2, 3, 4]
    assert measure_identity(10, code) != measure_identity(11, code)
    base = measure_identity(10, code)
    for i in range(len(code)):
        flipped = list(code)
        flipped[i] += 1
        assert measure_identity(10, flipped) != base


def test_uvarint_large_values_match_the_plain_loop():
    import random
    from cerisier.hashing import read_uvarint, uvarint
    rng = random.Random(3)
    for _ in range(50):
        n = rng.getrandbits(rng.randint(500, 4000))
        buf = uvarint(n)
        assert read_uvarint(buf, 0) == (n, len(buf))
