"""Machine words, permissions, registers and the instruction set.

Words are plain Python values so the interpreter loop stays cheap:

* ``int`` for integers (unbounded),
* :class:`Cap` for memory capabilities,
* :class:`SealRange` for sealing capabilities,
* :class:`Sealed` for sealed words.

Instructions are :class:`Instr` values with a bijective integer encoding,
see ``docs/ISA.md`` for the bit layout.
"""

from __future__ import annotations

import re
from enum import Enum, IntEnum
from typing import NamedTuple, Union

DEFAULT_ADDR_MAX = 1 << 20
DEFAULT_OTYPE_MAX = 1 << 20


class MemPerm(IntEnum):
    O = 0
    E = 1
    RO = 2
    RX = 3
    RW = 4
    RWX = 5


class SealPerm(IntEnum):
    O = 0
    S = 1
    U = 2
    SU = 3


MEM_PERMS = tuple(MemPerm)
SEAL_PERMS = tuple(SealPerm)

# Generating order of the flows-to lattices; the full relation is the
# reflexive-transitive closure.
_MEM_EDGES = [
    (MemPerm.O, MemPerm.E),
    (MemPerm.O, MemPerm.RO),
    (MemPerm.E, MemPerm.RX),
    (MemPerm.RO, MemPerm.RX),
    (MemPerm.RO, MemPerm.RW),
    (MemPerm.RX, MemPerm.RWX),
    (MemPerm.RW, MemPerm.RWX),
]
_SEAL_EDGES = [
    (SealPerm.O, SealPerm.S),
    (SealPerm.O, SealPerm.U),
    (SealPerm.S, SealPerm.SU),
    (SealPerm.U, SealPerm.SU),
]


def _closure(n: int, edges) -> tuple[tuple[bool, ...], ...]:
    leq = [[i == j for j in range(n)] for i in range(n)]
    for a, b in edges:
        leq[a][b] = True
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if leq[i][k] and leq[k][j]:
                    leq[i][j] = True
    return tuple(tuple(row) for row in leq)


MEM_LEQ = _closure(len(MemPerm), _MEM_EDGES)
SEAL_LEQ = _closure(len(SealPerm), _SEAL_EDGES)


def perm_flows(p: int, q: int) -> bool:
    """True iff memory permission ``p`` is below or equal to ``q``."""
    return MEM_LEQ[p][q]


def sperm_flows(p: int, q: int) -> bool:
    return SEAL_LEQ[p][q]


READ_PERMS = frozenset({MemPerm.RO, MemPerm.RX, MemPerm.RW, MemPerm.RWX})
WRITE_PERMS = frozenset({MemPerm.RW, MemPerm.RWX})
EXEC_PERMS = frozenset({MemPerm.RX, MemPerm.RWX})


class Cap(NamedTuple):
    """Memory capability over the half-open interval ``[b, e)``."""

    p: MemPerm
    b: int
    e: int
    a: int

    # Tuple equality would make Cap(RO, ...) equal SealRange(U, ...).
    def __eq__(self, other):
        return type(other) is Cap and tuple.__eq__(self, other)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return tuple.__hash__(self) ^ 0x5A17C0DE

    def __repr__(self):
        return f"Cap({self.p.name},{self.b},{self.e},{self.a})"


class SealRange(NamedTuple):
    """Sealing capability over otypes ``[ob, oe)`` with cursor ``oa``."""

    sp: SealPerm
    ob: int
    oe: int
    oa: int

    def __eq__(self, other):
        return type(other) is SealRange and tuple.__eq__(self, other)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return tuple.__hash__(self) ^ 0x0C0FFEE5

    def __repr__(self):
        return f"SealRange({self.sp.name},{self.ob},{self.oe},{self.oa})"


class Sealed(NamedTuple):
    o: int
    sc: Union[Cap, SealRange]

    def __eq__(self, other):
        return type(other) is Sealed and tuple.__eq__(self, other)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __hash__(self):
        return tuple.__hash__(self) ^ 0x7E57AB1E

    def __repr__(self):
        return f"Sealed({self.o},{self.sc!r})"


Sealable = Union[Cap, SealRange]
Word = Union[int, Cap, SealRange, Sealed]

# getwtype kind codes
KIND_INT, KIND_CAP, KIND_SRANGE, KIND_SEALED = 0, 1, 2, 3


def word_kind(w: Word) -> int:
    t = type(w)
    if t is int:
        return KIND_INT
    if t is Cap:
        return KIND_CAP
    if t is SealRange:
        return KIND_SRANGE
    if t is Sealed:
        return KIND_SEALED
    raise TypeError(f"not a machine word: {w!r}")


def is_word(w) -> bool:
    t = type(w)
    if t is int:
        return True
    if t is Cap:
        return type(w.p) is MemPerm and all(type(x) is int for x in w[1:])
    if t is SealRange:
        return type(w.sp) is SealPerm and all(type(x) is int for x in w[1:])
    if t is Sealed:
        return type(w.o) is int and type(w.sc) in (Cap, SealRange) and is_word(w.sc)
    return False


Reg = Enum("Reg", [("pc", 0)] + [(f"r{i}", i + 1) for i in range(32)])
Reg.__doc__ = "Register names: pc and r0..r31. ``value`` is the register-file index."
REGS = tuple(Reg)
NUM_REGS = len(REGS)
REG_BY_NAME = {r.name: r for r in REGS}


class Op(IntEnum):
    JMP = 1
    JNZ = 2
    FAIL = 3
    HALT = 4
    MOV = 5
    ADD = 6
    SUB = 7
    LT = 8
    LEA = 9
    LOAD = 10
    STORE = 11
    RESTRICT = 12
    SUBSEG = 13
    GETP = 14
    GETB = 15
    GETE = 16
    GETA = 17
    CSEAL = 18
    CUNSEAL = 19
    GETWTYPE = 20
    GETOTYPE = 21
    ISUNIQUE = 22
    EINIT = 23
    EDEINIT = 24
    ESTOREID = 25
    HASH = 26
    HASHCONCAT = 27


# Operand signature per opcode: "r" is a register, "a" an InstrArg
# (immediate integer or register).
SIGNATURES: dict[Op, str] = {
    Op.JMP: "r",
    Op.JNZ: "rr",
    Op.FAIL: "",
    Op.HALT: "",
    Op.MOV: "ra",
    Op.ADD: "raa",
    Op.SUB: "raa",
    Op.LT: "raa",
    Op.LEA: "ra",
    Op.LOAD: "rr",
    Op.STORE: "ra",
    Op.RESTRICT: "ra",
    Op.SUBSEG: "raa",
    Op.GETP: "rr",
    Op.GETB: "rr",
    Op.GETE: "rr",
    Op.GETA: "rr",
    Op.CSEAL: "rrr",
    Op.CUNSEAL: "rrr",
    Op.GETWTYPE: "rr",
    Op.GETOTYPE: "rr",
    Op.ISUNIQUE: "rr",
    Op.EINIT: "rr",
    Op.EDEINIT: "r",
    Op.ESTOREID: "rr",
    Op.HASH: "rr",
    Op.HASHCONCAT: "raa",
}
MNEMONICS = {op: op.name.lower() for op in Op}
OP_BY_MNEMONIC = {v: k for k, v in MNEMONICS.items()}

InstrArg = Union[int, "Reg"]


class Instr(NamedTuple):
    op: Op
    args: tuple = ()

    def __str__(self):
        return format_instr(self)


def instr(mnemonic: str, *args) -> Instr:
    """Build an instruction; string operands name registers.

    >>> instr("mov", "r1", 5)
    Instr(op=<Op.MOV: 5>, args=(<Reg.r1: 2>, 5))
    """
    op = OP_BY_MNEMONIC[mnemonic]
    conv = tuple(REG_BY_NAME[a] if isinstance(a, str) else a for a in args)
    i = Instr(op, conv)
    if not well_formed(i):
        raise ValueError(f"ill-formed instruction: {mnemonic} {args}")
    return i


def well_formed(i: Instr) -> bool:
    if type(i) is not Instr or i.op not in SIGNATURES:
        return False
    sig = SIGNATURES[i.op]
    if len(sig) != len(i.args):
        return False
    for kind, a in zip(sig, i.args):
        if isinstance(a, Reg):
            continue
        if kind == "r" or type(a) is not int:
            return False
    return True


FAIL = Instr(Op.FAIL, ())
HALT = Instr(Op.HALT, ())

# --------------------------------------------------------------------------
# Encoding
#
#   bits [0, 8)   opcode
#   then per operand, low to high:
#     register        6 bits (0 = pc, 1..32 = r0..r31)
#     InstrArg        1 tag bit; tag 0: 6-bit register;
#                     tag 1: sign bit, then LEB128-style 8-bit groups
#                     (7 value bits + continuation bit) of the magnitude
#   every bit above the last operand is zero.

OPCODE_BITS = 8
REG_BITS = 6
_REG_MASK = (1 << REG_BITS) - 1


def encode(i: Instr) -> int:
    z = int(i.op)
    pos = OPCODE_BITS
    for kind, a in zip(SIGNATURES[i.op], i.args):
        if kind == "a":
            if isinstance(a, Reg):
                pos += 1
            else:
                z |= 1 << pos
                pos += 1
                if a < 0:
                    z |= 1 << pos
                pos += 1
                mag = -a if a < 0 else a
                while True:
                    group = mag & 0x7F
                    mag >>= 7
                    if mag:
                        z |= (group | 0x80) << pos
                        pos += 8
                    else:
                        z |= group << pos
                        pos += 8
                        break
                continue
        z |= a.value << pos
        pos += REG_BITS
    return z


def decode_strict(z: int) -> Instr | None:
    """Inverse of :func:`encode`; ``None`` for integers outside its image."""
    if type(z) is not int:
        if not isinstance(z, int) or isinstance(z, bool):
            return None
        z = int(z)
    if z < 0:
        return None
    try:
        op = Op(z & 0xFF)
    except ValueError:
        return None
    pos = OPCODE_BITS
    args = []
    for kind in SIGNATURES[op]:
        if kind == "a":
            tag = (z >> pos) & 1
            pos += 1
            if tag:
                neg = (z >> pos) & 1
                pos += 1
                mag = 0
                shift = 0
                while True:
                    group = (z >> pos) & 0xFF
                    pos += 8
                    mag |= (group & 0x7F) << shift
                    shift += 7
                    if not group & 0x80:
                        # canonical: no trailing zero group after the first
                        if group == 0 and shift > 7:
                            return None
                        break
                if neg and mag == 0:
                    return None
                args.append(-mag if neg else mag)
                continue
        idx = (z >> pos) & _REG_MASK
        pos += REG_BITS
        if idx >= NUM_REGS:
            return None
        args.append(REGS[idx])
    if z >> pos:
        return None
    return Instr(op, tuple(args))


def decode(z: int) -> Instr:
    """Total decoding: anything that is not an encoding decodes to ``fail``."""
    i = decode_strict(z)
    return FAIL if i is None else i


# --------------------------------------------------------------------------
# Text syntax


def format_instr(i: Instr) -> str:
    parts = [MNEMONICS[i.op]]
    for a in i.args:
        parts.append(a.name if isinstance(a, Reg) else str(a))
    return " ".join(parts)


def disassemble(z: int) -> str:
    i = decode_strict(z)
    if i is None:
        return f"fail ; raw={z}"
    return format_instr(i)


def format_word(w: Word) -> str:
    t = type(w)
    if t is int:
        return f"int:{w}"
    if t is Cap:
        return f"cap:{w.p.name}:{w.b}:{w.e}:{w.a}"
    if t is SealRange:
        return f"srange:{w.sp.name}:{w.ob}:{w.oe}:{w.oa}"
    if t is Sealed:
        return f"sealed:{w.o}:{format_word(w.sc)}"
    raise TypeError(f"not a machine word: {w!r}")


_NUM = r"-?\d+"
_WORD_RE = {
    "int": re.compile(rf"int:({_NUM})\Z"),
    "cap": re.compile(r"cap:(O|E|RO|RX|RW|RWX):(\d+):(\d+):(\d+)\Z"),
    "srange": re.compile(r"srange:(O|S|U|SU):(\d+):(\d+):(\d+)\Z"),
}


def parse_word(text: str) -> Word:
    """Parse the textual word syntax used by snapshots and system specs."""
    text = text.strip()
    if text.startswith("sealed:"):
        o, _, rest = text[len("sealed:"):].partition(":")
        if not o.isdigit():
            raise ValueError(f"bad sealed word: {text!r}")
        sc = parse_word(rest)
        if type(sc) not in (Cap, SealRange):
            raise ValueError(f"sealed payload must be sealable: {text!r}")
        return Sealed(int(o), sc)
    kind = text.split(":", 1)[0]
    rx = _WORD_RE.get(kind)
    m = rx.match(text) if rx else None
    if m is None:
        raise ValueError(f"bad word syntax: {text!r}")
    if kind == "int":
        return int(m.group(1))
    b, e, a = (int(x) for x in m.group(2, 3, 4))
    if kind == "cap":
        return Cap(MemPerm[m.group(1)], b, e, a)
    return SealRange(SealPerm[m.group(1)], b, e, a)
