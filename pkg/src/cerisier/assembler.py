"""Two-pass assembler for ``.casm`` sources.

Syntax, one item per line::

    label:                      ; labels may also prefix an item on the same line
    mov r1 5                    ; operands separated by spaces or commas
    lea r2 -3
    .word 42                    ; integer, label expression, or word literal (cap:RW:0:4:0)
    .cap RW:flag:flag_end:flag  ; fields may be label expressions
    .srange SU:0:2:0
    .zero 4                     ; four Int(0) words
    .identity soc_enclave       ; env["id:soc_enclave"]
    .preid enclave_a            ; env["preid:enclave_a"]
    .base enclave_a             ; env["base:enclave_a"]
    la r3 target                ; mov r3 pc ; lea r3 (target - here)
    assert r1 42 r9             ; flag check, see expand_assert

Operand expressions are an integer, a label, ``.`` (address of the current
item) or one ``+``/``-`` of two of those.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import (
    DEFAULT_ADDR_MAX,
    OP_BY_MNEMONIC,
    REG_BY_NAME,
    SIGNATURES,
    Cap,
    Instr,
    MemPerm,
    Op,
    SealPerm,
    SealRange,
    Word,
    decode_strict,
    disassemble,  # noqa: F401  re-exported
    encode,
    format_instr,
    format_word,
    parse_word,
)

RESERVED_PREFIX = "__"
SCRATCH_DIFF = "r31"
SCRATCH_ADDR = "r30"

_LABEL_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*\Z")
_INT_RE = re.compile(r"[+-]?(0x[0-9a-fA-F]+|\d+)\Z")


class AsmError(Exception):
    def __init__(self, msg: str, line: int | None = None, source: str = "<asm>"):
        self.msg = msg
        self.line = line
        self.source = source
        loc = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(loc + msg)


class Unresolved(AsmError):
    """A reference to an env key that is not (yet) defined."""

    def __init__(self, key: str, line: int, source: str):
        self.key = key
        super().__init__(f"unresolved symbol {key!r}", line, source)


@dataclass
class ProgramImage:
    base: int
    words: list
    symbols: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)  # address -> source line

    @property
    def end(self) -> int:
        return self.base + len(self.words)

    def sidecar(self) -> str:
        return "".join(f"sym {k} {v}\n" for k, v in sorted(self.symbols.items(), key=lambda kv: (kv[1], kv[0])))


@dataclass
class _Item:
    line: int
    kind: str  # "instr" | "data" | "dir"
    head: str
    args: list
    addr: int = 0
    size: int = 1


def _strip(line: str) -> str:
    return line.split(";", 1)[0].strip()


def _split_args(rest: str) -> list:
    return [a for a in re.split(r"[\s,]+", rest.strip()) if a]


def parse_int(text: str) -> int | None:
    if _INT_RE.match(text):
        return int(text, 0) if "0x" in text.lower() else int(text)
    return None


class _Ctx:
    def __init__(self, symbols, env, source, strict):
        self.symbols = symbols
        self.env = env
        self.source = source
        self.strict = strict
        self.missing: set = set()

    def term(self, t: str, here: int, line: int) -> int:
        z = parse_int(t)
        if z is not None:
            return z
        if t == ".":
            return here
        if t in self.symbols:
            return self.symbols[t]
        if t in self.env:
            return self.env[t]
        if "." in t and _LABEL_RE.match(t):
            # cross-unit reference, resolved by the loader
            return self.envval(t, line)
        if not _LABEL_RE.match(t):
            raise AsmError(f"bad operand {t!r}", line, self.source)
        raise AsmError(f"undefined label {t!r}", line, self.source)

    def expr(self, text: str, here: int, line: int) -> int:
        m = re.match(r"(.+?)([+-])(\w+|\.)\Z", text)
        if m and parse_int(text) is None:
            lhs = self.term(m.group(1), here, line)
            rhs = self.term(m.group(3), here, line)
            return lhs + rhs if m.group(2) == "+" else lhs - rhs
        return self.term(text, here, line)

    def envval(self, key: str, line: int) -> int:
        if key in self.env:
            return self.env[key]
        if self.strict:
            raise Unresolved(key, line, self.source)
        self.missing.add(key)
        return 0


def expand_assert(rs1: str, rs2: str, flag_reg: str, tag: str) -> list[str]:
    """Source lines for ``assert rs1 rs2 flag_reg``.

    Clobbers r30 and r31.  On mismatch it stores Int(1) through ``flag_reg``
    and halts; otherwise execution falls through.
    """
    fail = f"{RESERVED_PREFIX}assert{tag}_fail"
    ok = f"{RESERVED_PREFIX}assert{tag}_ok"
    return [
        f"sub {SCRATCH_DIFF} {rs1} {rs2}",
        f"la {SCRATCH_ADDR} {fail}",
        f"jnz {SCRATCH_ADDR} {SCRATCH_DIFF}",
        f"la {SCRATCH_ADDR} {ok}",
        f"jmp {SCRATCH_ADDR}",
        f"{fail}:",
        f"store {flag_reg} 1",
        "halt",
        f"{ok}:",
    ]


def _expand(src: str, source: str):
    """Yield ``(line_no, text)`` with macros expanded (except ``la``)."""
    n_assert = 0
    for no, raw in enumerate(src.splitlines(), 1):
        text = _strip(raw)
        if not text:
            continue
        label = None
        m = re.match(r"([A-Za-z_][A-Za-z0-9_.]*):\s*(.*)\Z", text)
        if m:
            label, text = m.group(1), m.group(2)
            if label.startswith(RESERVED_PREFIX):
                raise AsmError(f"labels starting with {RESERVED_PREFIX!r} are reserved", no, source)
            yield no, label + ":"
            if not text:
                continue
        parts = _split_args(text)
        if parts[0] == "assert":
            if len(parts) != 4:
                raise AsmError("assert takes 3 operands: value value flag_register", no, source)
            if parts[3] not in REG_BY_NAME:
                raise AsmError(f"assert flag operand must be a register, got {parts[3]!r}", no, source)
            for ln in expand_assert(parts[1], parts[2], parts[3], str(n_assert)):
                yield no, ln
            n_assert += 1
        else:
            yield no, text


_DATA_DIRS = {".word", ".cap", ".srange", ".identity", ".preid", ".base"}


def _parse(src: str, source: str) -> tuple[list, dict, dict]:
    items: list[_Item] = []
    pending: list = []  # (label, line)
    labels_at: dict = {}
    for no, text in _expand(src, source):
        if text.endswith(":") and " " not in text:
            pending.append((text[:-1], no))
            continue
        parts = _split_args(text)
        head, args = parts[0], parts[1:]
        if head.startswith("."):
            if head == ".zero":
                if len(args) != 1 or parse_int(args[0]) is None or int(args[0]) < 0:
                    raise AsmError(".zero takes one non-negative integer", no, source)
                it = _Item(no, "dir", head, args, size=int(args[0]))
            elif head in _DATA_DIRS:
                if len(args) != 1:
                    raise AsmError(f"{head} takes exactly one operand", no, source)
                it = _Item(no, "data", head, args)
            else:
                raise AsmError(f"unknown directive {head!r}", no, source)
        elif head == "la":
            if len(args) != 2:
                raise AsmError("la takes 2 operands: register label", no, source)
            it = _Item(no, "instr", head, args, size=2)
        elif head in OP_BY_MNEMONIC:
            sig = SIGNATURES[OP_BY_MNEMONIC[head]]
            if len(args) != len(sig):
                raise AsmError(f"{head} takes {len(sig)} operands, got {len(args)}", no, source)
            it = _Item(no, "instr", head, args)
        else:
            raise AsmError(f"unknown mnemonic {head!r}", no, source)
        for lab, lno in pending:
            labels_at.setdefault(id(it), []).append((lab, lno))
        pending = []
        items.append(it)
    return items, labels_at, {"trailing": pending}


def _operand(ctx: _Ctx, kind: str, text: str, here: int, line: int):
    if text in REG_BY_NAME:
        return REG_BY_NAME[text]
    if kind == "r":
        raise AsmError(f"expected a register, got {text!r}", line, ctx.source)
    return ctx.expr(text, here, line)


def _data_word(ctx: _Ctx, it: _Item, here: int) -> Word:
    arg = it.args[0]
    if it.head == ".word":
        if ":" in arg:
            try:
                return parse_word(arg)
            except ValueError as exc:
                raise AsmError(str(exc), it.line, ctx.source) from None
        return ctx.expr(arg, here, it.line)
    if it.head in (".identity", ".preid", ".base"):
        key = {".identity": "id:", ".preid": "preid:", ".base": "base:"}[it.head] + arg
        return ctx.envval(key, it.line)
    fields = arg.split(":")
    if len(fields) != 4:
        raise AsmError(f"{it.head} expects perm:b:e:a", it.line, ctx.source)
    vals = [ctx.expr(f, here, it.line) for f in fields[1:]]
    if it.head == ".cap":
        if fields[0] not in MemPerm.__members__:
            raise AsmError(f"bad permission {fields[0]!r}", it.line, ctx.source)
        return Cap(MemPerm[fields[0]], *vals)
    if fields[0] not in SealPerm.__members__:
        raise AsmError(f"bad seal permission {fields[0]!r}", it.line, ctx.source)
    return SealRange(SealPerm[fields[0]], *vals)


def assemble(src: str, base: int = 0, env: dict | None = None, *, addr_max: int = DEFAULT_ADDR_MAX,
             source: str = "<asm>", strict: bool = True) -> ProgramImage:
    """Assemble ``src`` at ``base``.

    ``env`` maps ``id:<unit>``, ``preid:<unit>``, ``base:<unit>`` and plain
    names to integers.  With ``strict=False`` missing env keys assemble as 0
    and are listed in ``image.missing``.
    """
    env = dict(env or {})
    items, labels_at, extra = _parse(src, source)
    symbols: dict = {}
    addr = base
    for it in items:
        it.addr = addr
        for lab, lno in labels_at.get(id(it), []):
            if lab in symbols:
                raise AsmError(f"duplicate label {lab!r}", lno, source)
            symbols[lab] = addr
        addr += it.size
    for lab, lno in extra["trailing"]:
        if lab in symbols:
            raise AsmError(f"duplicate label {lab!r}", lno, source)
        symbols[lab] = addr
    if base < 0 or addr - 1 > addr_max:
        raise AsmError(f"image [{base}, {addr}) exceeds address space [0, {addr_max}]",
                       items[-1].line if items else None, source)

    ctx = _Ctx(symbols, env, source, strict)
    words: list = []
    lines: dict = {}
    for it in items:
        here = it.addr
        if it.kind == "dir":
            words.extend([0] * it.size)
        elif it.kind == "data":
            words.append(_data_word(ctx, it, here))
        elif it.head == "la":
            rd, target = it.args
            if rd not in REG_BY_NAME:
                raise AsmError(f"expected a register, got {rd!r}", it.line, source)
            off = ctx.expr(target, here, it.line) - here
            words.append(encode(Instr(Op.MOV, (REG_BY_NAME[rd], REG_BY_NAME["pc"]))))
            words.append(encode(Instr(Op.LEA, (REG_BY_NAME[rd], off))))
        else:
            op = OP_BY_MNEMONIC[it.head]
            args = tuple(_operand(ctx, k, a, here, it.line) for k, a in zip(SIGNATURES[op], it.args))
            words.append(encode(Instr(op, args)))
        for a in range(here, here + it.size):
            lines[a] = it.line
    img = ProgramImage(base, words, {k: v for k, v in symbols.items()
                                     if not k.startswith(RESERVED_PREFIX)}, lines)
    img.missing = sorted(ctx.missing)
    return img


def parse_instr(text: str) -> Instr:
    """Parse a single instruction line (no labels, no macros)."""
    parts = _split_args(_strip(text))
    if not parts or parts[0] not in OP_BY_MNEMONIC:
        raise AsmError(f"not an instruction: {text!r}")
    op = OP_BY_MNEMONIC[parts[0]]
    sig = SIGNATURES[op]
    if len(parts) - 1 != len(sig):
        raise AsmError(f"{parts[0]} takes {len(sig)} operands")
    args = []
    for kind, a in zip(sig, parts[1:]):
        if a in REG_BY_NAME:
            args.append(REG_BY_NAME[a])
        elif kind == "a" and parse_int(a) is not None:
            args.append(parse_int(a))
        else:
            raise AsmError(f"bad operand {a!r}")
    return Instr(op, tuple(args))


def disassemble_image(img: ProgramImage) -> str:
    """Listing with addresses; data words that are not encodings print raw."""
    out = []
    by_addr = {}
    for k, v in img.symbols.items():
        by_addr.setdefault(v, []).append(k)
    for i, w in enumerate(img.words):
        a = img.base + i
        for lab in sorted(by_addr.get(a, [])):
            out.append(f"{lab}:")
        if type(w) is int and decode_strict(w) is not None:
            out.append(f"  {a:6d}  {format_instr(decode_strict(w))}")
        else:
            out.append(f"  {a:6d}  .word {format_word(w) if type(w) is not int else w}")
    return "\n".join(out) + "\n"
