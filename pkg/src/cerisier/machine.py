"""Machine state and operational semantics.

The transition functions live in a kernel module (``_csemantics`` when the
compiled extension is available, ``_semantics`` otherwise) that mutates a
:class:`MachineState` in place.  The functions exported here wrap the kernel
so that callers see value semantics: ``step`` and ``run`` return new states
and never touch their argument unless ``inplace=True`` is passed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import IntEnum

from . import hashing
from .hashing import (  # noqa: F401  re-exported
    hash_concat,
    hash_word,
    int_of_hash,
    measure_identity,
    region_hash,
)
from .isa import (
    DEFAULT_ADDR_MAX,
    DEFAULT_OTYPE_MAX,
    NUM_REGS,
    REG_BY_NAME,
    REGS,
    Cap,
    Instr,
    Reg,
    SealRange,
    Sealed,
    Word,
    disassemble,
    encode,
    format_word,
    is_word,
    parse_word,
)


def _load_kernel():
    if os.environ.get("CERISIER_PURE"):
        from . import _semantics as k
        return k, "python"
    try:
        from . import _csemantics as k
        return k, "cython"
    except ImportError:
        from . import _semantics as k
        return k, "python"


kernel, BACKEND = _load_kernel()

MUTATIONS = kernel.MUTATIONS
MUT_SKIP_SWEEP_R2 = kernel.MUT_SKIP_SWEEP_R2
MUT_SKIP_CODE_INTS = kernel.MUT_SKIP_CODE_INTS
MUT_RESTRICT_WIDEN = kernel.MUT_RESTRICT_WIDEN
MUT_OTYPE_REUSE = kernel.MUT_OTYPE_REUSE
HASH_LIMIT_BITS = kernel.HASH_LIMIT_BITS


class ExecState(IntEnum):
    Running = 0
    Halted = 1
    Failed = 2


@dataclass(frozen=True)
class Config:
    addr_max: int = DEFAULT_ADDR_MAX
    otype_max: int = DEFAULT_OTYPE_MAX
    hash_mode: str = hashing.EXACT
    mutations: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.addr_max < 0 or self.otype_max < 0:
            raise ValueError("addr_max and otype_max must be non-negative")
        if self.hash_mode not in (hashing.EXACT, hashing.DIGEST):
            raise ValueError(f"unknown hash mode {self.hash_mode!r}")
        unknown = set(self.mutations) - set(MUTATIONS)
        if unknown:
            raise ValueError(f"unknown mutations: {sorted(unknown)}")
        object.__setattr__(self, "mutations", frozenset(self.mutations))


class MachineState:
    """Registers, memory, enclave table, EC and status.

    ``mem`` is sparse: absent addresses hold ``0``.  ``capaddrs`` indexes the
    addresses holding non-integer words so that sweeps skip plain data.
    ``version`` counts memory and table writes.  Always go through
    :meth:`write` (or the kernel) so both stay consistent.
    """

    __slots__ = ("reg", "mem", "capaddrs", "etbl", "ec", "status", "addr_max",
                 "otype_max", "hash_mode", "mutations", "version")

    def __init__(self, config: Config | None = None):
        config = config or Config()
        self.reg: list = [0] * NUM_REGS
        self.mem: dict = {}
        self.capaddrs: set = set()
        self.etbl: dict = {}
        self.ec = 0
        self.status = ExecState.Running.value
        self.addr_max = config.addr_max
        self.otype_max = config.otype_max
        self.hash_mode = config.hash_mode
        self.mutations = config.mutations
        self.version = 0

    @property
    def config(self) -> Config:
        return Config(self.addr_max, self.otype_max, self.hash_mode, self.mutations)

    def copy(self) -> "MachineState":
        s = MachineState.__new__(MachineState)
        s.reg = list(self.reg)
        s.mem = dict(self.mem)
        s.capaddrs = set(self.capaddrs)
        s.etbl = dict(self.etbl)
        for k in ("ec", "status", "addr_max", "otype_max", "hash_mode", "mutations", "version"):
            setattr(s, k, getattr(self, k))
        return s

    # -- access ------------------------------------------------------------

    @property
    def state(self) -> ExecState:
        return ExecState(self.status)

    def read(self, addr: int) -> Word:
        return self.mem.get(addr, 0)

    def write(self, addr: int, w: Word) -> None:
        if not 0 <= addr <= self.addr_max:
            raise ValueError(f"address {addr} outside [0, {self.addr_max}]")
        if not is_word(w):
            raise TypeError(f"not a machine word: {w!r}")
        kernel.write_mem(self, addr, w)

    def load_words(self, base: int, words) -> None:
        for i, w in enumerate(words):
            self.write(base + i, w)

    def __getitem__(self, r: Reg | str) -> Word:
        if isinstance(r, str):
            r = REG_BY_NAME[r]
        return self.reg[r.value]

    def __setitem__(self, r: Reg | str, w: Word) -> None:
        if isinstance(r, str):
            r = REG_BY_NAME[r]
        if not is_word(w):
            raise TypeError(f"not a machine word: {w!r}")
        self.reg[r.value] = w

    def words(self):
        """Every word held by a register or a non-zero memory cell."""
        yield from self.reg
        yield from self.mem.values()

    # -- comparison and text -------------------------------------------------

    def __eq__(self, other):
        if not isinstance(other, MachineState):
            return NotImplemented
        return snapshot(self) == snapshot(other)

    __hash__ = None

    def __repr__(self):
        return (f"<MachineState {self.state.name} ec={self.ec} pc={format_word(self.reg[0])}"
                f" cells={len(self.mem)}>")


# -- semantics wrappers ------------------------------------------------------------


def step(s: MachineState, inplace: bool = False) -> MachineState:
    """ExecSingle.  Identity on Halted/Failed states."""
    if not inplace:
        s = s.copy()
    return kernel.step(s)


def upd_pc(s: MachineState, inplace: bool = False) -> MachineState:
    if not inplace:
        s = s.copy()
    kernel._next(s)
    return s


def exec_instr(i: Instr, s: MachineState, inplace: bool = False) -> MachineState:
    """Execute ``i`` as if the pc had fetched it (no fetch checks)."""
    if not inplace:
        s = s.copy()
    if s.status != ExecState.Running:
        return s
    c = kernel.compile_word(encode(i))
    c[0](s, c)
    return s


def run(s: MachineState, fuel: int, *, inplace: bool = False, fast_forward: bool = True,
        monitor=None) -> tuple[MachineState, int]:
    """Iterate :func:`step` until the machine stops or ``fuel`` steps elapse."""
    if fuel < 0:
        raise ValueError("fuel must be non-negative")
    if not inplace:
        s = s.copy()
    n = kernel.run(s, fuel, fast_forward, monitor)
    return s, n


def trace(s: MachineState, fuel: int, inplace: bool = False):
    """Step like :func:`run`, yielding one trace line per executed step."""
    if not inplace:
        s = s.copy()
    n = 0
    while n < fuel and s.status == ExecState.Running:
        pc = s.reg[0]
        if type(pc) is Cap and type(s.mem.get(pc.a, 0)) is int:
            text = disassemble(s.mem.get(pc.a, 0))
        else:
            text = "-"
        kernel.step(s)
        n += 1
        yield f"step={n} pc={format_word(pc)} instr={text} status={ExecState(s.status).name}"


def overlap(w1: Word, w2: Word) -> bool:
    iv = kernel.cap_interval(w1)
    return iv is not None and kernel._hits(w2, iv[0], iv[1])


def sweep(s: MachineState, rs: Reg | str) -> bool:
    if isinstance(rs, str):
        rs = REG_BY_NAME[rs]
    return kernel.sweep(s, rs.value)


tidx_of_ot = kernel.tidx_of_ot


# -- snapshots ------------------------------------------------------------------


def snapshot(s: MachineState) -> str:
    lines = [f"cerisier-snapshot v1 addrmax={s.addr_max} otypemax={s.otype_max} "
             f"ec={s.ec} status={ExecState(s.status).name}"]
    for r in REGS:
        lines.append(f"reg {r.name} {format_word(s.reg[r.value])}")
    for a in sorted(s.mem):
        lines.append(f"mem {a} {format_word(s.mem[a])}")
    for t in sorted(s.etbl):
        lines.append(f"etbl {t} {s.etbl[t]}")
    return "\n".join(lines) + "\n"


def parse_snapshot(text: str, hash_mode: str = hashing.EXACT) -> MachineState:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("cerisier-snapshot v1 "):
        raise ValueError("missing snapshot header")
    hdr = dict(kv.split("=", 1) for kv in lines[0].split()[2:])
    s = MachineState(Config(int(hdr["addrmax"]), int(hdr["otypemax"]), hash_mode))
    s.ec = int(hdr["ec"])
    s.status = ExecState[hdr["status"]].value
    for ln in lines[1:]:
        kind, key, val = ln.split(None, 2)
        if kind == "reg":
            s[key] = parse_word(val)
        elif kind == "mem":
            s.write(int(key), parse_word(val))
        elif kind == "etbl":
            s.etbl[int(key)] = int(val)
        else:
            raise ValueError(f"bad snapshot line: {ln!r}")
    return s


__all__ = [
    "BACKEND", "Config", "ExecState", "MachineState", "MUTATIONS", "Cap", "SealRange", "Sealed",
    "step", "upd_pc", "exec_instr", "run", "trace", "overlap", "sweep", "tidx_of_ot",
    "snapshot", "parse_snapshot", "hash_word", "hash_concat", "region_hash", "int_of_hash",
    "measure_identity",
]
