"""System specs: layout, linking of identity constants, initial machine state.

Spec file lines (``;`` or ``#`` start a comment)::

    config addrmax=4096 otypemax=4096 [hash=exact|digest] [ec=N]
    region <name> <base> <perm> <file.casm|-> [role=client|adversary|enclave|data] [size=N]
    grant <reg> <cap-spec>        ; capability handed to the adversary
    entry <reg|pc> <cap-spec>     ; client-side initial register
    flag <addr>
    mem <addr> <word>             ; plant a word
    etbl <tidx> <identity>        ; preinstalled enclave-table entry

Addresses accept integers and symbolic forms ``name`` (region base),
``name.end`` and ``name.label``, optionally followed by ``+k``/``-k``.
A cap-spec is ``cap:<perm>:<b>:<e>:<a>`` with symbolic fields, the shorthand
``<perm>:<region>`` (whole region, cursor at base), or any word literal.

Identity env keys made available to every unit: ``base:X``, ``id:X``
(measured identity of enclave unit X, which must start with its data-capability
slot), ``preid:X`` (hash of X's code body up to its ``idtable`` label, slot
excluded) and ``X.label`` addresses.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

from .assembler import ProgramImage, assemble, parse_int
from .hashing import EXACT, measure_identity, pre_identity
from .isa import (
    DEFAULT_ADDR_MAX,
    DEFAULT_OTYPE_MAX,
    MEM_LEQ,
    REG_BY_NAME,
    Cap,
    MemPerm,
    SealRange,
    Sealed,
    Word,
    parse_word,
)
from .machine import Config, MachineState

ROLES = ("client", "adversary", "enclave", "data")


class SpecError(Exception):
    def __init__(self, msg: str, line: int | None = None, source: str = "<spec>"):
        self.line = line
        self.source = source
        loc = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(loc + msg)


class BuildError(Exception):
    """A system spec that parses but describes an ill-formed initial state."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


@dataclass
class Region:
    name: str
    base: int
    perm: MemPerm
    file: str | None
    role: str
    size: int | None = None
    image: ProgramImage | None = None
    line: int = 0

    @property
    def end(self) -> int:
        return self.base + (self.size or 0)

    def contains(self, a: int) -> bool:
        return self.base <= a < self.end


@dataclass
class SystemSpec:
    regions: list = field(default_factory=list)
    grants: list = field(default_factory=list)    # (reg, text, line)
    entries: list = field(default_factory=list)   # (reg, text, line)
    mems: list = field(default_factory=list)      # (addr text, word text, line)
    etbl: list = field(default_factory=list)      # (tidx, identity)
    flag: tuple | None = None                     # (text, line)
    addr_max: int = DEFAULT_ADDR_MAX
    otype_max: int = DEFAULT_OTYPE_MAX
    hash_mode: str = EXACT
    ec: int = 0
    source: str = "<spec>"
    basedir: str = "."
    sources: dict = field(default_factory=dict)  # region name -> casm text override


@dataclass
class SystemImage:
    regions: list
    registers: dict          # register index -> Word
    grant_regs: list         # register indices handed to the adversary
    flag_addr: int
    config: Config
    ec0: int
    env: dict
    spec: SystemSpec

    def region(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def by_role(self, role: str) -> list:
        return [r for r in self.regions if r.role == role]

    def region_of(self, a: int) -> Region | None:
        for r in self.regions:
            if r.contains(a):
                return r
        return None

    @property
    def adversary(self) -> Region:
        adv = self.by_role("adversary")
        if not adv:
            raise KeyError("spec has no adversary region")
        return adv[0]


def _kv(tokens, line, source):
    out = {}
    for t in tokens:
        if "=" not in t:
            raise SpecError(f"expected key=value, got {t!r}", line, source)
        k, v = t.split("=", 1)
        out[k] = v
    return out


def _int(text, line, source, what="integer"):
    z = parse_int(text)
    if z is None:
        raise SpecError(f"bad {what} {text!r}", line, source)
    return z


def parse_spec(text: str, source: str = "<spec>", basedir: str = ".",
               defaults: dict | None = None) -> SystemSpec:
    """Parse spec text.  ``defaults`` presets config keys before the text's own ``config`` lines."""
    spec = SystemSpec(source=source, basedir=basedir)
    for k, v in (defaults or {}).items():
        setattr(spec, {"addrmax": "addr_max", "otypemax": "otype_max", "hash": "hash_mode"}[k], v)
    names = set()
    for no, raw in enumerate(text.splitlines(), 1):
        line = re.split(r"[;#]", raw, maxsplit=1)[0].strip()
        if not line:
            continue
        tok = line.split()
        kw, args = tok[0], tok[1:]
        if kw == "config":
            kv = _kv(args, no, source)
            for k, v in kv.items():
                if k == "addrmax":
                    spec.addr_max = _int(v, no, source)
                elif k == "otypemax":
                    spec.otype_max = _int(v, no, source)
                elif k == "ec":
                    spec.ec = _int(v, no, source)
                elif k == "hash":
                    if v not in ("exact", "digest"):
                        raise SpecError(f"unknown hash mode {v!r}", no, source)
                    spec.hash_mode = v
                else:
                    raise SpecError(f"unknown config key {k!r}", no, source)
        elif kw == "region":
            if len(args) < 4:
                raise SpecError("region needs: name base perm file", no, source)
            name, base, perm, file = args[:4]
            kv = _kv(args[4:], no, source)
            if name in names or not re.match(r"[A-Za-z_]\w*\Z", name):
                raise SpecError(f"bad or duplicate region name {name!r}", no, source)
            names.add(name)
            if perm not in MemPerm.__members__:
                raise SpecError(f"bad permission {perm!r}", no, source)
            role = kv.pop("role", "data" if file == "-" else "client")
            if role not in ROLES:
                raise SpecError(f"bad role {role!r}", no, source)
            size = _int(kv.pop("size"), no, source, "size") if "size" in kv else None
            if kv:
                raise SpecError(f"unknown region options {sorted(kv)}", no, source)
            if file == "-" and size is None:
                raise SpecError("region without a source file needs size=N", no, source)
            r = Region(name, 0, MemPerm[perm], None if file == "-" else file, role, size, line=no)
            r._base_text = base
            r._declared = size
            spec.regions.append(r)
        elif kw in ("grant", "entry"):
            if len(args) != 2 or args[0] not in REG_BY_NAME:
                raise SpecError(f"{kw} needs: register cap-spec", no, source)
            if kw == "grant" and args[0] == "pc":
                raise SpecError("pc cannot be granted to the adversary", no, source)
            (spec.grants if kw == "grant" else spec.entries).append((args[0], args[1], no))
        elif kw == "flag":
            if len(args) != 1:
                raise SpecError("flag needs one address", no, source)
            spec.flag = (args[0], no)
        elif kw == "mem":
            if len(args) != 2:
                raise SpecError("mem needs: address word", no, source)
            spec.mems.append((args[0], args[1], no))
        elif kw == "etbl":
            if len(args) != 2:
                raise SpecError("etbl needs: index identity", no, source)
            spec.etbl.append((_int(args[0], no, source), _int(args[1], no, source)))
        else:
            raise SpecError(f"unknown directive {kw!r}", no, source)
    if spec.flag is None:
        raise SpecError("spec has no flag line", None, source)
    return spec


def load_spec(path: str, defaults: dict | None = None) -> SystemSpec:
    with open(path) as f:
        text = f.read()
    return parse_spec(text, source=path, basedir=os.path.dirname(os.path.abspath(path)),
                      defaults=defaults)


def parse_config(text: str, source: str = "<config>") -> dict:
    """Machine-configuration file: ``key=value`` pairs for addrmax, otypemax and hash."""
    out: dict = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = re.split(r"[;#]", raw, maxsplit=1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if tok[0] == "config":
            tok = tok[1:]
        for k, v in _kv(tok, no, source).items():
            if k in ("addrmax", "otypemax"):
                out[k] = _int(v, no, source)
                if out[k] < 0:
                    raise SpecError(f"{k} must be non-negative", no, source)
            elif k == "hash":
                if v not in ("exact", "digest"):
                    raise SpecError(f"unknown hash mode {v!r}", no, source)
                out[k] = v
            else:
                raise SpecError(f"unknown config key {k!r}", no, source)
    return out


# -- symbolic addresses -------------------------------------------------------------


class _Symbols:
    def __init__(self, spec: SystemSpec, env: dict):
        self.spec = spec
        self.env = env

    def term(self, t: str, line: int) -> int:
        z = parse_int(t)
        if z is not None:
            return z
        if t in self.env:
            return self.env[t]
        raise SpecError(f"unknown address {t!r}", line, self.spec.source)

    def addr(self, text: str, line: int) -> int:
        m = re.match(r"(.+?)([+-])(\d+)\Z", text)
        if m and parse_int(text) is None:
            v = self.term(m.group(1), line)
            k = int(m.group(3))
            return v + k if m.group(2) == "+" else v - k
        return self.term(text, line)

    def word(self, text: str, line: int) -> Word:
        parts = text.split(":")
        if len(parts) == 2 and parts[0] in MemPerm.__members__:
            r = self.term(parts[1], line)
            return Cap(MemPerm[parts[0]], r, self.term(parts[1] + ".end", line), r)
        if parts[0] == "cap" and len(parts) == 5 and parts[1] in MemPerm.__members__:
            b, e, a = (self.addr(p, line) for p in parts[2:])
            return Cap(MemPerm[parts[1]], b, e, a)
        try:
            return parse_word(text)
        except ValueError:
            pass
        z = parse_int(text)
        if z is not None:
            return z
        raise SpecError(f"bad word {text!r}", line, self.spec.source)


# -- build ---------------------------------------------------------------------------


def _read_unit(spec: SystemSpec, r: Region) -> str:
    if r.name in spec.sources:
        return spec.sources[r.name]
    path = r.file if os.path.isabs(r.file) else os.path.join(spec.basedir, r.file)
    try:
        with open(path) as f:
            return f.read()
    except OSError as exc:
        raise SpecError(f"cannot read {r.file}: {exc.strerror}", r.line, spec.source) from None


def enclave_identity(img: ProgramImage, mode: str = EXACT) -> int:
    return measure_identity(img.base, img.words[1:], mode)


def enclave_preid(img: ProgramImage, mode: str = EXACT) -> int:
    stop = img.symbols.get("idtable", img.end) - img.base
    return pre_identity(img.words[1:stop], mode)


def _layout(spec: SystemSpec, sources: dict, env: dict):
    """Assign bases and sizes; returns unit sources keyed by region name."""
    syms = _Symbols(spec, env)
    for r in spec.regions:
        r.base = syms.addr(r._base_text, r.line)
        if r.file is not None:
            img = assemble(sources[r.name], r.base, env, addr_max=spec.addr_max,
                           source=r.file, strict=False)
            r.size = r._declared if r._declared is not None else len(img.words)
            if r.size < len(img.words):
                raise SpecError(f"region {r.name}: {len(img.words)} words exceed size={r.size}",
                                r.line, spec.source)
            r.image = img
            for k, v in img.symbols.items():
                env[f"{r.name}.{k}"] = v
        env[r.name] = r.base
        env[f"{r.name}.end"] = r.end
        env[f"base:{r.name}"] = r.base


def _link(spec: SystemSpec, sources: dict, env: dict):
    """Assemble every unit until identity constants reach a fixpoint."""
    units = [r for r in spec.regions if r.file is not None]
    limit = len(units) + 2
    for _ in range(limit):
        changed = False
        for r in units:
            r.image = assemble(sources[r.name], r.base, env, addr_max=spec.addr_max,
                               source=r.file, strict=False)
        for r in units:
            if r.role != "enclave" or not r.image.words:
                continue
            for key, val in ((f"id:{r.name}", enclave_identity(r.image, spec.hash_mode)),
                             (f"preid:{r.name}", enclave_preid(r.image, spec.hash_mode))):
                if env.get(key) != val:
                    env[key] = val
                    changed = True
        if not changed:
            break
    else:
        raise SpecError("identity constants do not converge (cyclic .identity references?)",
                        None, spec.source)
    for r in units:
        # strict pass reports anything still unresolved with its line number
        r.image = assemble(sources[r.name], r.base, env, addr_max=spec.addr_max, source=r.file)


def build(spec: SystemSpec | str, *, check: bool = True, mutations=(),
          sources: dict | None = None) -> tuple[SystemImage, MachineState]:
    """Lay out, link and load ``spec``; returns the image and its initial state.

    ``sources`` overrides unit text per region name (used to splice generated
    adversaries).  With ``check`` the well-formedness violations raise
    :class:`BuildError`.
    """
    if isinstance(spec, str):
        spec = load_spec(spec)
    srcs = {r.name: _read_unit(spec, r) for r in spec.regions if r.file is not None}
    srcs.update(sources or {})
    env: dict = {}
    _layout(spec, srcs, env)
    _link(spec, srcs, env)

    config = Config(spec.addr_max, spec.otype_max, spec.hash_mode, frozenset(mutations))
    s = MachineState(config)
    s.ec = spec.ec
    violations = _region_violations(spec)
    if not violations:
        for r in spec.regions:
            if r.image is not None:
                s.load_words(r.base, r.image.words)
    syms = _Symbols(spec, env)
    for a, w, no in spec.mems:
        addr = syms.addr(a, no)
        if not 0 <= addr <= spec.addr_max:
            raise SpecError(f"address {addr} out of range", no, spec.source)
        s.write(addr, syms.word(w, no))
    for t, ident in spec.etbl:
        s.etbl[t] = ident
    registers = {}
    grant_regs = []
    for reg, text, no in spec.entries + spec.grants:
        w = syms.word(text, no)
        idx = REG_BY_NAME[reg].value
        s.reg[idx] = w
        registers[idx] = w
    for reg, _, _ in spec.grants:
        grant_regs.append(REG_BY_NAME[reg].value)
    flag_addr = syms.addr(*spec.flag)
    image = SystemImage(list(spec.regions), registers, grant_regs, flag_addr, config, spec.ec, env, spec)
    if check:
        violations = violations + check_wellformed(s, image)
        if violations:
            raise BuildError(violations)
    return image, s


def _region_violations(spec: SystemSpec) -> list[str]:
    out = []
    regs = sorted(spec.regions, key=lambda r: r.base)
    for r in regs:
        if r.base < 0 or r.end - 1 > spec.addr_max:
            out.append(f"region {r.name} [{r.base},{r.end}) outside address space")
    for a, b in zip(regs, regs[1:]):
        if b.base < a.end:
            out.append(f"regions {a.name} [{a.base},{a.end}) and {b.name} [{b.base},{b.end}) overlap")
    return out


def _cap_of(w):
    if type(w) is Cap:
        return w
    if type(w) is Sealed and type(w.sc) is Cap:
        return w.sc
    return None


def _iter_sealranges(w):
    if type(w) is SealRange:
        yield w
    elif type(w) is Sealed and type(w.sc) is SealRange:
        yield w.sc


def check_wellformed(s: MachineState, image: SystemImage) -> list[str]:
    """Violations of the good-initial-state conditions; empty when well-formed."""
    out = list(_region_violations(image.spec))
    ec = s.ec
    clients = image.by_role("client")
    fr = image.region_of(image.flag_addr)
    if fr is None or fr.role != "client":
        out.append(f"flag address {image.flag_addr} is not inside a client region")
    if type(s.reg[0]) is not Cap:
        out.append("pc does not hold a capability")
    if any(t < 0 or t >= ec for t in s.etbl):
        out.append(f"enclave table indices outside [0, {ec})")
    if 2 * ec > s.otype_max + 1:
        out.append(f"ec={ec} exceeds the otype space")
    where = [(f"register {n}", w) for n, w in zip(REG_BY_NAME, s.reg)]
    where += [(f"mem {a}", s.mem[a]) for a in sorted(s.mem)]
    for loc, w in where:
        for sr in _iter_sealranges(w):
            if sr.oe > 2 * ec:
                out.append(f"{loc}: seal range {sr!r} reaches unallocated otypes (2*ec={2 * ec})")
        if type(w) is Sealed and w.o >= 2 * ec:
            out.append(f"{loc}: sealed word with unallocated otype {w.o}")

    def touches_client(c: Cap) -> bool:
        return any(max(c.b, r.base) < min(c.e, r.end) for r in clients)

    for idx in image.grant_regs:
        c = _cap_of(s.reg[idx])
        name = list(REG_BY_NAME)[idx]
        if c is None:
            continue
        if c.b <= image.flag_addr < c.e:
            out.append(f"grant {name} covers the flag address {image.flag_addr}")
        elif touches_client(c):
            out.append(f"grant {name} covers client memory")
        r = image.region_of(c.b) if c.b < c.e else None
        if r is not None and c.e <= r.end and not MEM_LEQ[c.p][r.perm]:
            out.append(f"grant {name} exceeds region {r.name} permission {r.perm.name}")
    for a in sorted(s.capaddrs):
        r = image.region_of(a)
        if r is not None and r.role == "client":
            continue
        c = _cap_of(s.mem[a])
        if c is not None and c.p != MemPerm.E and touches_client(c):
            out.append(f"mem {a}: capability into client memory outside the client")
    return out
