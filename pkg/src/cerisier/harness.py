"""Adversarial fuzzing, dynamic invariant monitors and differential oracles."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .assembler import assemble
from .isa import (
    MEM_LEQ,
    NUM_REGS,
    REGS,
    SEAL_LEQ,
    SIGNATURES,
    Cap,
    Instr,
    REG_BY_NAME,
    MemPerm,
    Op,
    SealPerm,
    SealRange,
    Sealed,
    encode,
    format_word,
)
from .loader import SystemImage, build
from .machine import ExecState, MachineState, kernel, run

FUZZ_FUEL = 50_000
MODES = ("a", "b", "c")

# -- differential oracle ----------------------------------------------------------


def overlap_reference(w1, w2) -> bool:
    """Literal transcription of ``overlap``: caps and sealed caps only."""
    def interval(w):
        if type(w) is Cap:
            return w.b, w.e
        if type(w) is Sealed and type(w.sc) is Cap:
            return w.sc.b, w.sc.e
        return None

    i1, i2 = interval(w1), interval(w2)
    if i1 is None or i2 is None:
        return False
    lo, hi = max(i1[0], i2[0]), min(i1[1], i2[1])
    return lo < hi


def sweep_reference(s: MachineState, rs) -> bool:
    """Naive sweep: every register but ``rs`` and every address in [0, AddrMax]."""
    idx = rs if type(rs) is int else rs.value
    w = s.reg[idx]
    for i in range(NUM_REGS):
        if i != idx and overlap_reference(w, s.reg[i]):
            return False
    for a in range(s.addr_max + 1):
        if overlap_reference(w, s.read(a)):
            return False
    return True


def random_word(rng: random.Random, addr_max: int, otype_max: int):
    k = rng.random()
    def addr():
        return rng.randint(0, addr_max)
    if k < 0.35:
        return rng.randint(-3, 9)
    if k < 0.75:
        return Cap(rng.choice(list(MemPerm)), addr(), addr(), addr())
    if k < 0.85:
        return SealRange(rng.choice(list(SealPerm)), rng.randint(0, otype_max),
                         rng.randint(0, otype_max), rng.randint(0, otype_max))
    sc = (Cap(rng.choice(list(MemPerm)), addr(), addr(), addr()) if rng.random() < 0.8 else
          SealRange(rng.choice(list(SealPerm)), 0, 2, 1))
    return Sealed(rng.randint(0, otype_max), sc)


def random_small_state(rng: random.Random, n_regs: int = 16, n_addrs: int = 64,
                       density: float = 0.3) -> MachineState:
    """State with ``n_regs`` random registers (pc included) over ``n_addrs`` cells."""
    from .machine import Config
    s = MachineState(Config(addr_max=n_addrs - 1, otype_max=15))
    for i in rng.sample(range(NUM_REGS), n_regs):
        s.reg[i] = random_word(rng, n_addrs - 1, 15)
    for a in range(n_addrs):
        if rng.random() < density:
            s.write(a, random_word(rng, n_addrs - 1, 15))
    return s


# -- reports -------------------------------------------------------------------------


@dataclass
class RunReport:
    outcome: str                 # Halted | Failed | FuelExhausted
    steps: int
    assert_flag: int
    invariant_violations: list = field(default_factory=list)
    seed: int | None = None
    result: object = None
    state: MachineState | None = field(default=None, repr=False)

    @property
    def failed(self) -> bool:
        return self.assert_flag != 0 or bool(self.invariant_violations)

    def line(self) -> str:
        seed = "-" if self.seed is None else self.seed
        return (f"seed={seed} outcome={self.outcome} steps={self.steps} "
                f"flag={self.assert_flag} violations={len(self.invariant_violations)}")

    def tsv(self) -> str:
        seed = "" if self.seed is None else self.seed
        return f"{seed}\t{self.outcome}\t{self.steps}\t{self.assert_flag}\t{len(self.invariant_violations)}"


def outcome_of(s: MachineState) -> str:
    return "FuelExhausted" if s.status == ExecState.Running else ExecState(s.status).name


# -- monitors ------------------------------------------------------------------------


def _sealables(words):
    for w in words:
        t = type(w)
        if t is Cap or t is SealRange:
            yield w
        elif t is Sealed:
            yield w.sc


def _dominates(d, c) -> bool:
    """``c`` derivable from ``d`` by restrict/subseg/lea/jmp within one step chain."""
    if type(d) is Cap and type(c) is Cap:
        if d.p == MemPerm.E and c.p == MemPerm.RX and (d.b, d.e, d.a) == (c.b, c.e, c.a):
            return True
        if not (MEM_LEQ[c.p][d.p] and d.b <= c.b and c.e <= d.e):
            return False
        if c.p == MemPerm.E and d.p == MemPerm.E:
            return (d.b, d.e, d.a) == (c.b, c.e, c.a)
        if d.p == MemPerm.E:
            return c.p == MemPerm.O or (d.b, d.e, d.a) == (c.b, c.e, c.a)
        return True
    if type(d) is SealRange and type(c) is SealRange:
        return SEAL_LEQ[c.sp][d.sp] and d.ob <= c.ob and c.oe <= d.oe
    return False


def _justified(w, pool, minted) -> bool:
    t = type(w)
    if t is int:
        return True
    if t is Sealed:
        for d in pool:
            if type(d) is Sealed and d == w:
                return True
        if not _justified(w.sc, pool, minted):
            return False
        return any(type(d) is SealRange and d.sp in (SealPerm.S, SealPerm.SU)
                   and d.ob <= w.o < d.oe for d in pool)
    if w in minted:
        return True
    for d in pool:
        if d == w or _dominates(d, w):
            return True
    return False


def _pc_justified(w, pool, minted) -> bool:
    # every step ends with updPC, which bumps the cursor even of a
    # non-executable pc (that step's successor then fails on fetch)
    if _justified(w, pool, minted):
        return True
    return type(w) is Cap and _justified(w._replace(a=w.a - 1), pool, minted)


def _fresh_violation(w, ec):
    if type(w) is SealRange and w.oe > 2 * ec:
        return f"freshness: {format_word(w)} with ec={ec}"
    if type(w) is Sealed:
        if w.o >= 2 * ec:
            return f"freshness: {format_word(w)} with ec={ec}"
        if type(w.sc) is SealRange and w.sc.oe > 2 * ec:
            return f"freshness: {format_word(w)} with ec={ec}"
    return None


def _minted(pre_ec: int, post_ec: int) -> set:
    if post_ec == pre_ec + 1:
        o = 2 * pre_ec
        return {SealRange(SealPerm.SU, o, o + 2, o)}
    return set()


def check_state(s: MachineState) -> list[str]:
    """Global-scan invariants that hold in every reachable state."""
    out = []
    if any(t < 0 or t >= s.ec for t in s.etbl):
        out.append(f"etbl domain {sorted(s.etbl)} not within [0, {s.ec})")
    for w in s.words():
        v = _fresh_violation(w, s.ec)
        if v:
            out.append(v)
    return out


def monitor_step(pre: MachineState, post: MachineState) -> list[str]:
    """All per-step checks on a full pre/post pair (instrumented mode)."""
    out = []
    if post.ec < pre.ec:
        out.append(f"ec decreased {pre.ec} -> {post.ec}")
    if any(t < 0 or t >= post.ec for t in post.etbl):
        out.append(f"etbl domain {sorted(post.etbl)} not within [0, {post.ec})")
    for k, v in post.etbl.items():
        if k in pre.etbl:
            if pre.etbl[k] != v:
                out.append(f"etbl[{k}] rewritten")
        elif k != pre.ec:
            out.append(f"etbl[{k}] assigned outside the bump allocator (ec was {pre.ec})")
    for w in post.words():
        v = _fresh_violation(w, post.ec)
        if v:
            out.append(v)
    pool = list(_sealables(pre.words())) + [w for w in pre.words() if type(w) is Sealed]
    pool_set = set(pool)
    minted = _minted(pre.ec, post.ec)
    for where, w in _located_words(post):
        if type(w) is int or w in pool_set:
            continue
        ok = _pc_justified(w, pool, minted) if where == "pc" else _justified(w, pool, minted)
        if not ok:
            out.append(f"provenance: {where} <- {format_word(w)}")
    return out


def _located_words(s: MachineState):
    for r in REGS:
        yield r.name, s.reg[r.value]
    for a in sorted(s.mem):
        yield f"mem {a}", s.mem[a]


def einit_postcheck(s: MachineState, r1: int) -> list[str]:
    """Exclusivity and integrity right after a successful einit.

    The sentry in ``r1`` must be the only word overlapping the code region,
    the data capability at ``mem(b)`` the only one overlapping the data region,
    and the measured code must be integers only.
    """
    out = []
    sentry = s.reg[r1]
    if type(sentry) is not Cap:
        return [f"einit: r{r1 - 1} holds no sentry"]
    b, e = sentry.b, sentry.e
    data = s.mem.get(b, 0)
    regions = [("code", b, e, ("reg", r1))]
    if type(data) is Cap:
        regions.append(("data", data.b, data.e, ("mem", b)))
    for name, lo, hi, owner in regions:
        for i in range(NUM_REGS):
            if ("reg", i) != owner and kernel._hits(s.reg[i], lo, hi):
                out.append(f"einit exclusivity: {REGS[i].name} aliases the enclave {name} region")
        for a in s.capaddrs:
            if ("mem", a) != owner and kernel._hits(s.mem[a], lo, hi):
                out.append(f"einit exclusivity: mem {a} aliases the enclave {name} region")
    for a in s.capaddrs:
        if b < a < e:
            out.append(f"einit integrity: non-integer word at {a} in measured code")
    return out


class IncrementalMonitor:
    """Footprint-based per-step monitor used by campaigns.

    Checks every word a step writes (changed registers, stored cell, einit's
    cells) for provenance and freshness, plus ec monotonicity, the enclave
    table discipline and the einit exclusivity/integrity post-condition.
    """

    def __init__(self, limit: int = 20):
        self.violations: list[str] = []
        self.steps = 0
        self.limit = limit

    def _add(self, msg):
        if len(self.violations) < self.limit:
            self.violations.append(f"step={self.steps} {msg}")

    def start(self, s: MachineState):
        for v in check_state(s):
            self._add(v)

    def before(self, m, c):
        h = c[0]
        addrs = ()
        loaded = None
        if h is kernel._store:
            w = m.reg[c[1]]
            if type(w) is Cap:
                addrs = ((w.a, m.mem.get(w.a, 0)),)
        elif h is kernel._load:
            w = m.reg[c[2]]
            if type(w) is Cap:
                loaded = m.mem.get(w.a, 0)
        elif h is kernel._einit:
            code, data = m.reg[c[1]], m.reg[c[2]]
            if type(code) is Cap and type(data) is Cap:
                addrs = ((code.b, m.mem.get(code.b, 0)), (data.b, m.mem.get(data.b, 0)))
        return list(m.reg), m.ec, dict(m.etbl) if h is kernel._einit or h is kernel._edeinit else None, addrs, loaded

    def after(self, m, c, token):
        self.steps += 1
        pre_reg, pre_ec, pre_etbl, addrs, loaded = token
        if m.ec < pre_ec:
            self._add(f"ec decreased {pre_ec} -> {m.ec}")
        if pre_etbl is not None:
            for k, v in m.etbl.items():
                if k >= m.ec or k < 0:
                    self._add(f"etbl index {k} outside [0, {m.ec})")
                if k in pre_etbl:
                    if pre_etbl[k] != v:
                        self._add(f"etbl[{k}] rewritten")
                elif k != pre_ec:
                    self._add(f"etbl[{k}] assigned outside the bump allocator (ec was {pre_ec})")
        reg = m.reg
        changed = [i for i in range(NUM_REGS) if reg[i] is not pre_reg[i]]
        new_words = [(REGS[i].name, reg[i]) for i in changed]
        for a, old in addrs:
            w = m.mem.get(a, 0)
            if w is not old:
                new_words.append((f"mem {a}", w))
        pool = None
        minted = None
        ec = m.ec
        for where, w in new_words:
            t = type(w)
            if t is int:
                continue
            v = _fresh_violation(w, ec)
            if v:
                self._add(f"{where} {v}")
            if where == "pc" and t is Cap:
                p = pre_reg[0]
                if type(p) is Cap and (p == w or _dominates(p, w)):
                    continue
            if pool is None:
                pool = list(_sealables(pre_reg)) + [x for x in pre_reg if type(x) is Sealed]
                if loaded is not None:
                    pool.append(loaded)
                    if type(loaded) is Sealed:
                        pool.append(loaded.sc)
                minted = _minted(pre_ec, ec)
            ok = _pc_justified(w, pool, minted) if where == "pc" else _justified(w, pool, minted)
            if not ok:
                self._add(f"provenance: {where} <- {format_word(w)}")
        if c[0] is kernel._einit and ec == pre_ec + 1:
            for v in einit_postcheck(m, c[1]):
                self._add(v)


class FullMonitor:
    """Runs :func:`monitor_step` on full state copies (slow; small runs only)."""

    def __init__(self, limit: int = 20):
        self.violations: list[str] = []
        self.steps = 0
        self.limit = limit

    def start(self, s: MachineState):
        self.violations.extend(check_state(s)[: self.limit])

    def before(self, m, c):
        return m.copy()

    def after(self, m, c, pre):
        self.steps += 1
        vs = monitor_step(pre, m)
        if c[0] is kernel._einit and m.ec == pre.ec + 1:
            vs += einit_postcheck(m, c[1])
        for v in vs:
            if len(self.violations) < self.limit:
                self.violations.append(f"step={self.steps} {v}")


class _Tee:
    def __init__(self, *observers):
        self.observers = [o for o in observers if o is not None]

    def before(self, m, c):
        return [o.before(m, c) for o in self.observers]

    def after(self, m, c, tokens):
        for o, t in zip(self.observers, tokens):
            o.after(m, c, t)


def run_system(image: SystemImage, s: MachineState, fuel: int = FUZZ_FUEL, monitor: str | None = None,
               seed: int | None = None, fast_forward: bool = True, result_reg: str | None = None,
               probe=None) -> RunReport:
    """Run a built system in place and summarize it.

    ``probe`` is an extra before/after observer run alongside the monitor.
    """
    mon = None
    if monitor == "incremental":
        mon = IncrementalMonitor()
    elif monitor == "full":
        mon = FullMonitor()
    elif monitor is not None:
        raise ValueError(f"unknown monitor {monitor!r}")
    if mon is not None:
        mon.start(s)
    observer = mon if probe is None else _Tee(mon, probe)
    _, steps = run(s, fuel, inplace=True, fast_forward=fast_forward, monitor=observer)
    flag = s.read(image.flag_addr)
    violations = list(mon.violations) if mon else []
    if type(flag) is not int:
        violations.append(f"flag cell holds {format_word(flag)}")
        flag = 1
    result = s[result_reg] if result_reg else None
    return RunReport(outcome_of(s), steps, flag, violations, seed, result, s)


# -- adversary generation ---------------------------------------------------------


@dataclass
class GenContext:
    """What the generator knows about the system it attacks."""

    base: int
    size: int
    grants: list                 # register names holding adversary grants
    enclave_pairs: list          # (code reg, data reg) pairs
    scratch: str | None          # RW scratch register, if any
    leak_pair: tuple | None      # leaky-enclave (code, data) registers
    addresses: list              # interesting addresses (region bounds)
    otype_max: int
    ec: int
    intended: list               # words of the intended adversary
    grant_words: dict = field(default_factory=dict)

    @classmethod
    def from_image(cls, image: SystemImage) -> "GenContext":
        adv = image.adversary
        grants = {}
        for idx in image.grant_regs:
            grants[REGS[idx].name] = image.registers[idx]

        def region_cap(name):
            for reg, w in grants.items():
                c = w if type(w) is Cap else None
                r = image.region_of(c.b) if c is not None and c.b < c.e else None
                if r is not None and r.name == name:
                    return reg
            return None

        pairs = []
        leak = None
        encl = image.by_role("enclave")
        datas = [r for r in image.regions if r.role == "data"]
        for er in encl:
            creg = region_cap(er.name)
            if creg is None:
                continue
            # the data grant is the one on the next data region after the code
            dreg = None
            for dr in sorted(datas, key=lambda r: r.base):
                if dr.base >= er.end:
                    dreg = region_cap(dr.name)
                    if dreg is not None:
                        break
            if dreg is None:
                continue
            if er.name == "leak":
                leak = (creg, dreg)
            else:
                pairs.append((creg, dreg))
        scratch = None
        for reg, w in grants.items():
            if type(w) is Cap and w.p == MemPerm.RW:
                r = image.region_of(w.b)
                if r is not None and r.name.startswith("adv"):
                    scratch = reg
        addrs = sorted({x for r in image.regions for x in (r.base, r.end - 1, r.end)})
        return cls(adv.base, adv.size, sorted(grants, key=lambda n: int(n[1:])), pairs, scratch, leak,
                   addrs, image.config.otype_max, image.ec0,
                   list(adv.image.words) if adv.image is not None else [], grants)


_REG_NAMES = [r.name for r in REGS]
_DEFAULT_WEIGHTS = {op: 1.0 for op in Op}
_DEFAULT_WEIGHTS.update({Op.FAIL: 0.2, Op.HALT: 0.2, Op.EINIT: 2.0, Op.JMP: 1.5, Op.ISUNIQUE: 1.5,
                         Op.CSEAL: 1.5, Op.CUNSEAL: 1.5, Op.RESTRICT: 1.5, Op.STORE: 1.5})


class _Gen:
    def __init__(self, rng: random.Random, ctx: GenContext, weights: dict | None):
        self.rng = rng
        self.ctx = ctx
        w = dict(_DEFAULT_WEIGHTS)
        w.update(weights or {})
        self.ops = list(w)
        self.weights = [w[o] for o in self.ops]
        self.held = ["r0", "r1", "pc"] + list(ctx.grants)
        self.labels = 0

    def reg(self) -> str:
        r = self.rng.random()
        if r < 0.75:
            return self.rng.choice(self.held)
        return self.rng.choice(_REG_NAMES)

    def imm(self) -> int:
        ctx = self.ctx
        k = self.rng.random()
        if k < 0.25:
            return self.rng.randint(-2, 5)
        if k < 0.45:
            return self.rng.choice([0, 2 * ctx.ec, 2 * ctx.ec + 1, 2 * ctx.ec + 2, ctx.otype_max,
                                    ctx.otype_max + 1])
        if k < 0.7:
            return self.rng.choice(ctx.addresses) + self.rng.choice([-1, 0, 0, 1])
        if k < 0.8:
            return self.rng.randint(-300, 300)
        if k < 0.9:
            return self.rng.choice([42, 43, 21, 41, -1])
        return self.rng.getrandbits(self.rng.choice([16, 64, 200]))

    def instr(self) -> Instr:
        op = self.rng.choices(self.ops, self.weights)[0]
        args = []
        for i, kind in enumerate(SIGNATURES[op]):
            if kind == "a" and self.rng.random() < 0.5:
                args.append(self.imm())
            else:
                name = self.reg()
                args.append(REG_BY_NAME[name])
        if SIGNATURES[op] and SIGNATURES[op][0] == "r" and op not in (Op.JMP, Op.JNZ, Op.STORE, Op.EDEINIT):
            name = args[0].name
            if name not in self.held and name != "pc":
                self.held.append(name)
        return Instr(op, tuple(args))

    def label(self) -> str:
        self.labels += 1
        return f"g{self.labels}"


def _random_program(g: _Gen, length: int) -> list:
    return [encode(g.instr()) for _ in range(length)]


def _mutate_program(g: _Gen, words: list, length: int) -> list:
    rng = g.rng
    prog = list(words) or [encode(g.instr())]
    for _ in range(rng.randint(1, 4)):
        k = rng.random()
        i = rng.randrange(len(prog))
        if k < 0.35:
            prog[i] = encode(g.instr())
        elif k < 0.6:
            prog.insert(i, encode(g.instr()))
        elif k < 0.75 and len(prog) > 1:
            del prog[i]
        elif k < 0.9:
            j = rng.randrange(len(prog))
            prog[i], prog[j] = prog[j], prog[i]
        else:
            prog.insert(i, prog[rng.randrange(len(prog))])
    return prog[:length]


def _gadgets(g: _Gen, length: int) -> list[str]:
    """Grammar-directed program: setup gadgets, einit, invocation, noise."""
    rng, ctx = g.rng, g.ctx
    lines: list[str] = []
    pairs = ctx.enclave_pairs or ([ctx.leak_pair] if ctx.leak_pair else [])
    scratch = ctx.scratch

    def alias():
        src = rng.choice(ctx.grants) if ctx.grants else "r1"
        if scratch and rng.random() < 0.4:
            lines.extend([f"mov r5 {scratch}", f"lea r5 {rng.randint(1, 8)}", f"store r5 {src}", "mov r5 0"])
        else:
            lines.append(f"mov r{rng.randint(2, 9)} {src}")

    def pollute():
        if not pairs:
            return
        code, _ = rng.choice(pairs)
        src = rng.choice(ctx.grants + ["r0", "r1"])
        lines.extend([f"mov r6 {code}", f"lea r6 {rng.randint(1, 6)}", f"store r6 {src}", "mov r6 0"])

    def restrict_random():
        # narrowing a grant keeps the program alive until einit
        reg = rng.choice(ctx.grants) if ctx.grants else "r1"
        w = ctx.grant_words.get(reg)
        if type(w) is Cap:
            perms = [p for p in MemPerm if MEM_LEQ[p][w.p]]
            lines.append(f"restrict {reg} {int(rng.choice(perms))}")
        else:
            lines.append(f"restrict {reg} {rng.randint(0, 5)}")

    def restrict_any():
        lines.append(f"restrict {g.reg()} {rng.randint(0, 5)}")

    def deinit_cycle():
        if not ctx.leak_pair:
            return
        code, data = ctx.leak_pair
        k = g.label()
        lines.extend([f"restrict {code} 3", f"einit {code} {data}",
                      *([f"store {scratch} r0"] if scratch else []),
                      f"la r0 {k}", "restrict r0 1", f"jmp {code}", f"{k}:",
                      *([f"load r0 {scratch}"] if scratch else []),
                      "edeinit r1"])
        if rng.random() < 0.5:
            lines.extend(["mov r7 r1", "restrict r7 1", "mov r3 r1", f"lea r3 {rng.choice([0, 1])}",
                          f"cseal r8 r3 {rng.choice(ctx.grants or ['r1'])}"])

    def einit(pair):
        code, data = pair
        if rng.random() < 0.9:
            lines.append(f"restrict {code} 3")
        lines.append(f"einit {code} {data}")

    def forge():
        src = rng.choice(ctx.grants or ["r1"])
        lines.extend([f"mov r2 {src}", f"restrict r2 {rng.choice([0, 2])}", f"lea r2 {rng.choice([42, 43, 21, 1])}",
                      f"mov r1 r2"])
        if rng.random() < 0.5:
            lines.append(f"cseal r1 {g.reg()} r2")

    def invoke(code):
        k = g.label()
        save = scratch and rng.random() < 0.7
        if save:
            lines.append(f"store {scratch} r0")
        lines.extend([f"la r0 {k}", "restrict r0 1", f"jmp {code}", f"{k}:"])
        if save:
            lines.append(f"load r0 {scratch}")

    def noise(n):
        for _ in range(n):
            lines.append(str(g.instr()))

    setup = [alias, pollute, restrict_random, deinit_cycle]
    later = setup + [forge, restrict_any]
    for _ in range(rng.choice([0, 0, 1, 1, 2])):
        rng.choice(setup)()
    order = list(pairs)
    rng.shuffle(order)
    for pair in order[: rng.randint(1, len(order))] if order else []:
        einit(pair)
    for _ in range(rng.randint(0, 3)):
        k = rng.random()
        if k < 0.5 and pairs:
            invoke(rng.choice(pairs)[0])
        elif k < 0.65:
            rng.choice(later)()
        else:
            noise(rng.randint(1, 3))
    if rng.random() < 0.85:
        lines.extend(["mov r3 0", "mov r4 0", "jmp r0"])
    else:
        noise(rng.randint(1, 4))
    return lines


def gen_adversary(seed: int, length: int, ctx: GenContext, mode: str | None = None,
                  weights: dict | None = None) -> list:
    """Adversary program words for ``seed``; ``mode`` a/b/c (default by seed)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = random.Random(seed)
    mode = mode or MODES[seed % 3]
    g = _Gen(rng, ctx, weights)
    if mode == "a":
        words = _random_program(g, rng.randint(1, length))
    elif mode == "b":
        words = _mutate_program(g, ctx.intended, length)
    elif mode == "c":
        src = "\n".join(_gadgets(g, length))
        words = assemble(src, ctx.base, addr_max=ctx.base + ctx.size - 1, source="<gen>").words
        if len(words) > length:
            words = words[:length]
    else:
        raise ValueError(f"unknown generator mode {mode!r}")
    return words[: ctx.size]


def splice(s: MachineState, ctx: GenContext, words: list) -> None:
    """Replace the adversary region's contents by ``words`` (rest zeroed)."""
    for a in range(ctx.base, ctx.base + ctx.size):
        s.write(a, 0)
    s.load_words(ctx.base, words)


# -- campaigns -----------------------------------------------------------------------


@dataclass
class CampaignSummary:
    reports: list
    label: str = ""

    @property
    def failures(self) -> list:
        return [r for r in self.reports if r.failed]

    def counts(self) -> dict:
        out: dict = {}
        for r in self.reports:
            out[r.outcome] = out.get(r.outcome, 0) + 1
        return out

    def text(self, fmt: str = "text") -> str:
        if fmt == "tsv":
            lines = ["seed\toutcome\tsteps\tflag\tviolations"] + [r.tsv() for r in self.reports]
            lines.append(f"SUMMARY\t{len(self.reports)}\t{len(self.failures)}")
        else:
            lines = [r.line() for r in self.reports]
            lines.append(f"SUMMARY runs={len(self.reports)} failures={len(self.failures)}")
        return "\n".join(lines) + "\n"


def _campaign_chunk(spec, seeds, fuel, monitors, mutations, length, modes):
    image, s0 = build(spec, mutations=mutations)
    ctx = GenContext.from_image(image)
    reports = []
    for seed in seeds:
        words = gen_adversary(seed, length, ctx, mode=modes[seed % len(modes)])
        s = s0.copy()
        splice(s, ctx, words)
        rep = run_system(image, s, fuel, "incremental" if monitors else None, seed)
        rep.state = None
        reports.append(rep)
    return reports


def fuzz_campaign(spec, n_runs: int, fuel: int = FUZZ_FUEL, monitors: bool = True, seed: int = 0,
                  mutations=(), length: int = 48, modes=MODES, workers: int = 1,
                  stop_on_failure: bool = False) -> CampaignSummary:
    """Run ``n_runs`` generated adversaries with seeds ``seed .. seed+n_runs-1``."""
    seeds = list(range(seed, seed + n_runs))
    if stop_on_failure:
        reports = []
        for i in range(0, len(seeds), 50):
            chunk = _campaign_chunk(spec, seeds[i:i + 50], fuel, monitors, mutations, length, modes)
            reports.extend(chunk)
            if any(r.failed for r in chunk):
                break
        return CampaignSummary(reports)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        chunks = [seeds[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as ex:
            parts = ex.map(_campaign_chunk, [spec] * workers, chunks, [fuel] * workers,
                           [monitors] * workers, [mutations] * workers, [length] * workers,
                           [modes] * workers)
            reports = [r for part in parts for r in part]
    else:
        reports = _campaign_chunk(spec, seeds, fuel, monitors, mutations, length, modes)
    reports.sort(key=lambda r: r.seed)
    return CampaignSummary(reports)
