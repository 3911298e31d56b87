# Interpreter kernel: single-step execution, per-instruction transitions and
# the fuel-bounded run loop.
#
# This file is plain Python.  The build compiles the same source with Cython
# into ``_csemantics`` (see ``_csemantics.pyx``); ``cerisier.machine`` picks
# the compiled module when it imports and falls back to this one otherwise.
# Keep it free of constructs Cython cannot compile (no class definitions that
# rely on metaclass magic, no ``typing`` at runtime).

from .hashing import concat_ints, measure_identity, word_hash_int
from .isa import (
    MEM_LEQ,
    MEM_PERMS,
    NUM_REGS,
    SEAL_LEQ,
    SEAL_PERMS,
    Cap,
    MemPerm,
    Op,
    SealPerm,
    SealRange,
    Sealed,
    decode_strict,
)

RUNNING = 0
HALTED = 1
FAILED = 2

MUT_SKIP_SWEEP_R2 = "skip_einit_sweep_r2"
MUT_SKIP_CODE_INTS = "skip_code_int_check"
MUT_RESTRICT_WIDEN = "restrict_widen"
MUT_OTYPE_REUSE = "otype_reuse"
MUTATIONS = (MUT_SKIP_SWEEP_R2, MUT_SKIP_CODE_INTS, MUT_RESTRICT_WIDEN, MUT_OTYPE_REUSE)

_O = MemPerm.O
_E = MemPerm.E
_RO = MemPerm.RO
_RX = MemPerm.RX
_RW = MemPerm.RW
_RWX = MemPerm.RWX
_SU = SealPerm.SU
_S = SealPerm.S
_U = SealPerm.U


def _fail(m, c):
    m.status = FAILED


def _next(m):
    # updPC
    pc = m.reg[0]
    if type(pc) is Cap and pc.a < m.addr_max:
        m.reg[0] = Cap(pc.p, pc.b, pc.e, pc.a + 1)
    else:
        m.status = FAILED


def _arg(m, a):
    # InstrArg: register index or a 1-tuple holding an immediate
    if type(a) is int:
        return m.reg[a]
    return a[0]


def write_mem(m, addr, w):
    """Store ``w`` at ``addr`` keeping the sparse map and capability index.

    ``version`` only moves when the cell content actually changes.
    """
    mem = m.mem
    old = mem.get(addr, 0)
    if type(old) is type(w) and old == w:
        return
    if type(w) is int:
        if w == 0:
            mem.pop(addr, None)
        else:
            mem[addr] = w
        m.capaddrs.discard(addr)
    else:
        mem[addr] = w
        m.capaddrs.add(addr)
    m.version += 1


def cap_interval(w):
    """``(b, e)`` of a capability or sealed capability, else ``None``."""
    t = type(w)
    if t is Cap:
        return w.b, w.e
    if t is Sealed and type(w.sc) is Cap:
        return w.sc.b, w.sc.e
    return None


def _hits(w, b, e):
    t = type(w)
    if t is Cap:
        pass
    elif t is Sealed:
        w = w.sc
        if type(w) is not Cap:
            return False
    else:
        return False
    return (w.b if w.b > b else b) < (w.e if w.e < e else e)


def sweep(m, rs):
    """Exclusive-ownership check of the (sealed) capability in register ``rs``.

    Scans every other register and, through the capability index, every
    memory cell that holds a non-integer word.
    """
    iv = cap_interval(m.reg[rs])
    if iv is None:
        return True        # nothing overlaps a word without an address range
    b, e = iv
    if b >= e:
        return True
    reg = m.reg
    for i in range(NUM_REGS):
        if i != rs and _hits(reg[i], b, e):
            return False
    mem = m.mem
    for a in m.capaddrs:
        if _hits(mem[a], b, e):
            return False
    return True


def _jump_target(w):
    if type(w) is Cap and w.p == _E:
        return Cap(_RX, w.b, w.e, w.a)
    return w


def _jmp(m, c):
    m.reg[0] = _jump_target(m.reg[c[1]])


def _jnz(m, c):
    cond = m.reg[c[2]]
    if type(cond) is int and cond != 0:
        m.reg[0] = _jump_target(m.reg[c[1]])
    else:
        _next(m)


def _halt(m, c):
    m.status = HALTED


def _mov(m, c):
    m.reg[c[1]] = _arg(m, c[2])
    _next(m)


def _add(m, c):
    x = _arg(m, c[2])
    y = _arg(m, c[3])
    if type(x) is int and type(y) is int:
        m.reg[c[1]] = x + y
        _next(m)
    else:
        m.status = FAILED


def _sub(m, c):
    x = _arg(m, c[2])
    y = _arg(m, c[3])
    if type(x) is int and type(y) is int:
        m.reg[c[1]] = x - y
        _next(m)
    else:
        m.status = FAILED


def _lt(m, c):
    x = _arg(m, c[2])
    y = _arg(m, c[3])
    if type(x) is int and type(y) is int:
        m.reg[c[1]] = 1 if x < y else 0
        _next(m)
    else:
        m.status = FAILED


def _lea(m, c):
    w = m.reg[c[1]]
    z = _arg(m, c[2])
    if type(z) is not int:
        m.status = FAILED
        return
    t = type(w)
    if t is Cap and w.p != _E:
        na = w.a + z
        if 0 <= na <= m.addr_max:
            m.reg[c[1]] = Cap(w.p, w.b, w.e, na)
            _next(m)
            return
    elif t is SealRange:
        na = w.oa + z
        if 0 <= na <= m.otype_max:
            m.reg[c[1]] = SealRange(w.sp, w.ob, w.oe, na)
            _next(m)
            return
    m.status = FAILED


def _load(m, c):
    w = m.reg[c[2]]
    if type(w) is Cap and w.b <= w.a < w.e and w.p != _E and w.p != _O:
        m.reg[c[1]] = m.mem.get(w.a, 0)
        _next(m)
    else:
        m.status = FAILED


def _store(m, c):
    w = m.reg[c[1]]
    if type(w) is Cap and (w.p == _RW or w.p == _RWX) and w.b <= w.a < w.e:
        write_mem(m, w.a, _arg(m, c[2]))
        _next(m)
    else:
        m.status = FAILED


def _restrict(m, c):
    w = m.reg[c[1]]
    z = _arg(m, c[2])
    if type(z) is not int:
        m.status = FAILED
        return
    t = type(w)
    widen = m.mutations and MUT_RESTRICT_WIDEN in m.mutations
    if t is Cap and 0 <= z < 6 and (widen or MEM_LEQ[z][w.p]):
        m.reg[c[1]] = Cap(MEM_PERMS[z], w.b, w.e, w.a)
        _next(m)
    elif t is SealRange and 0 <= z < 4 and (widen or SEAL_LEQ[z][w.sp]):
        m.reg[c[1]] = SealRange(SEAL_PERMS[z], w.ob, w.oe, w.oa)
        _next(m)
    else:
        m.status = FAILED


def _subseg(m, c):
    w = m.reg[c[1]]
    z1 = _arg(m, c[2])
    z2 = _arg(m, c[3])
    if type(z1) is not int or type(z2) is not int:
        m.status = FAILED
        return
    t = type(w)
    if t is Cap and w.p != _E:
        if 0 <= z1 and z2 <= m.addr_max and w.b <= z1 and z2 <= w.e:
            m.reg[c[1]] = Cap(w.p, z1, z2, w.a)
            _next(m)
            return
    elif t is SealRange:
        if 0 <= z1 and z2 <= m.otype_max and w.ob <= z1 and z2 <= w.oe:
            m.reg[c[1]] = SealRange(w.sp, z1, z2, w.oa)
            _next(m)
            return
    m.status = FAILED


def _getfield(m, c, idx):
    w = m.reg[c[2]]
    t = type(w)
    if t is Cap or t is SealRange:
        m.reg[c[1]] = int(w[idx])
        _next(m)
    else:
        m.status = FAILED


def _getp(m, c):
    _getfield(m, c, 0)


def _getb(m, c):
    _getfield(m, c, 1)


def _gete(m, c):
    _getfield(m, c, 2)


def _geta(m, c):
    _getfield(m, c, 3)


def _cseal(m, c):
    sr = m.reg[c[2]]
    sc = m.reg[c[3]]
    if (type(sr) is SealRange and (sr.sp == _S or sr.sp == _SU)
            and sr.ob <= sr.oa < sr.oe and (type(sc) is Cap or type(sc) is SealRange)):
        m.reg[c[1]] = Sealed(sr.oa, sc)
        _next(m)
    else:
        m.status = FAILED


def _cunseal(m, c):
    sr = m.reg[c[2]]
    sd = m.reg[c[3]]
    if (type(sr) is SealRange and (sr.sp == _U or sr.sp == _SU)
            and sr.ob <= sr.oa < sr.oe and type(sd) is Sealed and sd.o == sr.oa):
        m.reg[c[1]] = sd.sc
        _next(m)
    else:
        m.status = FAILED


def _getwtype(m, c):
    w = m.reg[c[2]]
    t = type(w)
    if t is int:
        k = 0
    elif t is Cap:
        k = 1
    elif t is SealRange:
        k = 2
    else:
        k = 3
    m.reg[c[1]] = k
    _next(m)


def _getotype(m, c):
    w = m.reg[c[2]]
    m.reg[c[1]] = w.o if type(w) is Sealed else -1
    _next(m)


def _isunique(m, c):
    if cap_interval(m.reg[c[2]]) is None:
        m.status = FAILED
        return
    m.reg[c[1]] = 1 if sweep(m, c[2]) else 0
    _next(m)


def _einit(m, c):
    r1 = c[1]
    r2 = c[2]
    reg = m.reg
    code = reg[r1]
    data = reg[r2]
    if (r1 == 0 or type(code) is not Cap or code.p != _RX or not code.b < code.e
            or type(data) is not Cap or data.p != _RW or not data.b < data.e):
        m.status = FAILED
        return
    muts = m.mutations
    if not sweep(m, r1):
        m.status = FAILED
        return
    if not (muts and MUT_SKIP_SWEEP_R2 in muts) and not sweep(m, r2):
        m.status = FAILED
        return
    b = code.b
    e = code.e
    if not (muts and MUT_SKIP_CODE_INTS in muts):
        for a in m.capaddrs:
            if b < a < e:
                m.status = FAILED
                return
    ec = m.ec
    if 2 * ec + 2 > m.otype_max + 1:
        m.status = FAILED
        return
    mem = m.mem
    ident = measure_identity(b, [mem.get(a, 0) for a in range(b + 1, e)], m.hash_mode)
    oa = 2 * ec
    write_mem(m, b, data)
    write_mem(m, data.b, SealRange(_SU, oa, oa + 2, oa))
    m.etbl[ec] = ident
    m.ec = ec + 1
    reg[r1] = Cap(_E, b, e, b + 1)
    reg[r2] = 0
    _next(m)


def tidx_of_ot(o):
    return o // 2 if o % 2 == 0 else (o - 1) // 2


def _edeinit(m, c):
    w = m.reg[c[1]]
    if type(w) is SealRange and w.sp == _SU and w.oe == w.ob + 2 and w.ob % 2 == 0:
        tidx = w.ob // 2
        if tidx in m.etbl:
            del m.etbl[tidx]
            m.version += 1
            if m.mutations and MUT_OTYPE_REUSE in m.mutations and tidx == m.ec - 1:
                m.ec = tidx
            _next(m)
            return
    m.status = FAILED


def _estoreid(m, c):
    o = m.reg[c[2]]
    if type(o) is int and o >= 0:
        ident = m.etbl.get(tidx_of_ot(o))
        if ident is not None:
            m.reg[c[1]] = ident
            _next(m)
            return
    m.status = FAILED


# Hash values are atom sequences, so `hash r r` grows geometrically and
# `hashconcat r r r` doubles; past this many bits both fail.
HASH_LIMIT_BITS = 1 << 18


def _hash(m, c):
    w = m.reg[c[2]]
    if type(w) is int and w.bit_length() > HASH_LIMIT_BITS:
        m.status = FAILED
        return
    z = word_hash_int(w, m.hash_mode)
    if z.bit_length() > HASH_LIMIT_BITS:
        m.status = FAILED
        return
    m.reg[c[1]] = z
    _next(m)


def _hashconcat(m, c):
    z = concat_ints(_arg(m, c[2]), _arg(m, c[3]))
    if z is None or z.bit_length() > HASH_LIMIT_BITS:
        m.status = FAILED
    else:
        m.reg[c[1]] = z
        _next(m)


HANDLERS = {
    Op.JMP: _jmp,
    Op.JNZ: _jnz,
    Op.FAIL: _fail,
    Op.HALT: _halt,
    Op.MOV: _mov,
    Op.ADD: _add,
    Op.SUB: _sub,
    Op.LT: _lt,
    Op.LEA: _lea,
    Op.LOAD: _load,
    Op.STORE: _store,
    Op.RESTRICT: _restrict,
    Op.SUBSEG: _subseg,
    Op.GETP: _getp,
    Op.GETB: _getb,
    Op.GETE: _gete,
    Op.GETA: _geta,
    Op.CSEAL: _cseal,
    Op.CUNSEAL: _cunseal,
    Op.GETWTYPE: _getwtype,
    Op.GETOTYPE: _getotype,
    Op.ISUNIQUE: _isunique,
    Op.EINIT: _einit,
    Op.EDEINIT: _edeinit,
    Op.ESTOREID: _estoreid,
    Op.HASH: _hash,
    Op.HASHCONCAT: _hashconcat,
}

OP_OF_HANDLER = {h: op for op, h in HANDLERS.items()}

_FAIL_C = (_fail,)
_CACHE = {}
_CACHE_LIMIT = 1 << 16


def compile_word(z):
    """Decoded, execution-ready form of the instruction integer ``z``.

    ``(handler, operand...)``: registers become register-file indices and
    immediates become 1-tuples.  ``OP_OF_HANDLER`` recovers the opcode.
    """
    c = _CACHE.get(z)
    if c is not None:
        return c
    i = decode_strict(z)
    if i is None:
        c = _FAIL_C
    else:
        ops = [HANDLERS[i.op]]
        for a in i.args:
            ops.append((a,) if type(a) is int else a.value)
        c = tuple(ops)
    if len(_CACHE) >= _CACHE_LIMIT:
        _CACHE.clear()
    _CACHE[z] = c
    return c


def fetch(m):
    """The compiled instruction the pc designates, or ``None`` if ExecSingle fails."""
    pc = m.reg[0]
    if type(pc) is not Cap or not pc.b <= pc.a < pc.e or (pc.p != _RX and pc.p != _RWX):
        return None
    z = m.mem.get(pc.a, 0)
    if type(z) is not int:
        return None
    return compile_word(z)


def step(m):
    if m.status != RUNNING:
        return m
    c = fetch(m)
    if c is None:
        m.status = FAILED
    else:
        c[0](m, c)
    return m


def run(m, fuel, fast_forward=True, monitor=None):
    """Step ``m`` in place until it stops running or ``fuel`` steps elapse.

    With ``fast_forward`` the loop detects exact state recurrences that happen
    without memory or enclave-table writes (Brent's cycle finding on the
    register file) and skips whole periods; the final state and step count are
    identical to stepping naively.

    ``monitor`` (optional) provides ``before(m, c)`` / ``after(m, c, token)``
    hooks around every executed step.

    Returns the number of steps taken.
    """
    steps = 0
    reg = m.reg
    saved = None
    saved_ver = -1
    power = 1
    lam = 1
    while steps < fuel:
        if m.status != RUNNING:
            break
        c = fetch(m)
        if c is None:
            m.status = FAILED
            steps += 1
            break
        if monitor is not None:
            token = monitor.before(m, c)
            c[0](m, c)
            monitor.after(m, c, token)
        else:
            c[0](m, c)
        steps += 1
        if not fast_forward:
            continue
        if m.version != saved_ver:
            saved = list(reg)
            saved_ver = m.version
            power = 1
            lam = 1
            continue
        if m.status == RUNNING and reg == saved:
            remaining = fuel - steps
            steps += remaining - remaining % lam
            saved_ver = -1
            fast_forward = False
            continue
        if lam == power:
            saved = list(reg)
            power *= 2
            lam = 0
        lam += 1
    return steps
