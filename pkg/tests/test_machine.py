import pytest
from hypothesis import given
from hypothesis import strategies as st

from cerisier.assembler import assemble
from cerisier.hashing import measure_identity
from cerisier.isa import Cap, MemPerm as P, SealPerm as S, SealRange, Sealed, encode, instr
from cerisier.machine import (
    BACKEND, Config, ExecState, MachineState, exec_instr, overlap, parse_snapshot, run, snapshot,
    step, sweep, tidx_of_ot, upd_pc,
)

from strategies import caps, words


def state(code=(), pc=None, **regs):
    s = MachineState(Config(addr_max=63, otype_max=63))
    s.load_words(0, [encode(i) if not isinstance(i, int) else i for i in code])
    s["pc"] = pc if pc is not None else Cap(P.RX, 0, max(len(code), 1), 0)
    for name, w in regs.items():
        s[name] = w
    return s


def one(i, **regs):
    return exec_instr(instr(*i) if isinstance(i, tuple) else i, state(**regs))


def test_backend_is_known():
    assert BACKEND in ("cython", "python")


# -- fetch and updPC -----------------------------------------------------------


def test_int_pc_fails():
    s = state()
    s["pc"] = 7
    assert step(s).state == ExecState.Failed


def test_halt_leaves_state_otherwise_unchanged():
    s = state(pc=Cap(P.RX, 0, 4, 2))
    s.write(2, encode(instr("halt")))
    t = step(s)
    assert t.state == ExecState.Halted
    t.status = ExecState.Running.value
    assert t == s


def test_fetching_a_capability_fails():
    s = state(pc=Cap(P.RX, 0, 4, 2))
    s.write(2, Cap(P.RW, 0, 1, 0))
    assert step(s).state == ExecState.Failed


def test_step_is_pure_by_default():
    s = state([instr("mov", "r1", 5)])
    before = snapshot(s)
    step(s)
    assert snapshot(s) == before


def test_upd_pc():
    assert upd_pc(state(pc=Cap(P.RX, 0, 9, 3)))["pc"] == Cap(P.RX, 0, 9, 4)
    assert upd_pc(state(pc=Cap(P.RX, 0, 9, 8)))["pc"] == Cap(P.RX, 0, 9, 9)
    s = state(pc=Cap(P.RX, 0, 9, 4))
    s["pc"] = 7
    assert upd_pc(s).state == ExecState.Failed


def test_cursor_at_end_then_fails_on_bounds():
    s = state([instr("mov", "r1", 1)], pc=Cap(P.RX, 0, 1, 0))
    s = step(s)
    assert s["pc"] == Cap(P.RX, 0, 1, 1) and s.state == ExecState.Running
    assert step(s).state == ExecState.Failed


# -- memory and capabilities -------------------------------------------------------


def test_load():
    s = state(r2=Cap(P.RO, 0, 4, 1))
    s.write(1, 9)
    t = exec_instr(instr("load", "r1", "r2"), s)
    assert t["r1"] == 9 and t["pc"].a == 1


def test_load_without_read_perm_fails():
    s = state(r2=Cap(P.E, 0, 4, 1))
    assert exec_instr(instr("load", "r1", "r2"), s).state == ExecState.Failed


def test_store_and_bounds():
    t = one(("store", "r1", 5), r1=Cap(P.RW, 10, 12, 11))
    assert t.read(11) == 5
    assert one(("store", "r1", 5), r1=Cap(P.RW, 10, 12, 12)).state == ExecState.Failed
    assert one(("store", "r1", 5), r1=Cap(P.RO, 10, 12, 11)).state == ExecState.Failed


def test_jmp_sentry_becomes_rx():
    t = one(("jmp", "r1"), r1=Cap(P.E, 10, 20, 12))
    assert t["pc"] == Cap(P.RX, 10, 20, 12)


@pytest.mark.parametrize("src,dst,ok", [(P.RWX, P.RO, True), (P.RO, P.RW, False),
                                         (P.RW, P.RW, True), (P.RX, P.E, True), (P.O, P.RO, False)])
def test_restrict_lattice(src, dst, ok):
    t = one(("restrict", "r1", int(dst)), r1=Cap(src, 0, 8, 0))
    assert (t.state == ExecState.Running) == ok
    if ok:
        assert t["r1"] == Cap(dst, 0, 8, 0)


def test_subseg_only_narrows():
    assert one(("subseg", "r1", 2, 5), r1=Cap(P.RW, 0, 8, 0))["r1"] == Cap(P.RW, 2, 5, 0)
    assert one(("subseg", "r1", 2, 9), r1=Cap(P.RW, 0, 8, 0)).state == ExecState.Failed


def test_lea_moves_cursor_only():
    assert one(("lea", "r1", 3), r1=Cap(P.RW, 0, 8, 0))["r1"] == Cap(P.RW, 0, 8, 3)
    assert one(("lea", "r1", 3), r1=Cap(P.E, 0, 8, 0)).state == ExecState.Failed


# -- sealing --------------------------------------------------------------------


def test_cseal():
    t = one(("cseal", "r3", "r1", "r2"), r1=SealRange(S.S, 4, 6, 5), r2=Cap(P.RW, 0, 8, 0))
    assert t["r3"] == Sealed(5, Cap(P.RW, 0, 8, 0))
    assert one(("cseal", "r3", "r1", "r2"), r1=SealRange(S.U, 4, 6, 5),
               r2=Cap(P.RW, 0, 8, 0)).state == ExecState.Failed
    assert one(("cseal", "r3", "r1", "r2"), r1=SealRange(S.S, 4, 6, 5), r2=3).state == ExecState.Failed


def test_cunseal():
    c = Cap(P.RW, 0, 8, 0)
    assert one(("cunseal", "r3", "r1", "r2"), r1=SealRange(S.U, 4, 6, 5), r2=Sealed(5, c))["r3"] == c
    assert one(("cunseal", "r3", "r1", "r2"), r1=SealRange(S.U, 4, 6, 5),
               r2=Sealed(4, c)).state == ExecState.Failed
    assert one(("cunseal", "r3", "r1", "r2"), r1=SealRange(S.S, 4, 6, 5),
               r2=Sealed(5, c)).state == ExecState.Failed


def test_type_queries():
    c = Cap(P.RW, 0, 8, 0)
    assert one(("getwtype", "r2", "r1"), r1=5)["r2"] == 0
    assert one(("getwtype", "r2", "r1"), r1=Sealed(7, c))["r2"] == 3
    assert one(("getotype", "r2", "r1"), r1=Sealed(7, c))["r2"] == 7
    assert one(("getotype", "r2", "r1"), r1=5)["r2"] == -1


# -- overlap and sweep --------------------------------------------------------------


def test_overlap_examples():
    assert overlap(Cap(P.RW, 0, 4, 0), Cap(P.RO, 2, 6, 3))
    assert not overlap(Cap(P.RW, 0, 4, 0), Cap(P.RW, 4, 8, 4))
    assert overlap(Sealed(3, Cap(P.RW, 1, 5, 1)), Cap(P.RX, 4, 9, 4))


def test_sweep_examples():
    c = Cap(P.RW, 40, 44, 40)
    s = state(r1=c)
    s["pc"] = Cap(P.RX, 0, 1, 0)
    assert sweep(s, "r1")
    s.write(50, c)
    assert not sweep(s, "r1")
    s.write(50, 0)
    s["pc"] = Cap(P.RX, 38, 41, 38)
    assert not sweep(s, "r1")


def test_isunique():
    c = Cap(P.RW, 40, 44, 40)
    assert one(("isunique", "r2", "r1"), r1=c)["r2"] == 1
    assert one(("isunique", "r2", "r1"), r1=c, r3=Sealed(0, Cap(P.O, 43, 50, 43)))["r2"] == 0
    assert one(("isunique", "r2", "r1"), r1=3).state == ExecState.Failed


# -- enclaves -------------------------------------------------------------------


@pytest.mark.parametrize("o,t", [(4, 2), (5, 2), (0, 0)])
def test_tidx(o, t):
    assert tidx_of_ot(o) == t


def toy():
    """8-word machine: code [0,4) holds the einit, enclave code [4,7), enclave data [7,8)."""
    s = MachineState(Config(addr_max=7, otype_max=7))
    s.write(0, encode(instr("einit", "r1", "r2")))
    s.load_words(4, [0, 11, 12])
    s["pc"] = Cap(P.RX, 0, 4, 0)
    s["r1"] = Cap(P.RX, 4, 7, 4)
    s["r2"] = Cap(P.RW, 7, 8, 7)
    return s


def einit_reference(s):
    """Hand transcription of the einit row for the toy state."""
    ident = measure_identity(4, [s.read(5), s.read(6)])
    t = s.copy()
    t.mem = {0: s.read(0), 4: Cap(P.RW, 7, 8, 7), 5: 11, 6: 12, 7: SealRange(S.SU, 0, 2, 0)}
    t.capaddrs = {4, 7}
    t.etbl = {0: ident}
    t.ec = 1
    t["r1"] = Cap(P.E, 4, 7, 5)
    t["r2"] = 0
    t["pc"] = Cap(P.RX, 0, 4, 1)
    return t


def test_einit_matches_reference():
    s = toy()
    post = step(s)
    assert post == einit_reference(s)
    assert post.ec == s.ec + 1


def test_einit_rejects_capability_in_code():
    s = toy()
    s.write(6, Cap(P.RO, 0, 1, 0))
    assert step(s).state == ExecState.Failed


def test_einit_rejects_aliased_data():
    s = toy()
    s["r5"] = Cap(P.RO, 7, 8, 7)
    assert step(s).state == ExecState.Failed


def test_estoreid():
    for o in (4, 5):
        t = one(("estoreid", "r2", "r1"), r1=o)
        assert t.state == ExecState.Failed   # empty table
    s = state(r1=4)
    s.etbl = {2: 99}
    s.ec = 3
    assert exec_instr(instr("estoreid", "r2", "r1"), s)["r2"] == 99
    s["r1"] = 5
    assert exec_instr(instr("estoreid", "r2", "r1"), s)["r2"] == 99


def test_edeinit():
    s = state(r1=SealRange(S.SU, 4, 6, 4))
    s.etbl = {2: 99}
    s.ec = 3
    t = exec_instr(instr("edeinit", "r1"), s)
    assert t.etbl == {} and t.state == ExecState.Running
    assert exec_instr(instr("edeinit", "r1"), t).state == ExecState.Failed
    s["r1"] = SealRange(S.S, 4, 6, 4)
    assert exec_instr(instr("edeinit", "r1"), s).state == ExecState.Failed


# -- run ---------------------------------------------------------------------------


def test_fuel_zero_is_identity():
    s = state([instr("halt")])
    t, n = run(s, 0)
    assert n == 0 and t == s


def test_halt_program_step_count():
    img = assemble("mov r1 1\nadd r1 r1 2\nlt r2 r1 9\nhalt\n")
    s = state(img.words)
    t, n = run(s, 100)
    assert t.state == ExecState.Halted and n == len(img.words)


def test_fast_forward_agrees_with_plain_stepping():
    src = "mov r5 pc\nlea r5 2\nadd r1 r1 1\nlt r2 r1 5000\njnz r5 r2\nhalt\n"
    s = state(assemble(src).words)
    for fuel in (10, 777, 4000, 20000):
        a, na = run(s, fuel, fast_forward=True)
        b, nb = run(s, fuel, fast_forward=False)
        assert (na, snapshot(a)) == (nb, snapshot(b))


def test_infinite_loop_exhausts_fuel_quickly():
    s = state(assemble("mov r5 pc\njmp r5\n").words)
    t, n = run(s, 10**7)
    assert n == 10**7 and t.state == ExecState.Running


def test_run_is_deterministic():
    s = toy()
    assert snapshot(run(s, 5)[0]) == snapshot(run(s, 5)[0])


@given(st.lists(words, max_size=6), st.lists(caps(), max_size=4))
def test_snapshot_roundtrip(ws, cs):
    s = MachineState(Config(addr_max=63, otype_max=63))
    for i, w in enumerate(ws):
        s.write(3 * i, w)
    for i, c in enumerate(cs):
        s.reg[i + 2] = c
    s.etbl = {0: 5}
    s.ec = 1
    assert snapshot(parse_snapshot(snapshot(s))) == snapshot(s)


def test_hash_growth_is_bounded():
    from cerisier.machine import HASH_LIMIT_BITS
    s = state(assemble("mov r1 5\nhash r1 r1\nhashconcat r1 r1 r1\nmov r5 pc\nlea r5 -2\njmp r5\n").words)
    t, n = run(s, 10_000)
    assert t.state == ExecState.Failed and n < 200
    assert one(("hash", "r2", "r1"), r1=1 << (HASH_LIMIT_BITS + 1)).state == ExecState.Failed
