"""The three enclave case studies as runnable systems with expectations.

Each case lives next to this file as a ``.spec`` plus ``.casm`` units.
Variants share units and swap the adversary (or plant a word).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from ..harness import FUZZ_FUEL, RunReport, run_system
from ..loader import SystemImage, build, enclave_identity
from ..isa import format_word
from ..machine import MachineState, trace

HERE = os.path.dirname(os.path.abspath(__file__))
GOLDEN_DIR = os.path.join(HERE, "golden")


@dataclass
class Variant:
    spec: str
    outcome: str
    flag: int = 0
    result: object = None
    stop: str | None = None          # symbol where a Failed run must stop
    notes: str = ""


@dataclass
class CaseStudy:
    name: str
    result_reg: str
    variants: dict = field(default_factory=dict)


CASES = {
    "soc": CaseStudy("soc", "r8", {
        "intended": Variant("soc.spec", "Halted", 0, 42),
        "modified": Variant("soc_modified.spec", "Failed", 0, stop="client.abort",
                            notes="patched enclave measures differently; client aborts"),
        "forge": Variant("soc_forge.spec", "Failed", 0, stop="client.ret+1",
                         notes="unsealed forgery; estoreid(-1) fails"),
        "broken": Variant("soc_broken.spec", "Halted", 1, 42,
                          notes="client asserts 41; the detector must see flag=1"),
    }),
    "mutual": CaseStudy("mutual", "r8", {
        "intended": Variant("mutual.spec", "Halted", 0, 43),
        "tampered": Variant("mutual_tampered.spec", "Failed", 0, stop="encb.abort",
                            notes="B's table copy disagrees with A's measured identity"),
    }),
    "sensor": CaseStudy("sensor", "r1", {
        "intended": Variant("sensor.spec", "Halted", 0, 42),
        "aliased": Variant("sensor_aliased.spec", "Failed", 0, stop="reader.refuse",
                           notes="isunique sees the planted alias and returns 0"),
        "unregistered": Variant("sensor_unregistered.spec", "Failed", 0, stop="transformer.attest",
                                notes="estoreid on a torn-down otype fails"),
    }),
}


def spec_path(name: str) -> str:
    """Path of a bundled spec, by case name (``soc``) or file name."""
    if name in CASES:
        name = CASES[name].variants["intended"].spec
    if not name.endswith(".spec"):
        name += ".spec"
    return os.path.join(HERE, name)


def symbolize(image: SystemImage, addr: int) -> str:
    """``region.label+k`` for the closest label at or below ``addr``."""
    r = image.region_of(addr)
    if r is None:
        return str(addr)
    best, best_a = r.name, r.base
    if r.image is not None:
        for lab, a in r.image.symbols.items():
            if best_a <= a <= addr and (a > best_a or best == r.name):
                best, best_a = f"{r.name}.{lab}", a
    return best if addr == best_a else f"{best}+{addr - best_a}"


@dataclass
class CaseRun:
    name: str
    variant: str
    report: RunReport
    image: SystemImage
    observations: dict
    mismatches: list

    @property
    def ok(self) -> bool:
        return not self.mismatches


class _Watch:
    """Records register values when execution reaches given addresses."""

    def __init__(self, points: dict):
        self.points = points          # addr -> (label, [regs])
        self.seen: dict = {}

    def before(self, m, c):
        pc = m.reg[0]
        hit = self.points.get(getattr(pc, "a", None))
        if hit is not None:
            label, regs = hit
            self.seen.setdefault(label, []).append(tuple(m.reg[r] for r in regs))
        return None

    def after(self, m, c, token):
        pass


def _observe(name: str, image: SystemImage, s: MachineState, watch: _Watch) -> dict:
    obs: dict = {"etbl_entries": len(s.etbl)}
    pc = s.reg[0]
    obs["stop"] = symbolize(image, pc.a) if hasattr(pc, "a") else format_word(pc)
    if name == "soc":
        obs["id_soc_matches"] = list(s.etbl.values()) == [image.env["id:soc"]]
    elif name == "mutual":
        a, b = image.region("adata").base, image.region("bdata").base
        obs["a_state"] = s.read(a + 1)
        obs["a_learned"] = s.read(a + 2)
        obs["b_learned"] = s.read(b + 2)
        id_a = enclave_identity(image.region("enca").image, image.config.hash_mode)
        rows = watch.seen.get("b_check", [])
        # B compares the attested identity of its peer with its own reconstruction
        obs["b_reconstructed_a"] = bool(rows) and rows[0][1] == id_a and id_a in s.etbl.values()
    elif name == "sensor":
        obs["sensor_cell"] = s.read(image.region("sensor").base)
        rows = watch.seen.get("verdict", [])
        obs["isunique"] = rows[-1][0] if rows else None
    return obs


def _watch_points(name: str, image: SystemImage) -> dict:
    env = image.env
    if name == "mutual":
        return {env["enca.check"]: ("a_check", [23, 26]), env["encb.check"]: ("b_check", [23, 26])}
    if name == "sensor":
        return {env["reader.verdict"]: ("verdict", [22])}
    return {}


def run_case(name: str, variant: str = "intended", fuel: int = FUZZ_FUEL,
             monitor: str | None = None) -> CaseRun:
    """Build and run one variant, then check it against its expectations."""
    case = CASES[name]
    v = case.variants[variant]
    image, s = build(os.path.join(HERE, v.spec))
    watch = _Watch(_watch_points(name, image))
    report = run_system(image, s, fuel, monitor=monitor, result_reg=case.result_reg, probe=watch)
    obs = _observe(name, image, s, watch)
    return CaseRun(name, variant, report, image, obs, _expectations(name, v, report, obs, image))


def _expectations(name: str, v: Variant, rep: RunReport, obs: dict, image: SystemImage) -> list:
    out = []
    if rep.outcome != v.outcome:
        out.append(f"outcome {rep.outcome}, expected {v.outcome}")
    if rep.assert_flag != v.flag:
        out.append(f"flag {rep.assert_flag}, expected {v.flag}")
    if v.result is not None and rep.result != v.result:
        out.append(f"result {rep.result!r}, expected {v.result}")
    if v.stop is not None and obs["stop"] != v.stop:
        out.append(f"stopped at {obs['stop']}, expected {v.stop}")
    if rep.invariant_violations:
        out.append(f"{len(rep.invariant_violations)} invariant violations")
    if v.outcome == "Halted" and v.flag == 0:
        if name == "soc" and not obs.get("id_soc_matches"):
            out.append("enclave table does not hold exactly ID_SOC")
        if name == "mutual":
            if (obs["a_learned"], obs["b_learned"]) != (43, 42):
                out.append(f"learned A={obs['a_learned']} B={obs['b_learned']}, expected 43/42")
            if not obs["b_reconstructed_a"]:
                out.append("B's reconstructed identity differs from A's table entry")
        if name == "sensor" and obs["sensor_cell"] != 21:
            out.append(f"sensor cell {obs['sensor_cell']}, expected 21")
    if name == "sensor" and v.stop == "reader.refuse" and obs.get("isunique") != 0:
        out.append(f"isunique returned {obs.get('isunique')!r}, expected 0")
    return out


def run_soc(variant: str = "intended", **kw) -> CaseRun:
    return run_case("soc", variant, **kw)


def run_mutual(variant: str = "intended", **kw) -> CaseRun:
    return run_case("mutual", variant, **kw)


def run_sensor(variant: str = "intended", **kw) -> CaseRun:
    return run_case("sensor", variant, **kw)


def case_trace(name: str, variant: str = "intended", fuel: int = FUZZ_FUEL) -> str:
    _, s = build(os.path.join(HERE, CASES[name].variants[variant].spec))
    return "".join(line + "\n" for line in trace(s, fuel, inplace=True))


def golden_path(name: str) -> str:
    return os.path.join(GOLDEN_DIR, f"{name}.trace")


def golden_diff(name: str) -> list[str]:
    """Differences between the intended run's trace and the stored golden trace."""
    import difflib
    with open(golden_path(name)) as f:
        want = f.read()
    got = case_trace(name)
    if got == want:
        return []
    return list(difflib.unified_diff(want.splitlines(), got.splitlines(), "golden", "run", lineterm="", n=1))


def write_golden(name: str) -> str:
    os.makedirs(GOLDEN_DIR, exist_ok=True)
    path = golden_path(name)
    with open(path, "w") as f:
        f.write(case_trace(name))
    return path
