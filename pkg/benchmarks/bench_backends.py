"""Compare the compiled and pure-Python kernels on case runs and a campaign.

    python3 benchmarks/bench_backends.py [--runs N] [--fuel N]

The pure kernel is loaded in a subprocess with CERISIER_PURE=1 so both
measurements use a cold, independent import.
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKLOAD = r"""
import json, sys, time
from cerisier import cases
from cerisier.harness import fuzz_campaign
from cerisier.machine import BACKEND, run
from cerisier.loader import build

runs, fuel = int(sys.argv[1]), int(sys.argv[2])
out = {"backend": BACKEND}
t = time.perf_counter()
for name in cases.CASES:
    for _ in range(20):
        cases.run_case(name)
out["cases_x20"] = time.perf_counter() - t

# a tight loop: no memory writes, so fast-forward is disabled to measure dispatch
src = "la r1 top\ntop:\n    add r2 r2 1\n    lt r3 r2 1000000000\n    jnz r1 r3\n    halt\n"
from cerisier.assembler import assemble
from cerisier.machine import MachineState, Cap
from cerisier.isa import MemPerm
img = assemble(src)
s = MachineState()
s.load_words(0, img.words)
s.reg[0] = Cap(MemPerm.RX, 0, len(img.words), 0)
t = time.perf_counter()
_, n = run(s, 300_000, inplace=True, fast_forward=False)
out["loop_steps_per_s"] = n / (time.perf_counter() - t)

t = time.perf_counter()
summary = fuzz_campaign(cases.spec_path("soc"), runs, fuel, monitors=True)
out["fuzz_soc"] = time.perf_counter() - t
out["fuzz_failures"] = len(summary.failures)
print(json.dumps(out))
"""


def measure(pure: bool, runs: int, fuel: int) -> dict:
    env = dict(os.environ)
    env.pop("CERISIER_PURE", None)
    if pure:
        env["CERISIER_PURE"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKLOAD, str(runs), str(fuel)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=1000)
    ap.add_argument("--fuel", type=int, default=50_000)
    a = ap.parse_args()
    fast, pure = measure(False, a.runs, a.fuel), measure(True, a.runs, a.fuel)
    print(f"{'metric':18} {fast['backend']:>12} {pure['backend']:>12} {'ratio':>7}")
    for k in ("cases_x20", "fuzz_soc"):
        print(f"{k + ' (s)':18} {fast[k]:12.3f} {pure[k]:12.3f} {pure[k] / fast[k]:7.2f}")
    k = "loop_steps_per_s"
    print(f"{'loop steps/s':18} {fast[k]:12.0f} {pure[k]:12.0f} {fast[k] / pure[k]:7.2f}")
    if fast["backend"] == pure["backend"]:
        print("note: compiled kernel not available; both columns are pure Python")


if __name__ == "__main__":
    main()
