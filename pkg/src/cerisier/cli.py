"""``cerisier`` command line: asm, run, trace, fuzz, case, check."""

from __future__ import annotations

import argparse
import os
import sys
import time

from . import cases
from .assembler import AsmError, assemble, disassemble_image, parse_int
from .harness import FUZZ_FUEL, RunReport, fuzz_campaign, run_system
from .isa import format_word
from .loader import (BuildError, SpecError, _region_violations, build, check_wellformed,
                     load_spec, parse_config)
from .machine import MUTATIONS, snapshot, trace

EXIT_OK, EXIT_FAILED, EXIT_FUEL, EXIT_ASSERT, EXIT_USAGE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_arg(text: str) -> int:
    z = parse_int(text)
    if z is None:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return z


def _config_defaults() -> dict:
    path = os.environ.get("CERISIER_CONFIG")
    if not path:
        return {}
    with open(path) as f:
        return parse_config(f.read(), source=path)


def _spec(path: str):
    if not os.path.exists(path) and os.path.exists(cases.spec_path(path)):
        path = cases.spec_path(path)   # bundled specs by short name
    return load_spec(path, defaults=_config_defaults())


def _status(rep: RunReport) -> int:
    if rep.assert_flag != 0 or rep.invariant_violations:
        return EXIT_ASSERT
    return {"Halted": EXIT_OK, "Failed": EXIT_FAILED, "FuelExhausted": EXIT_FUEL}[rep.outcome]


def _result_text(w) -> str:
    if w is None:
        return "-"
    return str(w) if type(w) is int else format_word(w)


def _report_text(rep: RunReport, fmt: str) -> str:
    result = _result_text(rep.result)
    if fmt == "tsv":
        return f"outcome\tsteps\tflag\tviolations\tresult\n{rep.outcome}\t{rep.steps}\t" \
               f"{rep.assert_flag}\t{len(rep.invariant_violations)}\t{result}\n"
    lines = [rep.line() + f" result={result}"]
    lines += [f"violation {v}" for v in rep.invariant_violations]
    return "\n".join(lines) + "\n"


# -- subcommands ---------------------------------------------------------------------


def cmd_asm(a, out, err) -> int:
    env = {}
    for kv in a.env:
        k, _, v = kv.partition("=")
        if parse_int(v) is None:
            raise UsageError(f"--env expects KEY=INT, got {kv!r}")
        env[k] = parse_int(v)
    with open(a.file) as f:
        img = assemble(f.read(), a.base, env, source=a.file, strict=not a.allow_unresolved)
    for key in sorted(img.missing):
        err.write(f"warning: {key} unresolved, assembled as 0\n")
    text = "".join(f"{img.base + i} {format_word(w)}\n" for i, w in enumerate(img.words))
    header = f"cerisier-image v1 base={img.base} size={len(img.words)}\n"
    if a.output:
        with open(a.output, "w") as f:
            f.write(header + text)
        if a.sym:
            with open(a.output + ".sym", "w") as f:
                f.write(img.sidecar())
    elif a.listing:
        out.write(disassemble_image(img))
    else:
        out.write(header + text)
        if a.sym:
            out.write(img.sidecar())
    return EXIT_OK


def _run_like(a, out, with_trace: bool) -> int:
    image, s = build(_spec(a.spec))
    if with_trace:
        s0 = s.copy()
        for line in trace(s0, a.fuel):
            out.write(line + "\n")
    rep = run_system(image, s, a.fuel, monitor=a.monitor, result_reg=a.result)
    out.write(_report_text(rep, a.format))
    if a.snapshot:
        with open(a.snapshot, "w") as f:
            f.write(snapshot(s))
    return _status(rep)


def cmd_run(a, out, err) -> int:
    return _run_like(a, out, False)


def cmd_trace(a, out, err) -> int:
    return _run_like(a, out, True)


def cmd_fuzz(a, out, err) -> int:
    spec = _spec(a.spec)
    summary = fuzz_campaign(spec, a.runs, a.fuel, monitors=a.monitors, seed=a.seed,
                            mutations=tuple(a.mutation), length=a.length, workers=a.workers)
    text = summary.text(a.format)
    if a.quiet:
        keep = [r.line() if a.format != "tsv" else r.tsv() for r in summary.failures]
        text = "".join(line + "\n" for line in keep) + text.splitlines(keepends=True)[-1]
    out.write(text)
    return EXIT_ASSERT if summary.failures else EXIT_OK


def cmd_case(a, out, err) -> int:
    if a.write_golden:
        path = cases.write_golden(a.name)
        out.write(f"wrote {os.path.relpath(path)}\n")
        return EXIT_OK
    cr = cases.run_case(a.name, a.variant, a.fuel, monitor="incremental")
    rep = cr.report
    result = _result_text(rep.result)
    if a.format == "tsv":
        out.write("case\tvariant\toutcome\tsteps\tresult\tflag\tstop\tok\n")
        out.write(f"{a.name}\t{a.variant}\t{rep.outcome}\t{rep.steps}\t{result}\t"
                  f"{rep.assert_flag}\t{cr.observations['stop']}\t{int(cr.ok)}\n")
    else:
        out.write(f"case={a.name} variant={a.variant} outcome={rep.outcome} steps={rep.steps}\n")
        for k in sorted(cr.observations):
            out.write(f"obs {k}={cr.observations[k]}\n")
        out.write(f"result={result} flag={rep.assert_flag}\n")
    for m in cr.mismatches:
        out.write(f"MISMATCH {m}\n")
    golden_bad = False
    if a.ci and a.variant == "intended":
        diff = cases.golden_diff(a.name)
        for line in diff:
            out.write(f"golden {line}\n")
        golden_bad = bool(diff)
        out.write(f"golden {'differs' if golden_bad else 'matches'}\n")
    if not cr.ok:
        want = cases.CASES[a.name].variants[a.variant].outcome
        if rep.outcome != want and rep.outcome == "Failed":
            return EXIT_FAILED
        if rep.outcome != want and rep.outcome == "FuelExhausted":
            return EXIT_FUEL
        return EXIT_ASSERT
    return EXIT_ASSERT if golden_bad else EXIT_OK


def cmd_check(a, out, err) -> int:
    try:
        image, s = build(_spec(a.spec), check=False)
    except BuildError as e:
        violations = e.violations
    else:
        violations = _region_violations(image.spec) + check_wellformed(s, image)
    for v in violations:
        out.write(f"violation {v}\n")
    out.write(f"check {'failed' if violations else 'ok'} violations={len(violations)}\n")
    return EXIT_USAGE if violations else EXIT_OK


# -- entry point -------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cerisier", description=__doc__)
    p.add_argument("--ci", action="store_true", help="no timing footer; compare golden traces")
    p.add_argument("--format", choices=("text", "tsv"), default="text")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(q):
        # accept the global flags after the subcommand too
        q.add_argument("--ci", action="store_true", default=argparse.SUPPRESS)
        q.add_argument("--format", choices=("text", "tsv"), default=argparse.SUPPRESS)

    q = sub.add_parser("asm", help="assemble a unit")
    q.add_argument("file")
    q.add_argument("--base", type=_int_arg, default=0)
    q.add_argument("-o", "--output")
    q.add_argument("--sym", action="store_true", help="emit the symbol sidecar")
    q.add_argument("--listing", action="store_true", help="print a disassembled listing")
    q.add_argument("--env", action="append", default=[], metavar="KEY=INT",
                   help="value for an identity or cross-unit reference (e.g. id:soc=...)")
    q.add_argument("--allow-unresolved", action="store_true", help="assemble unknown references as 0")
    common(q)

    for name, helptext in (("run", "build and run a system"), ("trace", "run with per-step trace")):
        q = sub.add_parser(name, help=helptext)
        q.add_argument("spec")
        q.add_argument("--fuel", type=_int_arg, default=FUZZ_FUEL)
        q.add_argument("--snapshot", metavar="OUT")
        q.add_argument("--monitor", choices=("incremental", "full"))
        q.add_argument("--result", metavar="REG", help="register to report as the result")
        common(q)

    q = sub.add_parser("fuzz", help="adversary campaign")
    q.add_argument("spec")
    q.add_argument("--runs", type=_int_arg, default=100)
    q.add_argument("--fuel", type=_int_arg, default=FUZZ_FUEL)
    q.add_argument("--seed", type=_int_arg, default=0)
    q.add_argument("--monitors", action="store_true")
    q.add_argument("--mutation", action="append", default=[], choices=sorted(MUTATIONS))
    q.add_argument("--length", type=_int_arg, default=48)
    q.add_argument("--workers", type=_int_arg, default=1)
    q.add_argument("--quiet", action="store_true", help="print failing runs only")
    common(q)

    q = sub.add_parser("case", help="run a case study against its expectations")
    q.add_argument("name", choices=sorted(cases.CASES))
    q.add_argument("--variant", default="intended")
    q.add_argument("--fuel", type=_int_arg, default=FUZZ_FUEL)
    q.add_argument("--write-golden", action="store_true")
    common(q)

    q = sub.add_parser("check", help="well-formedness only")
    q.add_argument("spec")
    common(q)
    return p


COMMANDS = {"asm": cmd_asm, "run": cmd_run, "trace": cmd_trace, "fuzz": cmd_fuzz,
            "case": cmd_case, "check": cmd_check}


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    t0 = time.perf_counter()
    try:
        a = make_parser().parse_args(argv)
        if a.cmd == "case" and a.variant not in cases.CASES[a.name].variants:
            raise UsageError(f"unknown variant {a.variant!r} for {a.name}; "
                             f"choose from {', '.join(cases.CASES[a.name].variants)}")
        code = COMMANDS[a.cmd](a, out, err)
    except UsageError as e:
        err.write(f"{e}\n")
        return EXIT_USAGE
    except SystemExit as e:          # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    except (AsmError, SpecError) as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE
    except BuildError as e:
        for v in e.violations:
            err.write(f"violation {v}\n")
        return EXIT_USAGE
    except OSError as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE
    if not a.ci:
        err.write(f"elapsed {time.perf_counter() - t0:.3f}s\n")
    return code


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
