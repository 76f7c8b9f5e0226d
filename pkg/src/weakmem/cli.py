"""Command-line driver.

    weakmem verify <files> [--backend builtin|external] [--json out.json] ...
    weakmem corpus <manifest.json>

Exit codes: 0 all verified / all expectations met, 1 verification failures
or expectation mismatches, 2 usage, IO or manifest errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from typing import Optional

from . import api, encoder, frontend, speclogic, syntax
from .api import FAILED, UNSUPPORTED, VERIFIED, VerifyOptions

SCHEMA_VERSION = 1


@dataclass
class RunConfig:
    paths: list
    backend: str = "builtin"
    solver_cmd: Optional[str] = None
    solver_timeout_ms: int = 10000
    branch_cap: int = 4096
    jobs: int = 1
    trace: bool = False
    dump_primitives: bool = False
    dump_invariants: bool = False
    check_soundness: bool = False
    strict_invariants: bool = False
    json_out: Optional[str] = None

    def validate(self) -> None:
        if self.backend == "external" and not self.solver_cmd:
            raise ValueError("--backend external requires --solver-cmd")


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weakmem",
        description="Deductive verifier for annotated weak-memory programs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--backend", choices=("builtin", "external"),
                       default="builtin")
        p.add_argument("--solver-cmd", help="external SMT solver command line")
        p.add_argument("--solver-timeout-ms", type=int, default=10000)
        p.add_argument("--branch-cap", type=int, default=4096)
        p.add_argument("--jobs", type=int, default=1,
                       help="verify procedures in parallel")
        p.add_argument("--trace", action="store_true",
                       help="stream executed primitives as JSON lines on stderr")
        p.add_argument("--check-soundness-invariants", action="store_true",
                       dest="check_soundness")
        p.add_argument("--strict-invariants", action="store_true")

    pv = sub.add_parser("verify", help="verify annotated source files")
    pv.add_argument("files", nargs="+")
    common(pv)
    pv.add_argument("--json", dest="json_out", help="write a JSON report")
    pv.add_argument("--dump-primitives", action="store_true")
    pv.add_argument("--dump-invariants", action="store_true")

    pc = sub.add_parser("corpus", help="run a corpus manifest and check expectations")
    pc.add_argument("manifest")
    common(pc)
    pc.add_argument("--json", dest="json_out", help="write a JSON report")
    return parser


def _options(cfg: RunConfig) -> VerifyOptions:
    trace_fn = None
    if cfg.trace:
        def trace_fn(span, text, digest):
            sys.stderr.write(json.dumps({
                "line": span.line, "col": span.col,
                "primitive": text, "state": digest,
            }, sort_keys=True) + "\n")
    return VerifyOptions(
        backend=cfg.backend, solver_cmd=cfg.solver_cmd,
        solver_timeout_ms=cfg.solver_timeout_ms, branch_cap=cfg.branch_cap,
        check_soundness=cfg.check_soundness,
        strict_invariants=cfg.strict_invariants,
        jobs=cfg.jobs, trace=trace_fn)


def _file_json(result: api.FileResult) -> dict:
    return {
        "path": result.path,
        "parse_diagnostics": [d.to_json() for d in result.parse_diagnostics],
        "procedures": [v.to_json() for v in result.verdicts],
    }


def _report_json(results: list, soundness: bool) -> dict:
    report = {"schema": SCHEMA_VERSION, "files": [_file_json(r) for r in results]}
    if soundness:
        report["soundness"] = [rep.to_json() for r in results for rep in r.soundness]
    return report


def _print_result(result: api.FileResult, out) -> None:
    print(f"{result.path}:", file=out)
    for d in result.parse_diagnostics:
        print(f"  {d.format()}", file=out)
    for v in result.verdicts:
        mark = {VERIFIED: "ok", FAILED: "FAIL", UNSUPPORTED: "unsupported"}[v.status]
        extra = f" ({v.reason})" if v.reason else ""
        print(f"  {v.name}: {mark}{extra} [{v.time_ms:.0f} ms]", file=out)
        for d in v.diagnostics:
            print(f"    {d.format()}", file=out)


def cmd_verify(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    opts = _options(cfg)
    results: list[api.FileResult] = []
    for path in cfg.paths:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                source = fh.read()
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if cfg.dump_invariants or cfg.dump_primitives:
            code = _dump(source, path, cfg, out)
            if code is not None:
                return code
            continue
        results.append(api.verify_source(source, path=path, opts=opts))
    for r in results:
        _print_result(r, out)
    if cfg.json_out and results:
        report = _report_json(results, cfg.check_soundness)
        with open(cfg.json_out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0 if all(r.ok for r in results) else 1


def _dump(source: str, path: str, cfg: RunConfig, out) -> Optional[int]:
    program, diags = frontend.parse(source)
    if diags:
        for d in diags:
            print(f"{path}: {d.format()}", file=sys.stderr)
        return 1
    checked = frontend.mode_check(program)
    if checked.diagnostics:
        for d in checked.diagnostics:
            print(f"{path}: {d.format()}", file=sys.stderr)
        return 1
    table = speclogic.build_invariant_table(checked)
    if cfg.dump_invariants:
        json.dump(table.to_json(), out, indent=2, sort_keys=True)
        out.write("\n")
    if cfg.dump_primitives:
        obligations = []
        for proc in program.procedures:
            obligations.extend(encoder.build_obligations(checked, table, proc))
        out.write(encoder.dump_primitives(obligations, table))
    return None


# ---------------------------------------------------------------------------
# Corpus runner
# ---------------------------------------------------------------------------

class ManifestError(Exception):
    pass


@dataclass
class CorpusEntry:
    name: str
    file: str
    expect: str                      # verified | failed | unsupported
    pp_max: Optional[int] = None
    li_max: Optional[int] = None
    error_line: Optional[int] = None
    reason: str = ""


def load_manifest(path: str) -> list[CorpusEntry]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(str(exc)) from exc
    entries = []
    for item in raw.get("entries", []):
        try:
            entries.append(CorpusEntry(
                name=item["name"], file=item["file"], expect=item["expect"],
                pp_max=item.get("pp_max"), li_max=item.get("li_max"),
                error_line=item.get("error_line"), reason=item.get("reason", "")))
        except KeyError as exc:
            raise ManifestError(f"manifest entry missing key {exc}") from exc
    if not entries:
        raise ManifestError("manifest has no entries")
    return entries


def count_annotations(program: syntax.Program) -> dict:
    """Pre/post pairs, loop invariants and other annotations of a program."""
    pp = sum(1 for p in program.procedures if p.has_spec)
    li = 0
    other = 0
    funcs = len(program.procedures)
    loops = 0
    stmts = 0
    for proc in program.procedures:
        for st in syntax.walk_stmts(proc.body):
            stmts += 1
            if isinstance(st, syntax.SWhile):
                loops += 1
                if st.invariant is not None:
                    li += 1
            elif isinstance(st, syntax.SPar):
                funcs += len(st.threads)
                pp += sum(1 for t in st.threads if t.has_spec)
            elif isinstance(st, (syntax.SAllocAtomic, syntax.SFenceRel,
                                 syntax.SRewrite, syntax.SGhostAlloc)):
                other += 1
    return {"pp": pp, "li": li, "other": other,
            "funcs": funcs, "loops": loops, "stmts": stmts}


def _loc_of(source: str) -> int:
    count = 0
    for line in source.splitlines():
        stripped = line.strip()
        if stripped and not stripped.startswith("//"):
            count += 1
    return count


def run_corpus(manifest_path: str, cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    import os
    entries = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    opts = _options(cfg)
    mismatches: list[str] = []
    rows: list[dict] = []
    for entry in entries:
        path = os.path.join(base, entry.file)
        try:
            with open(path, "r", encoding="utf-8") as fh:
                source = fh.read()
        except OSError as exc:
            raise ManifestError(f"{entry.name}: {exc}") from exc
        start = time.monotonic()
        result = api.verify_source(source, path=path, opts=opts)
        elapsed = time.monotonic() - start
        program = result.program
        counts = count_annotations(program) if program else {}
        if result.parse_diagnostics:
            status = FAILED
            diags = result.parse_diagnostics
        else:
            if any(v.status == UNSUPPORTED for v in result.verdicts):
                status = UNSUPPORTED
            elif all(v.status == VERIFIED for v in result.verdicts):
                status = VERIFIED
            else:
                status = FAILED
            diags = [d for v in result.verdicts for d in v.diagnostics]
        if status != entry.expect:
            mismatches.append(
                f"{entry.name}: expected {entry.expect}, got {status}")
        if entry.expect == FAILED and entry.error_line is not None:
            if not any(d.span.line == entry.error_line for d in diags):
                lines = sorted({d.span.line for d in diags})
                mismatches.append(
                    f"{entry.name}: no diagnostic at seeded line "
                    f"{entry.error_line} (got lines {lines})")
        if entry.pp_max is not None and counts and counts["pp"] > entry.pp_max:
            mismatches.append(
                f"{entry.name}: {counts['pp']} pre/post pairs exceed budget "
                f"{entry.pp_max}")
        if entry.li_max is not None and counts and counts["li"] > entry.li_max:
            mismatches.append(
                f"{entry.name}: {counts['li']} loop invariants exceed budget "
                f"{entry.li_max}")
        rows.append({
            "name": entry.name,
            "size": f"{_loc_of(source)},{counts.get('funcs', 0)},{counts.get('loops', 0)}",
            "time_s": f"{elapsed:.2f}",
            "pp": counts.get("pp", 0),
            "li": counts.get("li", 0),
            "other": counts.get("other", 0),
            "verdict": status,
        })

    widths = {k: max(len(str(r[k])) for r in rows + [dict.fromkeys(rows[0], k)])
              for k in rows[0]}
    header = {"name": "Program", "size": "Size(LOC,funcs,loops)",
              "time_s": "Time(s)", "pp": "PP", "li": "LI",
              "other": "Other", "verdict": "Verdict"}
    widths = {k: max(widths[k], len(header[k])) for k in widths}
    fmt = "  ".join(f"{{{k}:<{widths[k]}}}" for k in rows[0])
    print(fmt.format(**header), file=out)
    for r in rows:
        print(fmt.format(**r), file=out)
    if cfg.json_out:
        with open(cfg.json_out, "w", encoding="utf-8") as fh:
            json.dump({"schema": SCHEMA_VERSION, "rows": rows,
                       "mismatches": mismatches}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if mismatches:
        print("", file=out)
        for m in mismatches:
            print(f"MISMATCH {m}", file=out)
        return 1
    print(f"\nall {len(rows)} corpus expectations met", file=out)
    return 0


def main(argv: Optional[list] = None) -> int:
    parser = _make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    cfg = RunConfig(
        paths=getattr(args, "files", []),
        backend=args.backend,
        solver_cmd=args.solver_cmd,
        solver_timeout_ms=args.solver_timeout_ms,
        branch_cap=args.branch_cap,
        jobs=args.jobs,
        trace=args.trace,
        dump_primitives=getattr(args, "dump_primitives", False),
        dump_invariants=getattr(args, "dump_invariants", False),
        check_soundness=args.check_soundness,
        strict_invariants=args.strict_invariants,
        json_out=args.json_out,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "verify":
            return cmd_verify(cfg)
        return run_corpus(args.manifest, cfg)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
