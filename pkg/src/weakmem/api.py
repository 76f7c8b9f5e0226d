"""High-level verification pipeline: parse, check, encode, execute, report."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import encoder, frontend, monitor, speclogic, symstate, syntax
from .diagnostics import Diagnostic, FrontendError, SOUNDNESS_VIOLATION, UnsupportedFeature
from .solver import Solver, SolverConfig

VERIFIED = "verified"
FAILED = "failed"
UNSUPPORTED = "unsupported"


@dataclass
class VerifyOptions:
    backend: str = "builtin"
    solver_cmd: Optional[str] = None
    solver_timeout_ms: int = 10000
    branch_cap: int = 4096
    check_soundness: bool = False
    strict_invariants: bool = False
    jobs: int = 1
    trace: Optional[Callable] = None


@dataclass
class ProcVerdict:
    name: str
    status: str
    diagnostics: list = field(default_factory=list)
    reason: str = ""                   # for unsupported
    time_ms: float = 0.0
    obligations: list = field(default_factory=list)   # ObligationResult per obligation

    def to_json(self) -> dict:
        out = {
            "name": self.name,
            "status": self.status,
            "diagnostics": [d.to_json() for d in self.diagnostics],
            "time_ms": round(self.time_ms, 3),
        }
        if self.reason:
            out["reason"] = self.reason
        return out


@dataclass
class FileResult:
    path: str
    program: Optional[syntax.Program] = None
    checked: Optional[frontend.CheckedProgram] = None
    table: Optional[speclogic.InvariantTable] = None
    parse_diagnostics: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    soundness: list = field(default_factory=list)      # StateReport per boundary
    solver: Optional[Solver] = None

    @property
    def ok(self) -> bool:
        return not self.parse_diagnostics and all(
            v.status == VERIFIED for v in self.verdicts)

    def verdict_of(self, name: str) -> ProcVerdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)


def _verify_proc(proc, checked, table, solver, opts, soundness_sink) -> ProcVerdict:
    start = time.monotonic()
    verdict = ProcVerdict(name=proc.name, status=VERIFIED)
    try:
        obligations = encoder.build_obligations(checked, table, proc, solver)
    except UnsupportedFeature as exc:
        verdict.status = UNSUPPORTED
        verdict.reason = exc.reason
        verdict.time_ms = (time.monotonic() - start) * 1000
        return verdict
    except FrontendError as exc:
        verdict.status = FAILED
        verdict.diagnostics.append(exc.diagnostic)
        verdict.time_ms = (time.monotonic() - start) * 1000
        return verdict
    for ob in obligations:
        on_boundary = None
        if opts.check_soundness:
            def on_boundary(state, span, desc, _ob=ob):
                report = monitor.make_report(_ob.name, desc, span, state, solver,
                                             _ob.var_classes, table)
                soundness_sink.append(report)
                if opts.strict_invariants and report.violations:
                    verdict.diagnostics.append(Diagnostic(
                        SOUNDNESS_VIOLATION, span, rule="soundness monitor",
                        message="; ".join(v.format() for v in report.violations)))
        config = symstate.ExecConfig(branch_cap=opts.branch_cap,
                                     trace=opts.trace,
                                     on_boundary=on_boundary)
        try:
            result = symstate.run_obligation(ob, solver, config)
        except UnsupportedFeature as exc:
            verdict.status = UNSUPPORTED
            verdict.reason = exc.reason
            break
        except FrontendError as exc:
            verdict.status = FAILED
            verdict.diagnostics.append(exc.diagnostic)
            break
        verdict.obligations.append(result)
        verdict.diagnostics.extend(result.diagnostics)
    if verdict.status == VERIFIED and verdict.diagnostics:
        verdict.status = FAILED
    verdict.time_ms = (time.monotonic() - start) * 1000
    return verdict


def verify_source(source: str, path: str = "<input>",
                  opts: Optional[VerifyOptions] = None) -> FileResult:
    """Verify every procedure of a program text."""
    opts = opts or VerifyOptions()
    result = FileResult(path=path)
    program, parse_diags = frontend.parse(source)
    result.program = program
    if parse_diags:
        result.parse_diagnostics = parse_diags
        return result
    checked = frontend.mode_check(program)
    result.checked = checked
    if checked.diagnostics:
        result.parse_diagnostics = checked.diagnostics
        return result
    try:
        table = speclogic.build_invariant_table(checked)
    except FrontendError as exc:
        result.parse_diagnostics = [exc.diagnostic]
        return result
    result.table = table
    solver = Solver(SolverConfig(backend=opts.backend,
                                 solver_cmd=opts.solver_cmd,
                                 timeout_ms=opts.solver_timeout_ms))
    result.solver = solver

    def work(proc):
        return _verify_proc(proc, checked, table, solver, opts, result.soundness)

    if opts.jobs > 1 and len(program.procedures) > 1:
        with ThreadPoolExecutor(max_workers=opts.jobs) as pool:
            result.verdicts = list(pool.map(work, program.procedures))
    else:
        result.verdicts = [work(p) for p in program.procedures]
    return result


def verify_file(path: str, opts: Optional[VerifyOptions] = None) -> FileResult:
    with open(path, "r", encoding="utf-8") as fh:
        source = fh.read()
    return verify_source(source, path=path, opts=opts)
