"""Decision procedures for path conditions.

The built-in procedure decides conjunctions of:

* linear (in)equalities over integer-sorted terms,
* linear constraints over rational permission amounts (wildcard tokens),
* boolean combinations of the above (with bounded case splitting),
* ground membership / equality facts over finite integer sets.

It is a standard two-layer design: a splitting layer reduces formulas to
conjunctions of literals, and an exact-rational simplex (general simplex with
infinitesimals for strict bounds, plus branch-and-bound for integer-sorted
atoms) decides each conjunction.  Non-linear atoms (general products, modulo,
bitwise operations) are treated as uninterpreted, so "unsat" answers remain
sound; queries whose verdict would depend on their semantics come back
``unknown`` unless an external SMT backend is configured.

``unknown`` is never treated as success by callers: the verifier turns it
into a verification failure tagged ``incomplete-solver``.
"""

from __future__ import annotations

import shlex
import subprocess
from dataclasses import dataclass, field
from fractions import Fraction
from math import ceil, floor
from typing import Iterable, Optional

from . import terms
from .terms import Term

YES = "yes"
NO = "no"
UNKNOWN = "unknown"

SAT = "sat"
UNSAT = "unsat"

_CASE_CAP = 4096
_BRANCH_DEPTH_CAP = 48


class ExternalSolverError(Exception):
    """The external SMT process failed or produced no usable verdict."""


@dataclass
class Result:
    verdict: str                  # yes | no | unknown
    hint: Optional[str] = None    # counter-model sketch for "no"


# ---------------------------------------------------------------------------
# Delta numbers: rationals extended with an infinitesimal for strict bounds
# ---------------------------------------------------------------------------

class Delta:
    __slots__ = ("real", "eps")

    def __init__(self, real: Fraction, eps: Fraction = Fraction(0)):
        self.real = real
        self.eps = eps

    def __add__(self, o: "Delta") -> "Delta":
        return Delta(self.real + o.real, self.eps + o.eps)

    def __sub__(self, o: "Delta") -> "Delta":
        return Delta(self.real - o.real, self.eps - o.eps)

    def scaled(self, k: Fraction) -> "Delta":
        return Delta(self.real * k, self.eps * k)

    def __lt__(self, o: "Delta") -> bool:
        return (self.real, self.eps) < (o.real, o.eps)

    def __le__(self, o: "Delta") -> bool:
        return (self.real, self.eps) <= (o.real, o.eps)

    def __eq__(self, o) -> bool:
        return isinstance(o, Delta) and (self.real, self.eps) == (o.real, o.eps)

    def __repr__(self) -> str:  # pragma: no cover
        return f"{self.real}{'+' if self.eps >= 0 else ''}{self.eps}e"


_D0 = Delta(Fraction(0))


# ---------------------------------------------------------------------------
# Simplex over a conjunction of linear literals
# ---------------------------------------------------------------------------

class _Simplex:
    """General simplex (Dutertre/de Moura style), rebuilt per query.

    Atoms of the input literals become columns; each distinct linear form
    becomes a slack row.  Strict bounds use the infinitesimal component.
    """

    def __init__(self):
        self.cols: dict[Term, int] = {}        # atom -> var index
        self.int_vars: set[int] = set()
        self.rows: dict[tuple, int] = {}       # canonical form -> var index
        self.tableau: dict[int, dict[int, Fraction]] = {}
        self.lower: dict[int, Delta] = {}
        self.upper: dict[int, Delta] = {}
        self.assign: dict[int, Delta] = {}
        self.basic: set[int] = set()
        self.nonbasic: set[int] = set()
        self.n = 0
        self.conflict = False

    def _var(self, atom: Term) -> int:
        idx = self.cols.get(atom)
        if idx is None:
            idx = self.n
            self.n += 1
            self.cols[atom] = idx
            if atom.sort == terms.INT:
                self.int_vars.add(idx)
            self.nonbasic.add(idx)
            self.assign[idx] = _D0
        return idx

    def _slack(self, coeffs: dict[Term, Fraction]) -> int:
        key = tuple(sorted((a.tid, c) for a, c in coeffs.items()))
        idx = self.rows.get(key)
        if idx is None:
            row = {self._var(a): c for a, c in coeffs.items()}
            idx = self.n
            self.n += 1
            self.rows[key] = idx
            self.tableau[idx] = row
            self.basic.add(idx)
            self.assign[idx] = self._row_value(row)
        return idx

    def _row_value(self, row: dict[int, Fraction]) -> Delta:
        v = _D0
        for x, c in row.items():
            v = v + self.assign[x].scaled(c)
        return v

    def add_literal(self, kind: str, lin: Term) -> None:
        const, coeffs = terms.linear_parts(lin)
        if not coeffs:
            ok = const == 0 if kind == "eq0" else const <= 0 if kind == "le0" else const < 0
            if not ok:
                self.conflict = True
            return
        if len(coeffs) == 1:
            (atom, c), = coeffs.items()
            x = self._var(atom)
            bound = Delta(-const / c)
            flip = c < 0
        else:
            x = self._slack(coeffs)
            bound = Delta(-const)
            flip = False
        if kind == "eq0":
            self._tighten(x, bound, upper=True)
            self._tighten(x, bound, upper=False)
        elif kind == "le0":
            self._tighten(x, bound, upper=not flip)
        else:  # lt0
            b = Delta(bound.real, Fraction(-1) if not flip else Fraction(1))
            self._tighten(x, b, upper=not flip)

    def _tighten(self, x: int, b: Delta, upper: bool) -> None:
        if upper:
            cur = self.upper.get(x)
            if cur is None or b < cur:
                self.upper[x] = b
        else:
            cur = self.lower.get(x)
            if cur is None or cur < b:
                self.lower[x] = b
        lo, hi = self.lower.get(x), self.upper.get(x)
        if lo is not None and hi is not None and hi < lo:
            self.conflict = True

    # -- core algorithm ----------------------------------------------------

    def _out_of_bounds(self) -> Optional[tuple[int, bool]]:
        for x in sorted(self.basic):
            v = self.assign[x]
            lo, hi = self.lower.get(x), self.upper.get(x)
            if lo is not None and v < lo:
                return x, True
            if hi is not None and hi < v:
                return x, False
        return None

    def _update_nonbasic(self, x: int, v: Delta) -> None:
        dv = v - self.assign[x]
        self.assign[x] = v
        for b in self.basic:
            c = self.tableau[b].get(x)
            if c:
                self.assign[b] = self.assign[b] + dv.scaled(c)

    def _pivot(self, b: int, nb: int) -> None:
        row = self.tableau.pop(b)
        c = row[nb]
        new_row = {b: Fraction(1) / c}
        for x, k in row.items():
            if x != nb:
                new_row[x] = -k / c
        self.tableau[nb] = new_row
        for r, other in self.tableau.items():
            if r == nb:
                continue
            k = other.pop(nb, None)
            if k:
                for x, c2 in new_row.items():
                    other[x] = other.get(x, Fraction(0)) + k * c2
                    if other[x] == 0:
                        del other[x]
        self.basic.remove(b)
        self.basic.add(nb)
        self.nonbasic.remove(nb)
        self.nonbasic.add(b)

    def check(self) -> str:
        if self.conflict:
            return UNSAT
        # initialise nonbasics to a bound if they have one
        for x in list(self.nonbasic):
            lo, hi = self.lower.get(x), self.upper.get(x)
            v = lo if lo is not None else hi if hi is not None else _D0
            if v is not None and self.assign[x] != v:
                self._update_nonbasic(x, v)
        steps = 0
        while True:
            steps += 1
            if steps > 20000:  # safety valve; Bland's rule should terminate long before
                return UNKNOWN
            bad = self._out_of_bounds()
            if bad is None:
                return SAT
            xb, need_increase = bad
            row = self.tableau[xb]
            target = self.lower[xb] if need_increase else self.upper[xb]
            picked = None
            for xn in sorted(row):
                c = row[xn]
                if need_increase:
                    can = (c > 0 and self._can_increase(xn)) or (c < 0 and self._can_decrease(xn))
                else:
                    can = (c > 0 and self._can_decrease(xn)) or (c < 0 and self._can_increase(xn))
                if can:
                    picked = xn
                    break
            if picked is None:
                return UNSAT
            # pivotAndUpdate: move xb to its violated bound, shift picked
            theta = (target - self.assign[xb]).scaled(Fraction(1) / row[picked])
            self.assign[xb] = target
            self.assign[picked] = self.assign[picked] + theta
            for xk in self.basic:
                if xk != xb:
                    akj = self.tableau[xk].get(picked)
                    if akj:
                        self.assign[xk] = self.assign[xk] + theta.scaled(akj)
            self._pivot(xb, picked)

    def _can_increase(self, x: int) -> bool:
        hi = self.upper.get(x)
        return hi is None or self.assign[x] < hi

    def _can_decrease(self, x: int) -> bool:
        lo = self.lower.get(x)
        return lo is None or lo < self.assign[x]

    # -- models ------------------------------------------------------------

    def concrete_model(self) -> dict[Term, Fraction]:
        """Resolve the infinitesimal into a concrete positive rational."""
        delta = Fraction(1)
        checks: list[tuple[Delta, Delta]] = []
        for x in range(self.n):
            v = self.assign.get(x, _D0)
            lo, hi = self.lower.get(x), self.upper.get(x)
            if lo is not None:
                checks.append((lo, v))
            if hi is not None:
                checks.append((v, hi))
        for a, b in checks:
            # need real(a) + eps(a)*d <= real(b) + eps(b)*d
            if a.eps > b.eps and b.real > a.real:
                delta = min(delta, (b.real - a.real) / (a.eps - b.eps))
        out: dict[Term, Fraction] = {}
        for atom, x in self.cols.items():
            v = self.assign.get(x, _D0)
            out[atom] = v.real + v.eps * delta
        return out


def _check_linear(literals: list[tuple[str, Term]], depth: int = 0):
    """Decide a conjunction of linear literals.

    Returns (SAT, model) / (UNSAT, None) / (UNKNOWN, None).
    """
    sx = _Simplex()
    for kind, lin in literals:
        sx.add_literal(kind, lin)
    res = sx.check()
    if res != SAT:
        return res, None
    model = sx.concrete_model()
    for atom, val in sorted(model.items(), key=lambda kv: kv[0].tid):
        if atom.sort == terms.INT and val.denominator != 1:
            if depth >= _BRANCH_DEPTH_CAP:
                return UNKNOWN, None
            lo = literals + [("le0", terms.sub(atom, terms.mk_int(floor(val))))]
            r, m = _check_linear(lo, depth + 1)
            if r == SAT:
                return r, m
            hi = literals + [("le0", terms.sub(terms.mk_int(ceil(val)), atom))]
            r2, m2 = _check_linear(hi, depth + 1)
            if r2 == SAT:
                return r2, m2
            if r == UNKNOWN or r2 == UNKNOWN:
                return UNKNOWN, None
            return UNSAT, None
    return SAT, model


# ---------------------------------------------------------------------------
# Splitting layer: formulas -> conjunctions of literals
# ---------------------------------------------------------------------------

@dataclass
class _Case:
    linear: list[tuple[str, Term]] = field(default_factory=list)
    bools: dict[Term, bool] = field(default_factory=dict)
    opaque: bool = False


def _resolve_sets(fact: Term, defs: dict[Term, Term]) -> Term:
    """Substitute set-variable definitions collected from equalities."""
    if not defs:
        return fact
    return terms.substitute(fact, defs)


def _collect_set_defs(facts: Iterable[Term]) -> dict[Term, Term]:
    defs: dict[Term, Term] = {}
    for f in facts:
        if f.kind == "seteq":
            a, b = f.args
            if a.kind == "var" and a not in terms.free_atoms(b):
                defs.setdefault(a, b)
            elif b.kind == "var" and b not in terms.free_atoms(a):
                defs.setdefault(b, a)
    # one substitution round handles chained definitions used in practice
    for v, d in list(defs.items()):
        defs[v] = terms.substitute(d, {k: x for k, x in defs.items() if k is not v})
    return defs


def _split(facts: list[Term]):
    """Yield literal cases; raises _CapExceeded if the split blows up."""
    produced = 0
    stack: list[tuple[list[Term], _Case]] = [(list(facts), _Case())]
    while stack:
        todo, case = stack.pop()
        contradictory = False
        while todo:
            f = todo.pop()
            k = f.kind
            if f is terms.TRUE:
                continue
            if f is terms.FALSE:
                contradictory = True
                break
            if k == "and":
                todo.extend(f.args)
            elif k == "or":
                produced += len(f.args)
                if produced > _CASE_CAP:
                    raise _CapExceeded
                for arm in f.args:
                    branch = _Case(list(case.linear), dict(case.bools), case.opaque)
                    stack.append((todo + [arm], branch))
                todo = None
                case = None
                break
            elif k == "not":
                g = f.args[0]
                gk = g.kind
                if gk == "eq0":
                    todo.append(terms.or_(
                        terms._cmp("lt0", g.args[0]),
                        terms._cmp("lt0", terms.neg(g.args[0])),
                    ))
                elif gk == "le0":
                    todo.append(terms._cmp("lt0", terms.neg(g.args[0])))
                elif gk == "lt0":
                    todo.append(terms._cmp("le0", terms.neg(g.args[0])))
                elif gk == "and":
                    todo.append(terms.or_(*[terms.not_(a) for a in g.args]))
                elif gk == "or":
                    todo.extend(terms.not_(a) for a in g.args)
                else:
                    prev = case.bools.get(g)
                    if prev is True:
                        contradictory = True
                        break
                    case.bools[g] = False
                    if gk not in ("var", "eqref", "inset", "seteq"):
                        case.opaque = True
            elif k in ("eq0", "le0", "lt0"):
                lin = f.args[0]
                if any(a.kind in terms.OPAQUE_KINDS for a in terms.linear_parts(lin)[1]):
                    case.opaque = True
                case.linear.append((k, lin))
            else:
                prev = case.bools.get(f)
                if prev is False:
                    contradictory = True
                    break
                case.bools[f] = True
                if k not in ("var", "eqref", "inset", "seteq"):
                    case.opaque = True
        if case is None or contradictory:
            continue
        if todo is not None and not todo:
            yield case


class _CapExceeded(Exception):
    pass


def _sat_conjunction(facts: list[Term]):
    """(SAT/UNSAT/UNKNOWN, model, used_opaque)."""
    defs = _collect_set_defs(facts)
    resolved = [_resolve_sets(f, defs) for f in facts]
    any_unknown = False
    any_opaque = False
    try:
        for case in _split(resolved):
            res, model = _check_linear(case.linear)
            if res == SAT:
                return SAT, model, case.opaque
            if res == UNKNOWN:
                any_unknown = True
            any_opaque = any_opaque or case.opaque
    except _CapExceeded:
        return UNKNOWN, None, True
    if any_unknown:
        return UNKNOWN, None, any_opaque
    return UNSAT, None, any_opaque


def _format_model(model: Optional[dict[Term, Fraction]]) -> Optional[str]:
    if not model:
        return None
    bits = [f"{terms.pretty(a)} = {v}" for a, v in sorted(model.items(), key=lambda kv: kv[0].tid)]
    return ", ".join(bits[:8])


# ---------------------------------------------------------------------------
# Public interface
# ---------------------------------------------------------------------------

@dataclass
class SolverConfig:
    backend: str = "builtin"            # builtin | external
    solver_cmd: Optional[str] = None
    timeout_ms: int = 10000


class Solver:
    """Entailment and feasibility queries over a path condition.

    Stateless apart from memoisation; safe to share across obligations.
    """

    def __init__(self, config: Optional[SolverConfig] = None):
        self.config = config or SolverConfig()
        if self.config.backend == "external" and not self.config.solver_cmd:
            raise ValueError("external backend requires a solver command")
        self._feas_cache: dict[frozenset[int], str] = {}
        self._ent_cache: dict[tuple[frozenset[int], int], Result] = {}
        self.queries = 0

    # -- feasibility -------------------------------------------------------

    def is_feasible(self, path: Iterable[Term]) -> str:
        facts = [f for f in path if f is not terms.TRUE]
        if any(f is terms.FALSE for f in facts):
            return NO
        key = frozenset(f.tid for f in facts)
        hit = self._feas_cache.get(key)
        if hit is not None:
            return hit
        self.queries += 1
        res, _model, _ = _sat_conjunction(facts)
        out = YES if res == SAT else NO if res == UNSAT else UNKNOWN
        if out == UNKNOWN and self.config.backend == "external":
            ext = self._external_sat(facts)
            if ext is not None:
                out = ext
        self._feas_cache[key] = out
        return out

    # -- entailment --------------------------------------------------------

    def assert_entailed(self, path: Iterable[Term], goal: Term) -> Result:
        if goal is terms.TRUE:
            return Result(YES)
        facts = [f for f in path if f is not terms.TRUE]
        if any(f is terms.FALSE for f in facts):
            return Result(YES)  # anything follows from an infeasible path
        key = (frozenset(f.tid for f in facts), goal.tid)
        hit = self._ent_cache.get(key)
        if hit is not None:
            return hit
        self.queries += 1
        res, model, opaque = _sat_conjunction(facts + [terms.not_(goal)])
        if res == UNSAT:
            out = Result(YES)
        elif res == SAT and not opaque:
            out = Result(NO, _format_model(model))
        else:
            out = Result(UNKNOWN)
        if out.verdict == UNKNOWN and self.config.backend == "external":
            ext = self._external_sat(facts + [terms.not_(goal)])
            if ext == NO:
                out = Result(YES)
            elif ext == YES:
                out = Result(UNKNOWN)  # external model may rely on opaque atoms
        self._ent_cache[key] = out
        return out

    # -- model probing -------------------------------------------------------

    def model_value(self, path: Iterable[Term], term: Term):
        """The unique value of a numeric term under the path, if determined.

        Extracts a candidate from one model and confirms it by entailment;
        returns a Fraction or None.
        """
        facts = [f for f in path if f is not terms.TRUE]
        res, model, _ = _sat_conjunction(facts)
        if res != SAT:
            return None
        const, coeffs = terms.linear_parts(term)
        val = const
        for atom, c in coeffs.items():
            val += c * model.get(atom, Fraction(0))
        lit = terms.mk_int(val) if val.denominator == 1 else terms.mk_frac(val)
        if self.assert_entailed(facts, terms.eq(term, lit)).verdict == YES:
            return val
        return None

    # -- external backend ----------------------------------------------------

    def _external_sat(self, facts: list[Term]) -> Optional[str]:
        """Run the external solver on sat(/\\ facts); returns yes/no/None."""
        script = emit_smtlib(facts, terms.FALSE, negate_goal=False)
        try:
            verdict = run_external(script, self.config.solver_cmd, self.config.timeout_ms)
        except ExternalSolverError:
            return None
        if verdict == SAT:
            return YES
        if verdict == UNSAT:
            return NO
        return None


# ---------------------------------------------------------------------------
# SMT-LIB 2 emission
# ---------------------------------------------------------------------------

_SMT_OP = {"mod": "mod", "div": "div"}
_SMT_UF = {"bitand": "bvop.and", "bitor": "bvop.or", "bitxor": "bvop.xor",
           "shl": "bvop.shl", "shr": "bvop.shr", "mul": "nl.mul"}


def emit_smtlib(path: Iterable[Term], goal: Term, negate_goal: bool = True) -> str:
    """Emit a script whose unsat-ness witnesses ``path |= goal``.

    Integer terms map to Int, permission amounts to Real, refs to Int
    constants (pairwise distinct), sets to (Array Int Bool).  Bitwise
    operations are emitted as uninterpreted functions: the built-in solver
    treats them identically, so verdicts agree on the shared fragment.
    """
    decls: dict[str, str] = {}
    ref_lits: list[Term] = []
    lines: list[str] = ["(set-logic ALL)"]

    def smt_sort(sort: str) -> str:
        return {"int": "Int", "frac": "Real", "bool": "Bool",
                "ref": "Int", "set": "(Array Int Bool)"}[sort]

    def name_of(t: Term) -> str:
        if t.kind == "var":
            n = "v!" + "".join(ch if ch.isalnum() or ch in "_.!$" else "_" for ch in t.data)
        elif t.kind == "ref":
            n = f"ref!{t.data[0]}"
            if t not in ref_lits:
                ref_lits.append(t)
        else:
            n = f"op!{t.kind}!{t.tid}"
        if n not in decls:
            decls[n] = f"(declare-const {n} {smt_sort(t.sort)})"
        return n

    def emit(t: Term) -> str:
        k = t.kind
        if k == "num":
            v: Fraction = t.data
            if t.sort == terms.INT:
                return str(v.numerator) if v >= 0 else f"(- {-v.numerator})"
            return f"(/ {v.numerator} {v.denominator})" if v >= 0 else \
                f"(- (/ {-v.numerator} {v.denominator}))"
        if k == "boollit":
            return "true" if t.data else "false"
        if k in ("var", "ref"):
            return name_of(t)
        if k == "lin":
            const, pairs = t.data
            frac = t.sort == terms.FRAC
            c = emit(terms.mk_frac(const) if frac else terms.mk_int(const))
            parts = [c] if const != 0 else []
            for a, co in pairs:
                ea = emit(a)
                if frac and a.sort == terms.INT:
                    ea = f"(to_real {ea})"
                co_t = terms.mk_frac(co) if frac else terms.mk_int(co)
                parts.append(ea if co == 1 else f"(* {emit(co_t)} {ea})")
            return parts[0] if len(parts) == 1 else f"(+ {' '.join(parts)})"
        if k in ("eq0", "le0", "lt0"):
            op = {"eq0": "=", "le0": "<=", "lt0": "<"}[k]
            zero = "0" if t.args[0].sort == terms.INT else "(/ 0 1)"
            return f"({op} {emit(t.args[0])} {zero})"
        if k == "and":
            return f"(and {' '.join(emit(a) for a in t.args)})"
        if k == "or":
            return f"(or {' '.join(emit(a) for a in t.args)})"
        if k == "not":
            return f"(not {emit(t.args[0])})"
        if k == "eqref":
            return f"(= {emit(t.args[0])} {emit(t.args[1])})"
        if k == "inset":
            return f"(select {emit(t.args[1])} {emit(t.args[0])})"
        if k == "seteq":
            return f"(= {emit(t.args[0])} {emit(t.args[1])})"
        if k == "setlit":
            s = "((as const (Array Int Bool)) false)"
            for e in t.args:
                s = f"(store {s} {emit(e)} true)"
            return s
        if k == "setunion":
            out = emit(t.args[0])
            for a in t.args[1:]:
                out = f"((_ map or) {out} {emit(a)})"
            return out
        if k in _SMT_OP:
            return f"({_SMT_OP[k]} {emit(t.args[0])} {emit(t.args[1])})"
        if k in _SMT_UF:
            fn = _SMT_UF[k].replace(".", "_")
            if fn not in decls:
                decls[fn] = f"(declare-fun {fn} (Int Int) Int)"
            return f"({fn} {emit(t.args[0])} {emit(t.args[1])})"
        raise AssertionError(k)  # pragma: no cover

    asserts = [f"(assert {emit(f)})" for f in path]
    if negate_goal:
        asserts.append(f"(assert (not {emit(goal)}))")
    elif goal is not terms.FALSE:
        asserts.append(f"(assert {emit(goal)})")
    if len(ref_lits) > 1:
        asserts.append("(assert (distinct " + " ".join(name_of(r) for r in ref_lits) + "))")
    lines += sorted(decls.values())
    lines += asserts
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


def run_external(script: str, cmd: str, timeout_ms: int) -> str:
    """Feed the script to the solver process on stdin; parse sat/unsat."""
    try:
        proc = subprocess.run(
            shlex.split(cmd),
            input=script.encode(),
            capture_output=True,
            timeout=timeout_ms / 1000.0,
        )
    except (subprocess.TimeoutExpired, OSError) as exc:
        raise ExternalSolverError(str(exc)) from exc
    if proc.returncode != 0:
        raise ExternalSolverError(f"exit code {proc.returncode}: {proc.stderr.decode()[:200]}")
    for line in proc.stdout.decode().splitlines():
        word = line.strip()
        if word in (SAT, UNSAT):
            return word
        if word == "unknown":
            return "unknown"
    raise ExternalSolverError(f"no verdict in output: {proc.stdout.decode()[:200]}")
