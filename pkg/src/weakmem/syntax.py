"""Surface AST for the annotated input language.

Statements cover non-atomic and atomic accesses, fences, compare-and-swap,
fetch-and-add, ghost allocation, invariant rewriting, loops, conditionals,
structured parallel composition and procedure calls.  Assertions cover the
separation-logic fragment used by specifications: points-to with fractional
permissions, implication and conditional assertions, the atomic-location
resources (Uninit / Init / Acq / Rel / RMWAcq) and the up/down modalities.

Node equality ignores source spans, so parse -> pretty-print -> parse is
expected to reproduce an equal tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


@dataclass(frozen=True)
class Span:
    line: int = 0
    col: int = 0
    end_line: int = 0
    end_col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


NO_SPAN = Span()


def _span_field():
    return field(default=NO_SPAN, compare=False, repr=False)


# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

@dataclass
class Expr:
    pass


@dataclass
class EInt(Expr):
    value: int


@dataclass
class EBool(Expr):
    value: bool


@dataclass
class EVar(Expr):
    name: str


@dataclass
class EInvVal(Expr):
    """The distinguished value parameter of a location invariant."""


@dataclass
class EAny(Expr):
    """The `_` placeholder: any value."""


@dataclass
class EBin(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass
class EUn(Expr):
    op: str  # '!' or '-'
    operand: Expr


TRUE_E = EBool(True)
FALSE_E = EBool(False)


# ---------------------------------------------------------------------------
# Assertions
# ---------------------------------------------------------------------------

InvRef = tuple[str, ...]  # star-combination of named invariants, in order


@dataclass
class Assertion:
    span: Span = _span_field()


@dataclass
class APure(Assertion):
    expr: Expr = None


@dataclass
class APointsTo(Assertion):
    loc: str = ""
    value: Expr = None
    frac: Optional[Expr] = None  # None means full permission


@dataclass
class AStar(Assertion):
    parts: tuple = ()


@dataclass
class AImplies(Assertion):
    cond: Expr = None
    body: Assertion = None


@dataclass
class ACond(Assertion):
    cond: Expr = None
    then: Assertion = None
    els: Assertion = None


@dataclass
class AUninit(Assertion):
    loc: str = ""


@dataclass
class AInit(Assertion):
    loc: str = ""


@dataclass
class AAcq(Assertion):
    loc: str = ""
    inv: InvRef = ()


@dataclass
class ARel(Assertion):
    loc: str = ""
    inv: InvRef = ()


@dataclass
class ARMWAcq(Assertion):
    loc: str = ""
    inv: InvRef = ()


@dataclass
class AUp(Assertion):
    body: Assertion = None


@dataclass
class ADown(Assertion):
    body: Assertion = None


def star(parts: list[Assertion]) -> Assertion:
    flat: list[Assertion] = []
    for p in parts:
        if isinstance(p, AStar):
            flat.extend(p.parts)
        else:
            flat.append(p)
    if not flat:
        return APure(expr=TRUE_E)
    if len(flat) == 1:
        return flat[0]
    return AStar(parts=tuple(flat), span=flat[0].span)


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------

@dataclass
class Stmt:
    span: Span = _span_field()


@dataclass
class SAllocNa(Stmt):
    var: str = ""


@dataclass
class SAllocAtomic(Stmt):
    var: str = ""
    kind: str = "acq"  # acq | rmw
    inv: InvRef = ()


@dataclass
class SGhostAlloc(Stmt):
    var: str = ""


@dataclass
class SWrite(Stmt):
    mode: str = "na"  # na | rel | rlx | rel_acq
    loc: str = ""
    value: Expr = None


@dataclass
class SRead(Stmt):
    mode: str = "na"  # na | acq | rlx | rel_acq
    target: str = ""
    loc: str = ""


@dataclass
class SFenceAcq(Stmt):
    pass


@dataclass
class SFenceRel(Stmt):
    assertion: Assertion = None


@dataclass
class SCas(Stmt):
    target: str = ""
    tau: str = "rel_acq"  # acq | rel | rel_acq | rlx
    loc: str = ""
    expected: Expr = None
    newval: Expr = None


@dataclass
class SFaa(Stmt):
    target: str = ""
    tau: str = "rel_acq"
    loc: str = ""
    delta: Expr = None


@dataclass
class SRewrite(Stmt):
    loc: str = ""
    old: InvRef = ()
    new: InvRef = ()


@dataclass
class LoopCond:
    """Loop condition: pure, or a single atomic read / CAS compared to a value."""
    kind: str = "pure"  # pure | read | cas
    expr: Expr = None                 # pure condition
    mode: str = ""                    # read: access mode; cas: tau
    loc: str = ""
    op: str = "=="                    # comparison against rhs
    rhs: Expr = None
    expected: Expr = None             # cas only
    newval: Expr = None               # cas only


@dataclass
class SWhile(Stmt):
    cond: LoopCond = None
    invariant: Optional[Assertion] = None
    body: list = field(default_factory=list)


@dataclass
class SIf(Stmt):
    cond: Expr = None
    then: list = field(default_factory=list)
    els: list = field(default_factory=list)


@dataclass
class Thread:
    pre: Assertion = None
    post: Assertion = None
    body: list = field(default_factory=list)
    has_spec: bool = True
    span: Span = _span_field()


@dataclass
class SPar(Stmt):
    threads: list = field(default_factory=list)


@dataclass
class SCall(Stmt):
    target: Optional[str] = None
    callee: str = ""
    args: list = field(default_factory=list)


@dataclass
class SAssign(Stmt):
    var: str = ""
    value: Expr = None


@dataclass
class SFree(Stmt):
    var: str = ""


@dataclass
class SSkip(Stmt):
    pass


# ---------------------------------------------------------------------------
# Declarations
# ---------------------------------------------------------------------------

@dataclass
class Param:
    name: str
    ghost: bool = False


@dataclass
class InvariantDecl:
    name: str = ""
    param: str = "V"
    body: Assertion = None
    span: Span = _span_field()


@dataclass
class Procedure:
    name: str = ""
    params: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    pre: Assertion = None
    post: Assertion = None
    body: list = field(default_factory=list)
    has_spec: bool = True  # explicit requires/ensures pair in the source
    span: Span = _span_field()


@dataclass
class Program:
    invariants: list = field(default_factory=list)
    procedures: list = field(default_factory=list)
    entry: Optional[str] = None

    def invariant(self, name: str) -> InvariantDecl:
        for d in self.invariants:
            if d.name == name:
                return d
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Pretty printing
# ---------------------------------------------------------------------------

_PREC = {
    "||": 1, "&&": 2,
    "==": 3, "!=": 3, "<": 3, "<=": 3, ">": 3, ">=": 3,
    "|": 4, "^": 5, "&": 6, "<<": 7, ">>": 7,
    "+": 8, "-": 8, "*": 9, "/": 9, "%": 9,
}


def pp_expr(e: Expr, prec: int = 0) -> str:
    if isinstance(e, EInt):
        return str(e.value)
    if isinstance(e, EBool):
        return "true" if e.value else "false"
    if isinstance(e, EVar):
        return e.name
    if isinstance(e, EInvVal):
        return "V"
    if isinstance(e, EAny):
        return "_"
    if isinstance(e, EUn):
        return f"{e.op}{pp_expr(e.operand, 10)}"
    if isinstance(e, EBin):
        p = _PREC[e.op]
        s = f"{pp_expr(e.left, p)} {e.op} {pp_expr(e.right, p + 1)}"
        return f"({s})" if p < prec else s
    raise AssertionError(e)


def _pp_inv(inv: InvRef) -> str:
    return " && ".join(inv)


def pp_assertion(a: Assertion, prec: int = 0) -> str:
    if isinstance(a, APure):
        return pp_expr(a.expr, 3)
    if isinstance(a, APointsTo):
        s = f"{a.loc} |-> {pp_expr(a.value, 10)}"
        if a.frac is not None:
            s += f" @ {pp_expr(a.frac, 10)}"
        return s
    if isinstance(a, AStar):
        s = " && ".join(pp_assertion(p, 2) for p in a.parts)
        return f"({s})" if prec > 1 else s
    if isinstance(a, AImplies):
        s = f"{pp_expr(a.cond, 3)} ==> {pp_assertion(a.body, 2)}"
        return f"({s})" if prec > 0 else s
    if isinstance(a, ACond):
        s = f"{pp_expr(a.cond, 3)} ? {pp_assertion(a.then, 2)} : {pp_assertion(a.els, 2)}"
        return f"({s})"
    if isinstance(a, AUninit):
        return f"Uninit({a.loc})"
    if isinstance(a, AInit):
        return f"Init({a.loc})"
    if isinstance(a, AAcq):
        return f"Acq({a.loc}, {_pp_inv(a.inv)})"
    if isinstance(a, ARel):
        return f"Rel({a.loc}, {_pp_inv(a.inv)})"
    if isinstance(a, ARMWAcq):
        return f"RMWAcq({a.loc}, {_pp_inv(a.inv)})"
    if isinstance(a, AUp):
        return f"Up({pp_assertion(a.body)})"
    if isinstance(a, ADown):
        return f"Down({pp_assertion(a.body)})"
    raise AssertionError(a)


def _pp_block(stmts: list, indent: int) -> list[str]:
    pad = "  " * indent
    out: list[str] = []
    for s in stmts:
        out.extend(pp_stmt(s, indent))
    return out or [pad + "skip;"]


def pp_stmt(s: Stmt, indent: int = 0) -> list[str]:
    pad = "  " * indent
    if isinstance(s, SAllocNa):
        return [f"{pad}alloc_na({s.var});"]
    if isinstance(s, SAllocAtomic):
        kw = "alloc_acq" if s.kind == "acq" else "alloc_rmw"
        return [f"{pad}{kw}({s.var}, {_pp_inv(s.inv)});"]
    if isinstance(s, SGhostAlloc):
        return [f"{pad}ghost_alloc({s.var});"]
    if isinstance(s, SWrite):
        return [f"{pad}[{s.loc}]_{s.mode} := {pp_expr(s.value)};"]
    if isinstance(s, SRead):
        return [f"{pad}{s.target} := [{s.loc}]_{s.mode};"]
    if isinstance(s, SFenceAcq):
        return [f"{pad}fence_acq;"]
    if isinstance(s, SFenceRel):
        return [f"{pad}fence_rel({pp_assertion(s.assertion)});"]
    if isinstance(s, SCas):
        return [f"{pad}{s.target} := CAS_{s.tau}({s.loc}, {pp_expr(s.expected)}, "
                f"{pp_expr(s.newval)});"]
    if isinstance(s, SFaa):
        return [f"{pad}{s.target} := FAA_{s.tau}({s.loc}, {pp_expr(s.delta)});"]
    if isinstance(s, SRewrite):
        return [f"{pad}rewrite Acq({s.loc}, {_pp_inv(s.old)}) to "
                f"Acq({s.loc}, {_pp_inv(s.new)});"]
    if isinstance(s, SWhile):
        c = s.cond
        if c.kind == "pure":
            cond = pp_expr(c.expr)
        elif c.kind == "read":
            cond = f"[{c.loc}]_{c.mode} {c.op} {pp_expr(c.rhs)}"
        else:
            cond = (f"CAS_{c.mode}({c.loc}, {pp_expr(c.expected)}, "
                    f"{pp_expr(c.newval)}) {c.op} {pp_expr(c.rhs)}")
        head = f"{pad}while ({cond})"
        lines = [head]
        if s.invariant is not None:
            lines.append(f"{pad}  invariant {{ {pp_assertion(s.invariant)} }}")
        if s.body:
            lines.append(pad + "{")
            lines.extend(_pp_block(s.body, indent + 1))
            lines.append(pad + "}")
        else:
            lines[-1] += " ;" if s.invariant is not None else ";"
            if s.invariant is None:
                lines[0] = head + ";"
                lines = [lines[0]]
        return lines
    if isinstance(s, SIf):
        lines = [f"{pad}if ({pp_expr(s.cond)}) {{"]
        lines.extend(_pp_block(s.then, indent + 1))
        if s.els:
            lines.append(pad + "} else {")
            lines.extend(_pp_block(s.els, indent + 1))
        lines.append(pad + "}")
        return lines
    if isinstance(s, SPar):
        lines = [pad + "par {"]
        for t in s.threads:
            lines.append(f"{pad}  thread")
            lines.append(f"{pad}    requires {{ {pp_assertion(t.pre)} }}")
            lines.append(f"{pad}    ensures {{ {pp_assertion(t.post)} }}")
            lines.append(pad + "  {")
            lines.extend(_pp_block(t.body, indent + 2))
            lines.append(pad + "  }")
        lines.append(pad + "}")
        return lines
    if isinstance(s, SCall):
        args = ", ".join(pp_expr(a) for a in s.args)
        if s.target:
            return [f"{pad}{s.target} := call {s.callee}({args});"]
        return [f"{pad}call {s.callee}({args});"]
    if isinstance(s, SAssign):
        return [f"{pad}{s.var} := {pp_expr(s.value)};"]
    if isinstance(s, SFree):
        return [f"{pad}free({s.var});"]
    if isinstance(s, SSkip):
        return [f"{pad}skip;"]
    raise AssertionError(s)


def pp_program(p: Program) -> str:
    lines: list[str] = []
    for d in p.invariants:
        lines.append(f"invariant {d.name}({d.param}) = {pp_assertion(d.body)};")
    if p.invariants:
        lines.append("")
    for proc in p.procedures:
        def params_of(ps):
            return ", ".join(("ghost " if q.ghost else "") + q.name for q in ps)
        head = f"proc {proc.name}({params_of(proc.params)})"
        if proc.returns:
            head += f" returns ({params_of(proc.returns)})"
        lines.append(head)
        if proc.has_spec:
            lines.append(f"  requires {{ {pp_assertion(proc.pre)} }}")
            lines.append(f"  ensures {{ {pp_assertion(proc.post)} }}")
        lines.append("{")
        lines.extend(_pp_block(proc.body, 1))
        lines.append("}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


# ---------------------------------------------------------------------------
# Walkers
# ---------------------------------------------------------------------------

def walk_stmts(stmts: list) -> list[Stmt]:
    """All statements, in source order, recursing into structured bodies."""
    out: list[Stmt] = []
    for s in stmts:
        out.append(s)
        if isinstance(s, SWhile):
            out.extend(walk_stmts(s.body))
        elif isinstance(s, SIf):
            out.extend(walk_stmts(s.then))
            out.extend(walk_stmts(s.els))
        elif isinstance(s, SPar):
            for t in s.threads:
                out.extend(walk_stmts(t.body))
    return out


def assigned_vars(stmts: list) -> list[str]:
    """Variables (re)bound anywhere in the statement list, in first-seen order."""
    seen: dict[str, None] = {}
    for s in walk_stmts(stmts):
        for name in _binds(s):
            seen.setdefault(name)
    return list(seen)


def _binds(s: Stmt) -> list[str]:
    if isinstance(s, (SAllocNa, SGhostAlloc)):
        return [s.var]
    if isinstance(s, SAllocAtomic):
        return [s.var]
    if isinstance(s, SRead):
        return [s.target]
    if isinstance(s, (SCas, SFaa)):
        return [s.target]
    if isinstance(s, SAssign):
        return [s.var]
    if isinstance(s, SCall) and s.target:
        return [s.target]
    return []


def subst_expr(e: Expr, mapping: dict[str, Expr]) -> Expr:
    if isinstance(e, EVar) and e.name in mapping:
        return mapping[e.name]
    if isinstance(e, EBin):
        return EBin(e.op, subst_expr(e.left, mapping), subst_expr(e.right, mapping))
    if isinstance(e, EUn):
        return EUn(e.op, subst_expr(e.operand, mapping))
    return e


def _subst_loc(loc: str, mapping: dict[str, Expr]) -> str:
    m = mapping.get(loc)
    if m is None:
        return loc
    if isinstance(m, EVar):
        return m.name
    raise ValueError(f"location position for '{loc}' needs a variable, got an expression")


def subst_assertion(a: Assertion, mapping: dict[str, Expr]) -> Assertion:
    """Substitute program variables; location slots require variable arguments."""
    if isinstance(a, APure):
        return APure(expr=subst_expr(a.expr, mapping), span=a.span)
    if isinstance(a, APointsTo):
        frac = subst_expr(a.frac, mapping) if a.frac is not None else None
        return APointsTo(loc=_subst_loc(a.loc, mapping),
                         value=subst_expr(a.value, mapping), frac=frac, span=a.span)
    if isinstance(a, AStar):
        return AStar(parts=tuple(subst_assertion(p, mapping) for p in a.parts), span=a.span)
    if isinstance(a, AImplies):
        return AImplies(cond=subst_expr(a.cond, mapping),
                        body=subst_assertion(a.body, mapping), span=a.span)
    if isinstance(a, ACond):
        return ACond(cond=subst_expr(a.cond, mapping),
                     then=subst_assertion(a.then, mapping),
                     els=subst_assertion(a.els, mapping), span=a.span)
    if isinstance(a, AUninit):
        return AUninit(loc=_subst_loc(a.loc, mapping), span=a.span)
    if isinstance(a, AInit):
        return AInit(loc=_subst_loc(a.loc, mapping), span=a.span)
    if isinstance(a, AAcq):
        return AAcq(loc=_subst_loc(a.loc, mapping), inv=a.inv, span=a.span)
    if isinstance(a, ARel):
        return ARel(loc=_subst_loc(a.loc, mapping), inv=a.inv, span=a.span)
    if isinstance(a, ARMWAcq):
        return ARMWAcq(loc=_subst_loc(a.loc, mapping), inv=a.inv, span=a.span)
    if isinstance(a, AUp):
        return AUp(body=subst_assertion(a.body, mapping), span=a.span)
    if isinstance(a, ADown):
        return ADown(body=subst_assertion(a.body, mapping), span=a.span)
    raise AssertionError(a)


def expr_vars(e: Expr) -> set[str]:
    if isinstance(e, EVar):
        return {e.name}
    if isinstance(e, EBin):
        return expr_vars(e.left) | expr_vars(e.right)
    if isinstance(e, EUn):
        return expr_vars(e.operand)
    return set()


def assertion_vars(a: Assertion) -> set[str]:
    """Free program variables of an assertion.

    Invariant names are not variables, and neither are symbols appearing in
    fraction expressions (permission-level tokens such as counting shares).
    """
    if isinstance(a, APure):
        return expr_vars(a.expr)
    if isinstance(a, APointsTo):
        return {a.loc} | expr_vars(a.value)
    if isinstance(a, AStar):
        out: set[str] = set()
        for p in a.parts:
            out |= assertion_vars(p)
        return out
    if isinstance(a, AImplies):
        return expr_vars(a.cond) | assertion_vars(a.body)
    if isinstance(a, ACond):
        return expr_vars(a.cond) | assertion_vars(a.then) | assertion_vars(a.els)
    if isinstance(a, (AUninit, AInit)):
        return {a.loc}
    if isinstance(a, (AAcq, ARel, ARMWAcq)):
        return {a.loc}
    if isinstance(a, (AUp, ADown)):
        return assertion_vars(a.body)
    raise AssertionError(a)
