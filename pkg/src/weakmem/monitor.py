"""Dynamic soundness checks and state-to-assertion reconstruction.

The soundness argument for the encoding rests on invariants of the symbolic
states at statement boundaries; the central one for non-atomic locations is
that the val and init fields always carry identical permission amounts, and
that positive permission to an uninitialised location is full permission.
This module checks those invariants dynamically and can render a state back
as an assertion of the source logic, which is how end-to-end results are
inspected and tested.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import terms as T
from .frontend import GHOST, NA
from .solver import Solver, YES
from .speclogic import HeapLabel, InvariantTable
from .symstate import PERM_ONE, PermExpr, SymState
from .syntax import Span


@dataclass
class Violation:
    location: str
    label: HeapLabel
    message: str

    def format(self) -> str:
        tag = "" if self.label == HeapLabel.REAL else f" under {self.label}"
        return f"{self.location}{tag}: {self.message}"


@dataclass
class StateReport:
    obligation: str
    boundary: str
    span: Span
    violations: list = field(default_factory=list)
    assertion: str = ""

    def to_json(self) -> dict:
        return {
            "obligation": self.obligation,
            "boundary": self.boundary,
            "line": self.span.line,
            "col": self.span.col,
            "violations": [v.format() for v in self.violations],
            "assertion": self.assertion,
        }


def check_state_invariants(state: SymState, solver: Solver,
                           classes: dict[str, str]) -> list[Violation]:
    """Check the per-boundary invariants for every non-atomic location."""
    out: list[Violation] = []
    seen: set[tuple] = set()
    for key in sorted(state.fields):
        chunk = state.fields[key]
        cls = classes.get(chunk.ref.data[1])
        if not (T.is_ghost_ref(chunk.ref) or cls == NA):
            continue
        group = (chunk.label.value, chunk.ref.data[0])
        if group in seen:
            continue
        seen.add(group)
        name = chunk.ref.data[1]
        pv = state.field_perm(chunk.ref, "val", chunk.label)
        pi = state.field_perm(chunk.ref, "init", chunk.label)
        if pv != pi and solver.assert_entailed(
                state.path, T.eq(pv.term(), pi.term())).verdict != YES:
            out.append(Violation(
                name, chunk.label,
                f"val permission {pv} differs from init permission {pi}"))
            continue
        init_chunk = state.fields.get(state.field_key(chunk.ref, "init", chunk.label))
        if init_chunk is None or pv.is_zero:
            continue
        init_true = solver.assert_entailed(state.path, init_chunk.value).verdict == YES
        if not init_true:
            full = pv == PERM_ONE or solver.assert_entailed(
                state.path, T.eq(pv.term(), T.ONE)).verdict == YES
            if not full:
                out.append(Violation(
                    name, chunk.label,
                    f"position may be uninitialised but permission is {pv}, not 1"))
    return out


# ---------------------------------------------------------------------------
# Reconstruction
# ---------------------------------------------------------------------------

def _perm_str(p: PermExpr) -> str:
    if p == PERM_ONE:
        return "¹"
    if p.is_exact:
        return f"[{p.const}]"
    return f"[{p}]"


def _value_str(state: SymState, solver: Solver, value: T.Term) -> str:
    if value.kind == "num":
        return str(value.data)
    if value.sort == T.BOOL:
        for lit, txt in ((value, "true"), (T.not_(value), "false")):
            if solver.assert_entailed(state.path, lit).verdict == YES:
                return txt
        return T.pretty(value)
    v = solver.model_value(state.path, value)
    return str(v) if v is not None else T.pretty(value)


def reconstruct_assertion(state: SymState, solver: Solver,
                          classes: dict[str, str],
                          table: Optional[InvariantTable] = None) -> str:
    """Render the resources of a state as an assertion of the source logic.

    Non-atomics become Uninit or points-to atoms, atomics are summarised as
    Init / Rel / Acq / RMWAcq with invariant names from the table; values
    already read through an acquire conjunct are shown as obliterated.
    Up/down-labeled resources are wrapped in the matching modality.
    """
    by_label: dict[HeapLabel, list[str]] = {}

    refs: dict[tuple, T.Term] = {}
    for key in sorted(state.fields):
        c = state.fields[key]
        refs.setdefault((c.label.value, c.ref.data[0]), c.ref)
    for key in sorted(state.preds):
        c = state.preds[key]
        refs.setdefault((c.label.value, c.ref.data[0]), c.ref)

    for (label_val, _tid), ref in sorted(refs.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        label = HeapLabel(label_val)
        name = ref.data[1]
        cls = GHOST if T.is_ghost_ref(ref) else classes.get(name)
        parts: list[str] = []
        if cls in (NA, GHOST) or (cls is None and
                                  state.fields.get(state.field_key(ref, "val", label))):
            val_chunk = state.fields.get(state.field_key(ref, "val", label))
            init_chunk = state.fields.get(state.field_key(ref, "init", label))
            if val_chunk is not None:
                init_false = (init_chunk is not None and solver.assert_entailed(
                    state.path, T.not_(init_chunk.value)).verdict == YES)
                if init_false:
                    parts.append(f"Uninit({name})")
                else:
                    parts.append(f"{name} ↦{_perm_str(val_chunk.perm)} "
                                 f"{_value_str(state, solver, val_chunk.value)}")
        else:
            init_chunk = state.fields.get(state.field_key(ref, "init", label))
            if init_chunk is not None and not init_chunk.perm.is_zero:
                parts.append(f"Init({name})")
            rel_chunk = state.fields.get(state.field_key(ref, "rel", label))
            if rel_chunk is not None:
                parts.append(f"Rel({name}, {_inv_name(state, solver, rel_chunk.value, table)})")
            acq_chunk = state.fields.get(state.field_key(ref, "acq", label))
            conjuncts = [state.preds[k] for k in sorted(state.preds)
                         if k[0] == label.value and k[1] == ref.data[0]]
            if acq_chunk is not None and conjuncts:
                is_acq = solver.assert_entailed(state.path, acq_chunk.value).verdict == YES
                bodies = []
                for pc in conjuncts:
                    nm = table.names.get(pc.idx, f"#{pc.idx}") if table else f"#{pc.idx}"
                    if pc.vals and is_acq:
                        vals = ", ".join(_value_str(state, solver, v) for v in pc.vals)
                        nm += f" with V in {{{vals}}} obliterated"
                    bodies.append(nm)
                kind = "Acq" if is_acq else "RMWAcq"
                parts.append(f"{kind}({name}, {' && '.join(bodies)})")
        if parts:
            by_label.setdefault(label, []).extend(parts)

    rendered: list[str] = []
    for label in (HeapLabel.REAL, HeapLabel.UP, HeapLabel.DOWN, HeapLabel.TMP):
        parts = by_label.get(label, [])
        if not parts:
            continue
        body = " ∗ ".join(parts)
        if label == HeapLabel.UP:
            rendered.append(f"⇑({body})")
        elif label == HeapLabel.DOWN:
            rendered.append(f"⇓({body})")
        elif label == HeapLabel.TMP:
            rendered.append(f"[tmp]({body})")
        else:
            rendered.append(body)
    return " ∗ ".join(rendered) if rendered else "true"


def _inv_name(state: SymState, solver: Solver, value: T.Term,
              table: Optional[InvariantTable]) -> str:
    v = solver.model_value(state.path, value)
    if v is not None and table is not None:
        idx = int(v)
        if idx in table.names:
            return table.names[idx]
    if v is not None:
        return f"#{int(v)}"
    return T.pretty(value)


def make_report(obligation: str, boundary: str, span: Span, state: SymState,
                solver: Solver, classes: dict[str, str],
                table: Optional[InvariantTable] = None,
                reconstruct: bool = True) -> StateReport:
    violations = check_state_invariants(state, solver, classes)
    text = reconstruct_assertion(state, solver, classes, table) if reconstruct else ""
    return StateReport(obligation, boundary, span, violations, text)
