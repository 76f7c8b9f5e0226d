import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from weakmem import api  # noqa: E402
from weakmem import frontend, speclogic  # noqa: E402
from weakmem.solver import Solver  # noqa: E402

CORPUS = os.path.join(os.path.dirname(__file__), "..", "corpus")
MANIFEST = os.path.join(CORPUS, "manifest.json")


def corpus_path(name: str) -> str:
    return os.path.join(CORPUS, name)


def corpus_text(name: str) -> str:
    with open(corpus_path(name), "r", encoding="utf-8") as fh:
        return fh.read()


@pytest.fixture
def solver():
    return Solver()


def checked(source: str) -> frontend.CheckedProgram:
    program, diags = frontend.parse(source)
    assert not diags, [d.format() for d in diags]
    out = frontend.mode_check(program)
    assert not out.diagnostics, [d.format() for d in out.diagnostics]
    return out


def verify(source: str, **kw) -> api.FileResult:
    return api.verify_source(source, opts=api.VerifyOptions(**kw))


def single_verdict(source: str, **kw) -> api.ProcVerdict:
    res = verify(source, **kw)
    assert not res.parse_diagnostics, [d.format() for d in res.parse_diagnostics]
    assert len(res.verdicts) == 1
    return res.verdicts[0]


def pipeline(source: str):
    """(checked, table, solver) for encoder/symstate level tests."""
    chk = checked(source)
    table = speclogic.build_invariant_table(chk)
    return chk, table, Solver()
