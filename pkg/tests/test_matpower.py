import random
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _fixtures import CASES, case_text, raw
from coopt import matpower as mp

MINIMAL = """function mpc = one
mpc.baseMVA = 100;
mpc.bus = [1 3 5 0 0 0 1 1 0 135 1 1.05 0.95];
mpc.gen = [1 0 0 10 -10 1 100 1 20 0];
mpc.branch = [];
mpc.gencost = [2 0 0 3 0.01 10 0];
"""


def count_rows_by_scan(text: str, table: str) -> int:
    """Data lines of ``mpc.<table> = [ ... ];`` counted without the tokenizer."""
    lines = text.splitlines()
    start = next(k for k, ln in enumerate(lines) if re.match(rf"\s*mpc\.{table}\s*=\s*\[", ln))
    n = 0
    for ln in lines[start + 1:]:
        body = ln.split("%")[0].strip()
        if body.startswith("]"):
            break
        if re.search(r"\d", body):
            n += 1
    return n


def test_case9_has_nine_buses():
    assert raw("case9").bus_rows.shape[0] == 9
    assert raw("case9").case_name == "case9"
    assert raw("case9").base_mva == 100.0


@pytest.mark.parametrize("name", CASES)
def test_row_counts_match_text_scan(name):
    text = case_text(name)
    rc = mp.parse_case(text)
    for table in ("bus", "gen", "branch", "gencost"):
        assert getattr(rc, f"{table}_rows").shape[0] == count_rows_by_scan(text, table), table


def test_minimal_single_bus_case():
    rc = mp.parse_case(MINIMAL)
    assert rc.bus_rows.shape[0] == 1
    assert rc.branch_rows.shape[0] == 0
    assert rc.gen_rows.shape == (1, 10)


def test_columns_kept_verbatim():
    rc = raw("case9")
    assert rc.bus_rows.shape[1] == 13
    assert rc.gencost_rows[0].tolist() == [2, 1500, 0, 3, 0.11, 5, 150]


def test_extras_preserved():
    rc = raw("case9")
    assert rc.extras["version"] == "2"


@pytest.mark.parametrize(
    "text, exc",
    [
        (MINIMAL.replace("mpc.gencost = [2 0 0 3 0.01 10 0];", "mpc.gencost = [1 0 0 3 0.01 10 0];"),
         mp.UnsupportedCostModel),
        (MINIMAL.replace("0 3 0.01 10 0]", "0 4 1 0.01 10 0]"), mp.UnsupportedCostModel),
        (MINIMAL.replace("mpc.branch = [];\n", ""), mp.MissingTable),
        (MINIMAL.replace("mpc.baseMVA = 100;\n", ""), mp.MissingTable),
        (MINIMAL.replace("mpc.bus = [1 3 5", "mpc.bus = [1 3 5 1 3 5 0 0 0 1 1 0 135 1 1.05 0.95; 1 3 5"),
         mp.MalformedMatrix),
        (MINIMAL.replace("[1 3 5 0 0 0 1 1 0 135 1 1.05 0.95]",
                         "[1 3 5 0 0 0 1 1 0 135 1 1.05 0.95; 1 3 5 0 0 0 1 1 0 135 1 1.05 0.95]"),
         mp.DuplicateBusId),
        (MINIMAL.replace("mpc.gen = [1 0", "mpc.gen = [7 0"), mp.UnknownBusReference),
        (MINIMAL + "mpc.areas = ones(3);\n", mp.UnsupportedSyntax),
        (MINIMAL.replace("mpc.bus = [1 3 5", "mpc.bus = [1 3 x"), mp.MalformedMatrix),
        (MINIMAL.replace("];\nmpc.gen", "\nmpc.gen", 1), mp.UnsupportedSyntax),
        (MINIMAL.replace("mpc.baseMVA = 100;", "mpc.baseMVA = 100 7;"), mp.UnsupportedSyntax),
    ],
)
def test_typed_errors(text, exc):
    with pytest.raises(exc):
        mp.parse_case(text)


def test_trailing_tokens_in_matrix_are_an_error():
    # a ragged row would otherwise silently drop a value
    bad = MINIMAL.replace("mpc.gencost = [2 0 0 3 0.01 10 0];", "mpc.gencost = [2 0 0 3 0.01 10 0 ; 5];")
    with pytest.raises(mp.CaseError):
        mp.parse_case(bad)


def test_comments_and_continuations():
    text = MINIMAL.replace("mpc.bus = [1 3 5", "% leading comment\nmpc.bus = [1 3 ...\n 5")
    assert mp.parse_case(text) == mp.parse_case(MINIMAL)


def test_newline_rows_without_semicolons():
    a = mp.parse_case(MINIMAL.replace("[2 0 0 3 0.01 10 0]", "[2 0 0 3 0.01 10 0\n]"))
    assert a == mp.parse_case(MINIMAL)


def test_inf_and_nan_tokens():
    text = MINIMAL.replace("mpc.gen = [1 0 0 10 -10", "mpc.gen = [1 0 0 Inf -Inf")
    rc = mp.parse_case(text)
    assert rc.gen_rows[0, 3] == np.inf and rc.gen_rows[0, 4] == -np.inf
    assert mp.parse_case(mp.dump_case(rc)) == rc


@pytest.mark.parametrize("name", CASES)
def test_round_trip_bundled(name):
    rc = raw(name)
    again = mp.parse_case(mp.dump_case(rc))
    assert again == rc
    for table in ("bus_rows", "gen_rows", "branch_rows", "gencost_rows"):
        assert getattr(again, table).tobytes() == getattr(rc, table).tobytes()


def test_round_trip_empty_branch_table():
    # an empty literal carries no width, so parsed empty tables use the minimum width
    rc = mp.parse_case(MINIMAL)
    assert rc.branch_rows.shape == (0, 11)
    assert mp.parse_case(mp.dump_case(rc)) == rc


def test_bundled_case_path_unknown():
    with pytest.raises(FileNotFoundError):
        mp.bundled_case_path("case0")


def test_equality_is_fieldwise():
    a = raw("case9")
    b = mp.parse_case(mp.dump_case(a))
    b.bus_rows = b.bus_rows.copy()
    b.bus_rows[0, 2] += 1e-12
    assert a != b


@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_whitespace_insensitive(data):
    """Extra blanks between tokens never change the result.

    Newlines are inserted inside semicolon-delimited matrix literals and
    between statements, the places where the format gives them no meaning.
    """
    text = mp.dump_case(raw("case9"))
    out = []
    for line in text.splitlines():
        toks = line.split()
        in_matrix = line.startswith("\t")
        choices = [" ", "  ", "\t", " \t "] + (["\n", " \n\t"] if in_matrix else [])
        glue = [data.draw(st.sampled_from(choices)) for _ in toks]
        out.append("".join(t + g for t, g in zip(toks, glue)))
        if data.draw(st.booleans()):
            out.append("")
    assert mp.parse_case("\n".join(out)) == raw("case9")


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=80, deadline=None)
@given(
    pd=st.lists(st.floats(0, 1e6, allow_nan=False), min_size=2, max_size=6),
    extra=st.lists(finite, min_size=0, max_size=3),
    coef=st.tuples(finite, finite, finite),
    base=st.floats(1e-3, 1e6, allow_nan=False),
)
def test_round_trip_generated(pd, extra, coef, base):
    n = len(pd)
    bus = np.array([[k + 1, 1, p, 0, 0, 0, 1, 1, 0, 135, 1, 1.1, 0.9] + list(extra) for k, p in enumerate(pd)])
    gen = np.array([[1, 0, 0, 10, -10, 1, 100, 1, 50, 0]])
    branch = np.array([[k + 1, k + 2, 0, 0.1, 0, 100, 100, 100, 0, 0, 1, -360, 360] for k in range(n - 1)])
    gencost = np.array([[2, 0, 0, 3, *coef]])
    rc = mp.RawCase("gen", base, bus, gen, branch.reshape(-1, 13), gencost, {"version": "2", "note": 1.5})
    assert mp.parse_case(mp.dump_case(rc)) == rc


# -- fuzzing -------------------------------------------------------------------------------

_SNIPPETS = ["[", "]", ";", "=", "'", "%", "...", "mpc.", "function", "NaN", "-", "1e309", "(", "\x00",
             "mpc.bus = [];", "2", ",", "\n", "é", "Inf", "mpc.gencost = [2 0 0 9 1];"]


def _mutate(text: str, rng: random.Random) -> str:
    chars = list(text)
    for _ in range(rng.randint(1, 8)):
        op = rng.randrange(5)
        pos = rng.randrange(len(chars) + 1)
        if op == 0 and chars:
            del chars[min(pos, len(chars) - 1)]
        elif op == 1:
            chars[pos:pos] = list(rng.choice(_SNIPPETS))
        elif op == 2 and chars:
            chars[min(pos, len(chars) - 1)] = chr(rng.randrange(32, 127))
        elif op == 3:
            end = min(len(chars), pos + rng.randint(1, 200))
            del chars[pos:end]
        else:
            a, b = sorted(rng.randrange(len(chars) + 1) for _ in range(2))
            chars[pos:pos] = chars[a:b]
    return "".join(chars)


def fuzz_corpus(n: int = 1000, seed: int = 20261015) -> list[str]:
    rng = random.Random(seed)
    bases = [case_text(name) for name in ("case9", "case14", "case30")] + [MINIMAL]
    return [_mutate(rng.choice(bases), rng) for _ in range(n)]


def parse_outcomes(corpus):
    """Count parse results and typed errors; anything else propagates."""
    ok = typed = 0
    for text in corpus:
        try:
            mp.parse_case(text)
            ok += 1
        except mp.CaseError:
            typed += 1
    return ok, typed


def test_fuzz_corpus_never_escapes_typed_errors():
    ok, typed = parse_outcomes(fuzz_corpus())
    assert ok + typed == 1000
    assert typed > 100 and ok > 0  # the corpus exercises both paths
