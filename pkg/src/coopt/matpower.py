"""Reader and writer for MATPOWER ``.m`` case files.

Only the part of MATLAB syntax that case files actually use is understood:
a ``function mpc = name`` header, ``mpc.<field> = <value>;`` assignments
whose value is a number, a quoted string or a matrix literal, and ``%``
comments. Anything else is rejected with a :class:`CaseError` subclass.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CaseError",
    "MalformedMatrix",
    "MissingTable",
    "UnsupportedCostModel",
    "UnsupportedSyntax",
    "DuplicateBusId",
    "UnknownBusReference",
    "RawCase",
    "parse_case",
    "read_case",
    "dump_case",
    "bundled_case_path",
]

TABLES = ("bus", "gen", "branch", "gencost")

# MATPOWER column indices (0-based) used downstream.
BUS_I, PD = 0, 2
GEN_BUS, GEN_STATUS, PMAX = 0, 7, 8
F_BUS, T_BUS, BR_X, RATE_A, BR_STATUS = 0, 1, 3, 5, 10
COST_MODEL, NCOST, COST = 0, 3, 4


class CaseError(ValueError):
    """Base class for every case-file parse or validation failure."""


class MalformedMatrix(CaseError):
    pass


class MissingTable(CaseError):
    pass


class UnsupportedCostModel(CaseError):
    pass


class UnsupportedSyntax(CaseError):
    pass


class DuplicateBusId(CaseError):
    pass


class UnknownBusReference(CaseError):
    pass


@dataclass(eq=False)
class RawCase:
    """Tables of a MATPOWER case, columns kept exactly as in the file."""

    case_name: str
    base_mva: float
    bus_rows: np.ndarray
    gen_rows: np.ndarray
    branch_rows: np.ndarray
    gencost_rows: np.ndarray
    # other ``mpc.*`` assignments, kept for round-tripping
    extras: dict[str, object] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RawCase):
            return NotImplemented
        if self.case_name != other.case_name or self.base_mva != other.base_mva:
            return False
        for name in ("bus_rows", "gen_rows", "branch_rows", "gencost_rows"):
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or not np.array_equal(a, b, equal_nan=True):
                return False
        if self.extras.keys() != other.extras.keys():
            return False
        for key, a in self.extras.items():
            b = other.extras[key]
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not (
                    isinstance(a, np.ndarray)
                    and isinstance(b, np.ndarray)
                    and a.shape == b.shape
                    and np.array_equal(a, b, equal_nan=True)
                ):
                    return False
            elif a != b:
                return False
        return True

    @property
    def bus_ids(self) -> np.ndarray:
        return self.bus_rows[:, BUS_I].astype(int)


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\f\v]+)
  | (?P<comment>%[^\n]*)
  | (?P<newline>\n)
  | (?P<cont>\.\.\.[^\n]*\n)
  | (?P<string>'[^'\n]*')
  | (?P<number>[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]?(?:Inf|inf|NaN|nan)\b)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<punct>[=\[\];,])
  | (?P<other>.)
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    line = 1
    for m in _TOKEN.finditer(text):
        kind = m.lastgroup
        value = m.group()
        if kind == "other":
            raise UnsupportedSyntax(f"line {line}: unexpected character {value!r}")
        if kind in ("newline", "cont"):
            if kind == "newline":
                tokens.append(("newline", value, line))
            line += 1
            continue
        if kind not in ("ws", "comment"):
            tokens.append((kind, value, line))
    return tokens


def _parse_number(tok: str) -> float:
    low = tok.lower().lstrip("+")
    if low in ("inf", "-inf", "nan", "-nan"):
        return float(low)
    return float(tok)


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self, skip_newlines=True):
        pos = self.pos
        while skip_newlines and pos < len(self.tokens) and self.tokens[pos][0] == "newline":
            pos += 1
        return self.tokens[pos] if pos < len(self.tokens) else None

    def next(self, skip_newlines=True):
        while skip_newlines and self.pos < len(self.tokens) and self.tokens[self.pos][0] == "newline":
            self.pos += 1
        if self.pos >= len(self.tokens):
            raise UnsupportedSyntax("unexpected end of input")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, value):
        kind, got, line = self.next()
        if got != value:
            raise UnsupportedSyntax(f"line {line}: expected {value!r}, got {got!r}")

    def matrix(self, name: str) -> np.ndarray:
        # collect raw tokens up to the closing bracket
        start = self.pos
        depth_line = self.tokens[start - 1][2]
        body = []
        while True:
            if self.pos >= len(self.tokens):
                raise MalformedMatrix(f"{name}: unterminated matrix starting line {depth_line}")
            tok = self.tokens[self.pos]
            self.pos += 1
            if tok[1] == "]":
                break
            if tok[1] in ("[", "="):
                raise UnsupportedSyntax(f"line {tok[2]}: nested {tok[1]!r} in matrix {name}")
            body.append(tok)
        # newlines separate rows only when the literal uses no semicolons
        semis = any(t[1] == ";" for t in body)
        rows: list[list[float]] = [[]]
        for kind, value, line in body:
            if value == ";" or (kind == "newline" and not semis):
                rows.append([])
            elif kind == "newline" or value == ",":
                continue
            elif kind == "number":
                rows[-1].append(_parse_number(value))
            else:
                raise MalformedMatrix(f"line {line}: non-numeric token {value!r} in matrix {name}")
        rows = [r for r in rows if r]
        if not rows:
            return np.zeros((0, 0))
        width = len(rows[0])
        for k, r in enumerate(rows):
            if len(r) != width:
                raise MalformedMatrix(
                    f"matrix {name}: row {k + 1} has {len(r)} columns, expected {width}"
                )
        return np.array(rows, dtype=float)


def parse_case(text: str) -> RawCase:
    """Parse MATPOWER case source text into a :class:`RawCase`.

    Raises a :class:`CaseError` subclass for any input that is not a
    well-formed case file; no other exception type escapes.
    """
    try:
        return _parse_case(text)
    except CaseError:
        raise
    except (ValueError, IndexError, TypeError, OverflowError) as exc:
        raise CaseError(f"unparseable case file: {exc}") from exc


def _parse_case(text: str) -> RawCase:
    p = _Parser(_tokenize(text))
    case_name = ""
    values: dict[str, object] = {}
    order: list[str] = []

    tok = p.peek()
    if tok is not None and tok[1] == "function":
        p.next()
        kind, out, line = p.next()
        if kind != "ident":
            raise UnsupportedSyntax(f"line {line}: bad function header")
        p.expect("=")
        kind, case_name, line = p.next()
        if kind != "ident" or "." in case_name:
            raise UnsupportedSyntax(f"line {line}: bad function name")

    while p.peek() is not None:
        kind, target, line = p.next()
        if kind != "ident" or not target.startswith("mpc.") or target.count(".") != 1:
            raise UnsupportedSyntax(f"line {line}: expected 'mpc.<field> =', got {target!r}")
        name = target[4:]
        p.expect("=")
        kind, value, line = p.next()
        if value == "[":
            parsed: object = p.matrix(name)
        elif kind == "number":
            parsed = _parse_number(value)
        elif kind == "string":
            parsed = value[1:-1]
        else:
            raise UnsupportedSyntax(f"line {line}: unsupported value {value!r} for mpc.{name}")
        nxt = p.peek(skip_newlines=False)
        if nxt is not None and nxt[1] in (";", ","):
            p.next(skip_newlines=False)
        elif nxt is not None and nxt[0] != "newline":
            raise UnsupportedSyntax(f"line {nxt[2]}: trailing token {nxt[1]!r} after mpc.{name}")
        if name in values:
            raise UnsupportedSyntax(f"mpc.{name} assigned twice")
        values[name] = parsed
        order.append(name)

    if "baseMVA" not in values:
        raise MissingTable("mpc.baseMVA missing")
    for tab in TABLES:
        if tab not in values:
            raise MissingTable(f"mpc.{tab} missing")
        if not isinstance(values[tab], np.ndarray):
            raise MalformedMatrix(f"mpc.{tab} is not a matrix")
    base_mva = values["baseMVA"]
    if not isinstance(base_mva, float):
        raise MalformedMatrix("mpc.baseMVA must be a scalar")
    if not base_mva > 0 or not np.isfinite(base_mva):
        raise CaseError(f"baseMVA must be positive, got {base_mva}")

    extras = {k: values[k] for k in order if k not in TABLES and k != "baseMVA"}
    raw = RawCase(
        case_name=case_name,
        base_mva=base_mva,
        bus_rows=_table(values["bus"], "bus", min_cols=3),
        gen_rows=_table(values["gen"], "gen", min_cols=9),
        branch_rows=_table(values["branch"], "branch", min_cols=11),
        gencost_rows=_table(values["gencost"], "gencost", min_cols=4),
        extras=extras,
    )
    _validate(raw)
    return raw


def _table(m: np.ndarray, name: str, min_cols: int) -> np.ndarray:
    if m.size and m.shape[1] < min_cols:
        raise MalformedMatrix(f"mpc.{name} needs at least {min_cols} columns, has {m.shape[1]}")
    if m.size == 0:
        return np.zeros((0, min_cols))
    return m


def _validate(raw: RawCase) -> None:
    if raw.bus_rows.shape[0] == 0:
        raise MalformedMatrix("mpc.bus is empty")
    ids = raw.bus_rows[:, BUS_I]
    if not np.all(np.isfinite(ids)) or np.any(ids != np.round(ids)):
        raise MalformedMatrix("bus ids must be integers")
    uniq, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        raise DuplicateBusId(f"duplicate bus id(s): {uniq[counts > 1].astype(int).tolist()}")
    known = set(ids.tolist())
    for k, row in enumerate(raw.branch_rows):
        for end in (row[F_BUS], row[T_BUS]):
            if end not in known:
                raise UnknownBusReference(f"branch {k + 1} references unknown bus {end:g}")
    for k, row in enumerate(raw.gen_rows):
        if row[GEN_BUS] not in known:
            raise UnknownBusReference(f"generator {k + 1} at unknown bus {row[GEN_BUS]:g}")
    ng = raw.gen_rows.shape[0]
    if raw.gencost_rows.shape[0] != ng:
        raise MalformedMatrix(
            f"mpc.gencost has {raw.gencost_rows.shape[0]} rows, expected {ng} (one per generator)"
        )
    for k, row in enumerate(raw.gencost_rows):
        if row[COST_MODEL] != 2:
            raise UnsupportedCostModel(f"gencost row {k + 1}: model {row[COST_MODEL]:g}, only 2 (polynomial) supported")
        n = row[NCOST]
        if n != int(n) or n < 1 or n > 3:
            raise UnsupportedCostModel(f"gencost row {k + 1}: polynomial with {n:g} coefficients, degree <= 2 required")
        if COST + int(n) > raw.gencost_rows.shape[1]:
            raise MalformedMatrix(f"gencost row {k + 1}: {int(n)} coefficients declared, fewer present")


def read_case(path: str | Path) -> RawCase:
    return parse_case(Path(path).read_text())


def bundled_case_path(name: str) -> Path:
    """Path of a case file shipped with the package (``"case9"`` etc.)."""
    stem = name[:-2] if name.endswith(".m") else name
    path = Path(__file__).parent / "data" / "cases" / f"{stem}.m"
    if not path.exists():
        raise FileNotFoundError(f"no bundled case named {name!r}")
    return path


def _fmt(v: float) -> str:
    if np.isnan(v):
        return "NaN"
    if np.isinf(v):
        return "Inf" if v > 0 else "-Inf"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _dump_matrix(name: str, m: np.ndarray) -> list[str]:
    lines = [f"mpc.{name} = ["]
    for row in m:
        lines.append("\t" + "\t".join(_fmt(v) for v in row) + ";")
    lines.append("];")
    return lines


def dump_case(raw: RawCase) -> str:
    """Canonical case-file text; ``parse_case(dump_case(c)) == c`` holds."""
    lines = []
    if raw.case_name:
        lines.append(f"function mpc = {raw.case_name}")
    for key, value in raw.extras.items():
        if isinstance(value, np.ndarray):
            lines += _dump_matrix(key, value)
        elif isinstance(value, str):
            lines.append(f"mpc.{key} = '{value}';")
        else:
            lines.append(f"mpc.{key} = {_fmt(value)};")
    lines.append(f"mpc.baseMVA = {_fmt(raw.base_mva)};")
    for tab in TABLES:
        lines += _dump_matrix(tab, getattr(raw, f"{tab}_rows"))
    return "\n".join(lines) + "\n"
