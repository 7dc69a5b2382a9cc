"""SQL logical-form data model, delexicalized patterns, and slot templates.

A query is a single SELECT over one table: one select column with an
optional aggregation, plus 0-4 AND-joined where conditions.  Stripping the
lexical content (columns, values) from a query leaves its logical pattern:
the aggregation operator plus the multiset of where comparison operators.
There are 6 * 35 = 210 such patterns.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Sequence, Union

from .errors import MalformedRecord, SchemaMismatch

MAX_CONDITIONS = 4


class AggOp(enum.IntEnum):
    """Aggregation operators, numbered in WikiSQL convention order."""

    NONE = 0
    MAX = 1
    MIN = 2
    COUNT = 3
    SUM = 4
    AVG = 5


class CmpOp(enum.IntEnum):
    """Where-clause comparison operators, numbered in WikiSQL convention order."""

    EQ = 0
    GT = 1
    LT = 2


AGG_KEYWORDS = {
    AggOp.NONE: "",
    AggOp.MAX: "MAX",
    AggOp.MIN: "MIN",
    AggOp.COUNT: "COUNT",
    AggOp.SUM: "SUM",
    AggOp.AVG: "AVG",
}

CMP_SYMBOLS = {CmpOp.EQ: "=", CmpOp.GT: ">", CmpOp.LT: "<"}


@dataclass(frozen=True)
class Condition:
    """One where-clause condition: ``column op value``."""

    column: int
    op: CmpOp
    value: str

    def __post_init__(self):
        if self.column < 0:
            raise MalformedRecord(f"negative condition column {self.column}")
        if not isinstance(self.value, str) or self.value == "":
            raise MalformedRecord("condition value must be non-empty text")


@dataclass(frozen=True)
class SqlQuery:
    """A complete logical form: select column, aggregation, conditions."""

    select_column: int
    agg: AggOp
    conditions: tuple[Condition, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if self.select_column < 0:
            raise MalformedRecord(f"negative select column {self.select_column}")
        if len(self.conditions) > MAX_CONDITIONS:
            raise MalformedRecord(
                f"{len(self.conditions)} conditions exceed the maximum of "
                f"{MAX_CONDITIONS}"
            )
        cols = [c.column for c in self.conditions]
        if len(set(cols)) != len(cols):
            raise MalformedRecord(f"duplicate where-clause columns in {cols}")


@dataclass(frozen=True)
class LogicalPattern:
    """A delexicalized query: aggregation plus the multiset of where operators.

    ``cond_ops`` is stored canonically sorted (EQ before GT before LT) so two
    queries whose conditions differ only in order share one pattern.
    """

    agg: AggOp
    cond_ops: tuple[CmpOp, ...] = ()

    def __post_init__(self):
        ops = tuple(sorted(self.cond_ops))
        if len(ops) > MAX_CONDITIONS:
            raise MalformedRecord(f"{len(ops)} condition operators exceed {MAX_CONDITIONS}")
        object.__setattr__(self, "cond_ops", ops)


class SlotKind(enum.Enum):
    SELECT_COL = "select_col"
    WHERE_COL = "where_col"
    WHERE_VAL = "where_val"


@dataclass(frozen=True)
class Fixed:
    """A template token fixed by the pattern (SQL keyword or operator)."""

    token: str


@dataclass(frozen=True)
class Slot:
    """A lexical slot to be filled by the grounder.

    ``cond_index`` is the 0-based condition the slot belongs to, or None for
    the select column.
    """

    kind: SlotKind
    cond_index: int | None = None


TemplateToken = Union[Fixed, Slot]


@dataclass(frozen=True)
class SlotTemplate:
    """Token sequence of a pattern with lexical positions marked as slots."""

    pattern: LogicalPattern
    tokens: tuple[TemplateToken, ...]

    @property
    def slot_count(self) -> int:
        return sum(1 for t in self.tokens if isinstance(t, Slot))


def parse_query(record: dict) -> SqlQuery:
    """Build a validated SqlQuery from a WikiSQL-style ``sel/agg/conds`` record."""
    for key in ("sel", "agg", "conds"):
        if key not in record:
            raise MalformedRecord(f"missing field {key!r}")
    try:
        agg = AggOp(int(record["agg"]))
    except ValueError:
        raise MalformedRecord(f"aggregation code {record['agg']!r} out of range") from None
    sel = record["sel"]
    if not isinstance(sel, int) or isinstance(sel, bool):
        raise MalformedRecord(f"select column {sel!r} is not an integer")
    conds = []
    for raw in record["conds"]:
        if len(raw) != 3:
            raise MalformedRecord(f"condition {raw!r} is not a [column, op, value] triple")
        col, op_code, value = raw
        try:
            op = CmpOp(int(op_code))
        except ValueError:
            raise MalformedRecord(f"operator code {op_code!r} out of range") from None
        if not isinstance(col, int) or isinstance(col, bool):
            raise MalformedRecord(f"condition column {col!r} is not an integer")
        conds.append(Condition(column=col, op=op, value=str(value)))
    return SqlQuery(select_column=sel, agg=agg, conditions=tuple(conds))


def delexicalize(query: SqlQuery) -> LogicalPattern:
    """Strip lexical content, keeping aggregation and the where-operator multiset."""
    return LogicalPattern(agg=query.agg, cond_ops=tuple(c.op for c in query.conditions))


def enumerate_taxonomy() -> list[LogicalPattern]:
    """All 210 logical patterns in a stable order.

    Ordered by aggregation code, then condition count, then lexicographic
    operator order; the position of a pattern in this list is its PatternId.
    """
    patterns = []
    for agg in AggOp:
        for size in range(MAX_CONDITIONS + 1):
            for ops in itertools.combinations_with_replacement(CmpOp, size):
                patterns.append(LogicalPattern(agg=agg, cond_ops=ops))
    return patterns


TAXONOMY = enumerate_taxonomy()
_PATTERN_IDS = {p: i for i, p in enumerate(TAXONOMY)}


def pattern_id(pattern: LogicalPattern) -> int:
    """Stable integer id of a pattern within the taxonomy."""
    return _PATTERN_IDS[pattern]


def pattern_to_template(pattern: LogicalPattern) -> SlotTemplate:
    """Token sequence for a pattern, with lexical positions marked as slots.

    Each condition contributes one column slot and one value slot; the value
    slot is decoded as a (begin, end) pointer pair.
    """
    tokens: list[TemplateToken] = [Fixed("SELECT")]
    if pattern.agg != AggOp.NONE:
        tokens.append(Fixed(AGG_KEYWORDS[pattern.agg]))
    tokens.append(Slot(SlotKind.SELECT_COL))
    if pattern.cond_ops:
        tokens.append(Fixed("WHERE"))
        for i, op in enumerate(pattern.cond_ops):
            if i > 0:
                tokens.append(Fixed("AND"))
            tokens.append(Slot(SlotKind.WHERE_COL, i))
            tokens.append(Fixed(CMP_SYMBOLS[op]))
            tokens.append(Slot(SlotKind.WHERE_VAL, i))
    return SlotTemplate(pattern=pattern, tokens=tuple(tokens))


def canonical_conditions(query: SqlQuery) -> tuple[Condition, ...]:
    """Conditions reordered to match the pattern's canonical operator order.

    Stable: conditions with equal operators keep their original order, so the
    i-th slot of the pattern's template corresponds to the i-th entry here.
    """
    return tuple(sorted(query.conditions, key=lambda c: c.op))


def canonical_sql_string(query: SqlQuery, schema) -> str:
    """Deterministic human-readable rendering against a table schema."""
    headers = schema.headers
    if query.select_column >= len(headers):
        raise SchemaMismatch(
            f"select column {query.select_column} outside schema of {len(headers)} headers"
        )
    for cond in query.conditions:
        if cond.column >= len(headers):
            raise SchemaMismatch(
                f"condition column {cond.column} outside schema of {len(headers)} headers"
            )
    agg = AGG_KEYWORDS[query.agg]
    parts = [f"SELECT {agg}({headers[query.select_column]})"]
    if query.conditions:
        rendered = [
            f"{headers[c.column]} {CMP_SYMBOLS[c.op]} {c.value}"
            for c in canonical_conditions(query)
        ]
        parts.append("WHERE " + " AND ".join(rendered))
    return " ".join(parts)


def _normalize_value(value: str) -> str:
    return " ".join(value.split()).casefold()


def queries_equal(a: SqlQuery, b: SqlQuery) -> bool:
    """Full logical-form equality.

    Condition lists compare as multisets; values compare case-insensitively
    after whitespace normalization.
    """
    if a.select_column != b.select_column or a.agg != b.agg:
        return False
    if len(a.conditions) != len(b.conditions):
        return False
    key = lambda c: (c.column, int(c.op), _normalize_value(c.value))
    return sorted(map(key, a.conditions)) == sorted(map(key, b.conditions))
