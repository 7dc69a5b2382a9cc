"""Dataset ingestion, tokenization, span alignment, histograms, and samplers."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import sql_logic
from .errors import EmptyDataset, InsufficientPattern, MalformedRecord, SampleTooLarge
from .sql_logic import SqlQuery, TAXONOMY

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Deterministic rule tokenizer.

    Lowercases, splits on Unicode whitespace, and breaks punctuation into
    single-character tokens; runs of word characters (letters, digits,
    underscore) stay contiguous.
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class TableSchema:
    """A table id plus its ordered header texts."""

    table_id: str
    headers: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "headers", tuple(self.headers))
        if not self.headers:
            raise MalformedRecord(f"table {self.table_id!r} has no headers")
        if any(not h for h in self.headers):
            raise MalformedRecord(f"table {self.table_id!r} has an empty header")


# Span of one condition value inside the question tokens: inclusive
# (begin, end) indices, or None when the value does not occur.
ValueSpan = "tuple[int, int] | None"


@dataclass(frozen=True)
class Example:
    """One question paired with its gold query and value-span alignment."""

    example_id: str
    question: str
    tokens: tuple[str, ...]
    table_id: str
    gold: SqlQuery
    value_spans: tuple[tuple[int, int] | None, ...] = ()

    @property
    def fully_aligned(self) -> bool:
        return all(span is not None for span in self.value_spans)


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    schemas: dict[str, TableSchema]

    def __len__(self) -> int:
        return len(self.examples)

    def schema_for(self, example: Example) -> TableSchema:
        return self.schemas[example.table_id]

    def subset(self, indices) -> "Dataset":
        picked = tuple(self.examples[i] for i in indices)
        tables = {ex.table_id for ex in picked}
        return Dataset(
            examples=picked,
            schemas={tid: s for tid, s in self.schemas.items() if tid in tables},
        )


@dataclass
class IngestReport:
    """Counts from one load: what was kept, dropped, and left unaligned."""

    total_records: int = 0
    kept: int = 0
    dropped_duplicate_column: int = 0
    dropped_empty_value: int = 0
    unaligned_examples: int = 0
    drop_lines: list[int] = field(default_factory=list)

    @property
    def dropped(self) -> int:
        return self.dropped_duplicate_column + self.dropped_empty_value


def align_value_spans(example: Example) -> Example:
    """Locate each condition value as a contiguous token subsequence.

    The first case-insensitive occurrence wins; values absent from the
    question get a None span.
    """
    spans = []
    for cond in sql_logic.canonical_conditions(example.gold):
        needle = tuple(tokenize(cond.value))
        spans.append(_find_subsequence(example.tokens, needle))
    return replace(example, value_spans=tuple(spans))


def _find_subsequence(tokens, needle):
    if not needle or len(needle) > len(tokens):
        return None
    for start in range(len(tokens) - len(needle) + 1):
        if tuple(tokens[start : start + len(needle)]) == needle:
            return (start, start + len(needle) - 1)
    return None


def load_wikisql(questions_path, tables_path) -> tuple[Dataset, IngestReport]:
    """Load a WikiSQL ver 1.1 style split (one JSON record per line).

    Structurally corrupt lines raise MalformedRecord naming the line;
    records violating query invariants (duplicate where columns, empty
    values) are dropped and counted.
    """
    schemas: dict[str, TableSchema] = {}
    with open(tables_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                schema = TableSchema(table_id=str(rec["id"]), headers=tuple(rec["header"]))
            except MalformedRecord as exc:
                raise MalformedRecord(f"{tables_path}:{lineno}: {exc}") from None
            except (KeyError, ValueError, TypeError) as exc:
                raise MalformedRecord(f"{tables_path}:{lineno}: {exc}") from None
            schemas[schema.table_id] = schema

    report = IngestReport()
    examples = []
    with open(questions_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            report.total_records += 1
            try:
                rec = json.loads(line)
                question = rec["question"]
                table_id = str(rec["table_id"])
                sql = rec["sql"]
            except (KeyError, ValueError, TypeError) as exc:
                raise MalformedRecord(f"{questions_path}:{lineno}: {exc}") from None
            if table_id not in schemas:
                raise MalformedRecord(
                    f"{questions_path}:{lineno}: unknown table {table_id!r}"
                )
            try:
                gold = sql_logic.parse_query(sql)
            except MalformedRecord as exc:
                msg = str(exc)
                if "duplicate" in msg:
                    report.dropped_duplicate_column += 1
                elif "non-empty" in msg:
                    report.dropped_empty_value += 1
                else:
                    raise MalformedRecord(f"{questions_path}:{lineno}: {exc}") from None
                report.drop_lines.append(lineno)
                continue
            schema = schemas[table_id]
            if gold.select_column >= len(schema.headers) or any(
                c.column >= len(schema.headers) for c in gold.conditions
            ):
                raise MalformedRecord(
                    f"{questions_path}:{lineno}: column index outside schema"
                )
            example = Example(
                example_id=f"{lineno}",
                question=question,
                tokens=tuple(tokenize(question)),
                table_id=table_id,
                gold=gold,
            )
            example = align_value_spans(example)
            if not example.fully_aligned:
                report.unaligned_examples += 1
            examples.append(example)
            report.kept += 1

    used = {ex.table_id for ex in examples}
    return (
        Dataset(
            examples=tuple(examples),
            schemas={tid: s for tid, s in schemas.items() if tid in used},
        ),
        report,
    )


def pattern_histogram(dataset: Dataset) -> np.ndarray:
    """Example counts per PatternId over the full 210-pattern taxonomy."""
    counts = np.zeros(len(TAXONOMY), dtype=np.int64)
    for ex in dataset.examples:
        counts[sql_logic.pattern_id(sql_logic.delexicalize(ex.gold))] += 1
    return counts


def top_patterns(histogram: np.ndarray, k: int) -> list[int]:
    """The k most frequent pattern ids; ties broken by lower id."""
    order = sorted(range(len(histogram)), key=lambda i: (-histogram[i], i))
    return order[:k]


def _indices_by_pattern(dataset: Dataset) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, ex in enumerate(dataset.examples):
        pid = sql_logic.pattern_id(sql_logic.delexicalize(ex.gold))
        groups.setdefault(pid, []).append(i)
    return groups


def sample_random(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Uniform subset of size n without replacement, deterministic per seed."""
    if n > len(dataset):
        raise SampleTooLarge(f"requested {n} of {len(dataset)} examples")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(dataset), size=n, replace=False)
    return dataset.subset(sorted(int(i) for i in picked))


def sample_uniform(dataset: Dataset, pattern_ids, per_pattern_k: int, seed: int) -> Dataset:
    """Exactly per_pattern_k examples for each listed pattern."""
    rng = np.random.default_rng(seed)
    groups = _indices_by_pattern(dataset)
    chosen: list[int] = []
    for pid in pattern_ids:
        pool = groups.get(pid, [])
        if len(pool) < per_pattern_k:
            raise InsufficientPattern(pid, len(pool), per_pattern_k)
        picked = rng.choice(len(pool), size=per_pattern_k, replace=False)
        chosen.extend(pool[int(i)] for i in picked)
    return dataset.subset(sorted(chosen))


def sample_hybrid(
    dataset: Dataset, pattern_ids, ratio: float, floor: int, seed: int
) -> Dataset:
    """Source-proportional counts per pattern, with a guaranteed minimum.

    Each listed pattern contributes max(floor, round(source_count * ratio))
    examples.
    """
    if ratio <= 0:
        raise ValueError("ratio must be positive")
    rng = np.random.default_rng(seed)
    groups = _indices_by_pattern(dataset)
    chosen: list[int] = []
    for pid in pattern_ids:
        pool = groups.get(pid, [])
        want = max(floor, int(round(len(pool) * ratio)))
        if len(pool) < want:
            raise InsufficientPattern(pid, len(pool), want)
        picked = rng.choice(len(pool), size=want, replace=False)
        chosen.extend(pool[int(i)] for i in picked)
    return dataset.subset(sorted(chosen))


def dataset_to_json(dataset: Dataset, source: str = "") -> str:
    """Serialize a dataset deterministically (stable key order, one object)."""
    payload = {
        "format": "retsql-dataset",
        "version": 1,
        "source": source,
        "schemas": {
            tid: list(schema.headers) for tid, schema in sorted(dataset.schemas.items())
        },
        "examples": [
            {
                "id": ex.example_id,
                "question": ex.question,
                "table_id": ex.table_id,
                "sql": {
                    "sel": ex.gold.select_column,
                    "agg": int(ex.gold.agg),
                    "conds": [
                        [c.column, int(c.op), c.value] for c in ex.gold.conditions
                    ],
                },
                "spans": [list(s) if s is not None else None for s in ex.value_spans],
            }
            for ex in dataset.examples
        ],
    }
    return json.dumps(payload, sort_keys=True, ensure_ascii=False) + "\n"


def dataset_from_json(text: str) -> Dataset:
    payload = json.loads(text)
    if payload.get("format") != "retsql-dataset" or payload.get("version") != 1:
        raise MalformedRecord("not a version-1 retsql dataset artifact")
    schemas = {
        tid: TableSchema(table_id=tid, headers=tuple(headers))
        for tid, headers in payload["schemas"].items()
    }
    examples = []
    for rec in payload["examples"]:
        examples.append(
            Example(
                example_id=rec["id"],
                question=rec["question"],
                tokens=tuple(tokenize(rec["question"])),
                table_id=rec["table_id"],
                gold=sql_logic.parse_query(rec["sql"]),
                value_spans=tuple(
                    tuple(s) if s is not None else None for s in rec["spans"]
                ),
            )
        )
    return Dataset(examples=tuple(examples), schemas=schemas)


def save_dataset(dataset: Dataset, path, source: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dataset_to_json(dataset, source=source))


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return dataset_from_json(fh.read())


def merge_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Union of two datasets; examples deduplicated by id, schemas merged."""
    seen = {ex.example_id for ex in a.examples}
    examples = list(a.examples) + [ex for ex in b.examples if ex.example_id not in seen]
    schemas = dict(a.schemas)
    schemas.update(b.schemas)
    return Dataset(examples=tuple(examples), schemas=schemas)
