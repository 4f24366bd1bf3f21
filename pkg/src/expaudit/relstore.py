"""Immutable in-memory relational store and schema declarations.

A schema file declares the tables, the admissible join edges and the two log
anchors; CSV files (one per table) populate the relations.  Once every table is
loaded the database is sealed and all reads are repeatable.

Schema file format::

    # comment
    table Log(Lid text, Date date, User text, Patient text) key Lid
    table Appointments(Patient text, Date date, Doctor text)
    fk: Log.Patient = Appointments.Patient
    selfjoin: Doctor_Info.Department
    relation: Appointments.Doctor = Users.User
    anchors: Log.Patient -> Log.User
    exempt: Mapping
"""
from __future__ import annotations

import csv
import functools
import io
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

KINDS = ("text", "integer", "date")

_DATE_FORMATS = (
    "%Y-%m-%d",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%m/%d/%Y",
    "%m/%d/%y",
    "%a %b %d %H:%M:%S %Y",
)


class SchemaError(ValueError):
    """Malformed or inconsistent schema declaration."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DataError(ValueError):
    """CSV content that does not conform to its table declaration."""


@functools.total_ordering
class DateValue:
    """A calendar value that compares by time but prints as it was written."""

    __slots__ = ("moment", "text")

    def __init__(self, moment: datetime, text: str):
        self.moment = moment
        self.text = text

    @classmethod
    def parse(cls, text: str) -> "DateValue":
        raw = text.strip()
        for fmt in _DATE_FORMATS:
            try:
                return cls(datetime.strptime(raw, fmt), raw)
            except ValueError:
                continue
        raise ValueError(f"unparseable date {text!r}")

    def __eq__(self, other):
        if isinstance(other, DateValue):
            return self.moment == other.moment
        return NotImplemented

    def __lt__(self, other):
        if isinstance(other, DateValue):
            return self.moment < other.moment
        return NotImplemented

    def __hash__(self):
        return hash(self.moment)

    def __str__(self):
        return self.text

    def __repr__(self):
        return f"DateValue({self.text!r})"


def coerce(kind: str, text: str):
    if kind == "text":
        return text
    if kind == "integer":
        return int(text)
    if kind == "date":
        return DateValue.parse(text)
    raise ValueError(f"unknown value kind {kind!r}")


@dataclass(frozen=True, order=True)
class AttrRef:
    table: str
    attr: str

    @classmethod
    def parse(cls, text: str) -> "AttrRef":
        parts = text.strip().split(".")
        if len(parts) != 2 or not all(parts):
            raise ValueError(f"expected Table.attribute, got {text!r}")
        return cls(parts[0], parts[1])

    def __str__(self):
        return f"{self.table}.{self.attr}"


@dataclass(frozen=True)
class TableDecl:
    name: str
    attributes: tuple[tuple[str, str], ...]
    primary_key: str | None = None

    def __post_init__(self):
        names = [a for a, _ in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute in table {self.name}")
        for _, kind in self.attributes:
            if kind not in KINDS:
                raise SchemaError(f"unknown kind {kind!r} in table {self.name}")
        if self.primary_key is not None and self.primary_key not in names:
            raise SchemaError(f"primary key {self.primary_key} not an attribute of {self.name}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.attributes)

    def index(self, attr: str) -> int:
        try:
            return self.names.index(attr)
        except ValueError:
            raise KeyError(f"{self.name} has no attribute {attr!r}") from None

    def kind(self, attr: str) -> str:
        return self.attributes[self.index(attr)][1]


@dataclass(frozen=True)
class SchemaCatalog:
    tables: tuple[TableDecl, ...]
    fk_edges: tuple[tuple[AttrRef, AttrRef], ...]
    selfjoin_attrs: tuple[AttrRef, ...]
    extra_relations: tuple[tuple[AttrRef, AttrRef], ...]
    anchor_start: AttrRef
    anchor_end: AttrRef
    exempt_tables: frozenset[str] = frozenset()

    def __post_init__(self):
        validate_catalog(self)

    @property
    def log_table(self) -> str:
        return self.anchor_start.table

    def table(self, name: str) -> TableDecl:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(f"unknown table {name!r}")

    def has_attr(self, ref: AttrRef) -> bool:
        try:
            return ref.attr in self.table(ref.table).names
        except KeyError:
            return False


def validate_catalog(cat: SchemaCatalog) -> None:
    names = [t.name for t in cat.tables]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate table name")
    refs: list[AttrRef] = [cat.anchor_start, cat.anchor_end, *cat.selfjoin_attrs]
    for a, b in (*cat.fk_edges, *cat.extra_relations):
        refs += [a, b]
    for ref in refs:
        if not cat.has_attr(ref):
            raise SchemaError(f"unknown attribute {ref}")
    if cat.anchor_start.table != cat.anchor_end.table:
        raise SchemaError("anchors must belong to the same (log) table")
    if cat.anchor_start == cat.anchor_end:
        raise SchemaError("start and end anchors must differ")
    log = cat.table(cat.log_table)
    for required in ("Lid", "Date"):
        if required not in log.names:
            raise SchemaError(f"log table {log.name} lacks {required}")
    for t in cat.exempt_tables:
        if t not in names:
            raise SchemaError(f"exempt table {t} is not declared")
    if cat.log_table in cat.exempt_tables:
        raise SchemaError("the log table cannot be exempt")


_TABLE_RE = re.compile(r"^table\s+(\w+)\s*\((.*)\)\s*(?:key\s+(\w+))?\s*$")


def load_schema(text: str) -> SchemaCatalog:
    tables: list[TableDecl] = []
    fks, selfjoins, relations, exempt = [], [], [], set()
    anchors = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            if line.startswith("table"):
                m = _TABLE_RE.match(line)
                if not m:
                    raise SchemaError("malformed table declaration", lineno)
                attrs = []
                for part in m.group(2).split(","):
                    bits = part.split()
                    if len(bits) != 2:
                        raise SchemaError(f"malformed attribute {part.strip()!r}", lineno)
                    attrs.append((bits[0], bits[1]))
                tables.append(TableDecl(m.group(1), tuple(attrs), m.group(3)))
                continue
            head, sep, body = line.partition(":")
            if not sep:
                raise SchemaError(f"unrecognised line {line!r}", lineno)
            head, body = head.strip(), body.strip()
            if head in ("fk", "relation"):
                left, eq, right = body.partition("=")
                if not eq:
                    raise SchemaError(f"expected A.x = B.y in {head}", lineno)
                pair = (AttrRef.parse(left), AttrRef.parse(right))
                (fks if head == "fk" else relations).append(pair)
            elif head == "selfjoin":
                selfjoins.append(AttrRef.parse(body))
            elif head == "anchors":
                start, arrow, end = body.partition("->")
                if not arrow:
                    raise SchemaError("expected anchors: Log.Patient -> Log.User", lineno)
                anchors = (AttrRef.parse(start), AttrRef.parse(end))
            elif head == "exempt":
                exempt.update(t.strip() for t in body.split(",") if t.strip())
            else:
                raise SchemaError(f"unknown section {head!r}", lineno)
        except SchemaError as exc:
            if exc.line is None:
                raise SchemaError(str(exc), lineno) from None
            raise
        except ValueError as exc:
            raise SchemaError(str(exc), lineno) from None
    if anchors is None:
        raise SchemaError("missing anchors declaration")
    return SchemaCatalog(
        tables=tuple(tables),
        fk_edges=tuple(fks),
        selfjoin_attrs=tuple(selfjoins),
        extra_relations=tuple(relations),
        anchor_start=anchors[0],
        anchor_end=anchors[1],
        exempt_tables=frozenset(exempt),
    )


def dump_schema(cat: SchemaCatalog) -> str:
    lines = []
    for t in cat.tables:
        attrs = ", ".join(f"{a} {k}" for a, k in t.attributes)
        key = f" key {t.primary_key}" if t.primary_key else ""
        lines.append(f"table {t.name}({attrs}){key}")
    lines += [f"fk: {a} = {b}" for a, b in cat.fk_edges]
    lines += [f"selfjoin: {a}" for a in cat.selfjoin_attrs]
    lines += [f"relation: {a} = {b}" for a, b in cat.extra_relations]
    lines.append(f"anchors: {cat.anchor_start} -> {cat.anchor_end}")
    if cat.exempt_tables:
        lines.append("exempt: " + ", ".join(sorted(cat.exempt_tables)))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Relation:
    decl: TableDecl
    rows: tuple[tuple, ...] = ()

    def __len__(self):
        return len(self.rows)

    def column(self, attr: str) -> list:
        i = self.decl.index(attr)
        return [r[i] for r in self.rows]


def distinct_project(rel: Relation, attrs: Sequence[str]) -> Relation:
    """Distinct projection, keeping first-seen order."""
    idx = [rel.decl.index(a) for a in attrs]
    seen: dict[tuple, None] = {}
    for row in rel.rows:
        seen.setdefault(tuple(row[i] for i in idx), None)
    decl = TableDecl(rel.decl.name, tuple(rel.decl.attributes[i] for i in idx))
    return Relation(decl, tuple(seen))


def format_value(value) -> str:
    return str(value)


def relation_to_csv(rel: Relation) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(rel.decl.names)
    for row in rel.rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


@dataclass
class Database:
    catalog: SchemaCatalog
    _rows: dict[str, list[tuple]] = field(default_factory=dict)
    _relations: dict[str, Relation] | None = None

    @property
    def sealed(self) -> bool:
        return self._relations is not None

    def ingest_csv(self, table: str, csv_text: str) -> int:
        if self.sealed:
            raise DataError("database is sealed")
        decl = self.catalog.table(table)
        reader = csv.reader(io.StringIO(csv_text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(decl.names):
            raise DataError(f"{table}: header {header} does not match {list(decl.names)}")
        rows = []
        for lineno, record in enumerate(reader, 2):
            if not record:
                continue
            if len(record) != len(decl.attributes):
                raise DataError(
                    f"{table} line {lineno}: expected {len(decl.attributes)} fields, got {len(record)}"
                )
            values = []
            for (name, kind), text in zip(decl.attributes, record):
                try:
                    values.append(coerce(kind, text))
                except ValueError as exc:
                    raise DataError(f"{table} line {lineno} column {name}: {exc}") from None
            rows.append(tuple(values))
        self.add_rows(table, rows)
        return len(rows)

    def add_rows(self, table: str, rows: Iterable[tuple]) -> None:
        if self.sealed:
            raise DataError("database is sealed")
        decl = self.catalog.table(table)
        bucket = self._rows.setdefault(table, [])
        for row in rows:
            if len(row) != len(decl.attributes):
                raise DataError(f"{table}: row {row!r} has wrong arity")
            bucket.append(tuple(row))

    def seal(self) -> "Database":
        if self.sealed:
            return self
        relations = {}
        for decl in self.catalog.tables:
            rows = tuple(self._rows.get(decl.name, ()))
            keys = [decl.primary_key]
            if decl.name == self.catalog.log_table:
                keys.append("Lid")
            for key in {k for k in keys if k}:
                col = [r[decl.index(key)] for r in rows]
                if len(set(col)) != len(col):
                    raise DataError(f"{decl.name}: duplicate values in key {key}")
            relations[decl.name] = Relation(decl, rows)
        self._relations = relations
        self._rows = {}
        return self

    def relation(self, name: str) -> Relation:
        if not self.sealed:
            raise DataError("database must be sealed before reading")
        return self._relations[name]

    @property
    def log(self) -> Relation:
        return self.relation(self.catalog.log_table)

    def replace(
        self, tables: dict[str, Sequence[tuple]], catalog: SchemaCatalog | None = None
    ) -> "Database":
        """A new sealed database with some relations swapped out or added."""
        fresh = Database(catalog or self.catalog)
        for decl in fresh.catalog.tables:
            if decl.name in tables:
                rows = tables[decl.name]
            else:
                rows = self.relation(decl.name).rows
            fresh.add_rows(decl.name, rows)
        return fresh.seal()

    @classmethod
    def from_directory(cls, catalog: SchemaCatalog, directory: str | Path) -> "Database":
        directory = Path(directory)
        db = cls(catalog)
        for decl in catalog.tables:
            path = directory / f"{decl.name}.csv"
            if not path.exists():
                raise DataError(f"missing CSV for table {decl.name}: {path}")
            try:
                db.ingest_csv(decl.name, path.read_text())
            except DataError as exc:
                raise DataError(f"{path}: {exc}") from None
        return db.seal()

    def to_directory(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for decl in self.catalog.tables:
            (directory / f"{decl.name}.csv").write_text(relation_to_csv(self.relation(decl.name)))
