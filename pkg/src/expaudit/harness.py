"""Evaluation harness: fake logs, precision / recall, first accesses, stability."""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

from .evaluator import Evaluator
from .graph import ExplanationGraph, ExplanationTemplate
from .miner import MiningOutput
from .relstore import Database, Relation


def gen_fake_log(real: Relation, users: Sequence, patients: Sequence, seed: int = 0) -> list[tuple]:
    """Same-size log of uniform (user, patient) draws.

    Lids are fresh (prefixed ``F``) and every other column is copied from the
    real row at the same position, so timestamps line up.
    """
    users = sorted(set(users), key=str)
    patients = sorted(set(patients), key=str)
    if not users or not patients:
        raise ValueError("fake log needs at least one user and one patient")
    rng = random.Random(seed)
    decl = real.decl
    i_lid, i_user, i_pat = decl.index("Lid"), decl.index("User"), decl.index("Patient")
    taken = set(real.column("Lid"))
    width = len(str(len(real)))
    out = []
    for k, row in enumerate(real.rows):
        new = list(row)
        lid = f"F{k:0{width}d}"
        while lid in taken:
            lid = "F" + lid
        new[i_lid] = lid
        new[i_user] = rng.choice(users)
        new[i_pat] = rng.choice(patients)
        out.append(tuple(new))
    return out


def patients_with_events(db: Database, graph: ExplanationGraph | None = None) -> frozenset:
    """Patients appearing in any non-log attribute joined to the start anchor."""
    graph = graph or ExplanationGraph(db.catalog)
    anchor = db.catalog.anchor_start
    out = set()
    for e in graph.edges:
        if e.left == anchor and e.right.table != anchor.table:
            out.update(db.relation(e.right.table).column(e.right.attr))
    return frozenset(out)


def anchor_domain(db: Database, graph: ExplanationGraph, anchor) -> list:
    """Every value of a log anchor, in the log or in any attribute joined to it."""
    values = set(db.log.column(anchor.attr))
    for e in graph.edges:
        if e.left == anchor and e.right.table != anchor.table:
            values.update(db.relation(e.right.table).column(e.right.attr))
    return sorted(values, key=str)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class Scores:
    name: str
    length: int | None
    real_explained: int
    fake_explained: int
    precision: float | None
    recall: float | None
    normalized_recall: float | None


@dataclass
class EvaluationReport:
    real_size: int
    fake_size: int
    real_with_events: int
    templates: list[Scores] = field(default_factory=list)
    aggregate: Scores | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def to_text(self) -> str:
        head = ("template", "len", "real", "fake", "precision", "recall", "norm_recall")
        rows = [head]
        for s in [*self.templates, self.aggregate]:
            if s is None:
                continue
            rows.append(
                (
                    s.name,
                    "-" if s.length is None else str(s.length),
                    str(s.real_explained),
                    str(s.fake_explained),
                    _fmt(s.precision),
                    _fmt(s.recall),
                    _fmt(s.normalized_recall),
                )
            )
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        lines = [
            "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
            for r in rows
        ]
        lines.insert(1, "  ".join("-" * w for w in widths))
        summary = (
            f"real log: {self.real_size}  fake log: {self.fake_size}  "
            f"real with events: {self.real_with_events}"
        )
        return "\n".join([summary, *lines]) + "\n"


def _fmt(x: float | None) -> str:
    return "undefined" if x is None else f"{x:.4f}"


def evaluate(
    templates: Sequence[ExplanationTemplate],
    db: Database,
    fake_rows: Sequence[tuple] = (),
    events: frozenset | Callable[[object], bool] | None = None,
    evaluator_factory: Callable[[Database], Evaluator] | None = None,
) -> EvaluationReport:
    """Score templates on the real log of ``db`` combined with ``fake_rows``.

    An access is explained when at least one template has an instance for it.
    Normalized recall divides by the real accesses we hold information on:
    those whose patient has an event, plus any access a template explained
    (so accesses explained by e.g. repeat-access templates are not counted
    against the denominator).
    """
    real = db.log
    real_lids = set(real.column("Lid"))
    combined = db.replace({db.catalog.log_table: list(real.rows) + list(fake_rows)})
    ev = (evaluator_factory or Evaluator)(combined)
    lids = ev.lids
    is_real = [lid in real_lids for lid in lids]
    if events is None:
        events = patients_with_events(db, ev.graph)
    has_event = events if callable(events) else events.__contains__
    patients = combined.log.column(db.catalog.anchor_start.attr)
    with_events = {i for i, ok in enumerate(is_real) if ok and has_event(patients[i])}
    n_real = len(real_lids)
    n_fake = len(lids) - n_real

    def score(name, length, explained: Iterable[int]) -> Scores:
        explained = set(explained)
        r = sum(1 for i in explained if is_real[i])
        f = len(explained) - r
        informed = with_events | {i for i in explained if is_real[i]}
        return Scores(name, length, r, f, _ratio(r, r + f), _ratio(r, n_real), _ratio(r, len(informed)))

    report = EvaluationReport(n_real, n_fake, len(with_events))
    union: set[int] = set()
    for t in templates:
        ex = ev.explained_any(t)
        union |= ex
        report.templates.append(score(t.id, t.length, ex))
    report.aggregate = score("all", None, union)
    return report


def first_accesses(log: Relation) -> Relation:
    """Only the earliest row per (user, patient), ties broken by Lid, in log order."""
    decl = log.decl
    iu, ip, idate, ilid = (decl.index(a) for a in ("User", "Patient", "Date", "Lid"))
    best: dict[tuple, int] = {}
    for r, row in enumerate(log.rows):
        key = (row[iu], row[ip])
        cur = best.get(key)
        if cur is None or (row[idate], row[ilid]) < (log.rows[cur][idate], log.rows[cur][ilid]):
            best[key] = r
    keep = set(best.values())
    return Relation(decl, tuple(row for r, row in enumerate(log.rows) if r in keep))


def split_log(db: Database, parts: int = 2) -> list[Database]:
    """The database with its log cut into consecutive time windows of equal size."""
    log = db.log
    i_date, i_lid = log.decl.index("Date"), log.decl.index("Lid")
    rows = sorted(log.rows, key=lambda r: (r[i_date], r[i_lid]))
    n = len(rows)
    bounds = [round(k * n / parts) for k in range(parts + 1)]
    return [
        db.replace({db.catalog.log_table: rows[bounds[k] : bounds[k + 1]]}) for k in range(parts)
    ]


@dataclass
class StabilityReport:
    common: list[str]
    added: list[list[str]]
    removed: list[list[str]]
    lengths: list[dict[int, int]]
    common_lengths: dict[int, int]

    def to_text(self, labels: Sequence[str] | None = None) -> str:
        n = len(self.lengths)
        labels = list(labels or [f"period {k + 1}" for k in range(n)])
        all_lengths = sorted({l for d in self.lengths for l in d} | set(self.common_lengths))
        head = ["length", *labels, "common"]
        rows = [head]
        for l in all_lengths:
            rows.append(
                [str(l), *(str(d.get(l, 0)) for d in self.lengths), str(self.common_lengths.get(l, 0))]
            )
        rows.append(
            ["total", *(str(sum(d.values())) for d in self.lengths), str(len(self.common))]
        )
        widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows) + "\n"


def stability(graph: ExplanationGraph, outputs: Sequence[MiningOutput]) -> StabilityReport:
    """Templates common to every mining output, compared by canonical key."""
    if len(outputs) < 2:
        raise ValueError("stability needs at least two template sets")
    keyed = [{graph.canonical_key(t.path, t.filters): t for t in o.templates} for o in outputs]
    common = set(keyed[0]).intersection(*keyed[1:])
    union = set().union(*keyed)
    lengths = []
    for k in keyed:
        counts: dict[int, int] = {}
        for t in k.values():
            counts[t.length] = counts.get(t.length, 0) + 1
        lengths.append(counts)
    common_lengths: dict[int, int] = {}
    for key in common:
        l = keyed[0][key].length
        common_lengths[l] = common_lengths.get(l, 0) + 1
    return StabilityReport(
        common=sorted(common),
        added=[sorted(set(k) - common) for k in keyed],
        removed=[sorted(union - set(k)) for k in keyed],
        lengths=lengths,
        common_lengths=common_lengths,
    )
