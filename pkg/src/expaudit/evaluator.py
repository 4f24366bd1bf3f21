"""Support counting and explanation-instance enumeration over a sealed database.

Undecorated paths are evaluated left to right as a chain of semi-joins that only
carries, for each join value at the current edge, the set of audited log rows
that reach it.  Decorated templates and instance listings use a full
row-binding enumeration instead.
"""
from __future__ import annotations

import operator
import threading
from dataclasses import dataclass
from typing import Iterable, Sequence

from .graph import ExplanationGraph, ExplanationTemplate, Filter, Path, render_description, split_node
from .relstore import Database, distinct_project

EXACT_ESTIMATE_ROWS = 1000

_OPS = {
    "<": operator.lt,
    "<=": operator.le,
    "=": operator.eq,
    ">=": operator.ge,
    ">": operator.gt,
}


@dataclass(frozen=True)
class SupportResult:
    count: int
    fraction: float
    from_cache: bool = False


@dataclass(frozen=True)
class ExplanationInstance:
    lid: str
    template_id: str
    values: tuple[tuple[str, str], ...]
    description: str
    length: int

    def sort_key(self):
        return (self.length, self.template_id, self.values)


class Evaluator:
    """Evaluates paths against one sealed database.

    ``dedup`` turns on the distinct-projection of every joined table; with it off
    the chain is evaluated over raw rows with bag semantics.  ``use_cache``
    memoises support by canonical key.
    """

    def __init__(
        self,
        db: Database,
        graph: ExplanationGraph | None = None,
        dedup: bool = True,
        use_cache: bool = True,
    ):
        if not db.sealed:
            raise ValueError("database must be sealed")
        self.db = db
        self.graph = graph or ExplanationGraph(db.catalog)
        self.dedup = dedup
        self.use_cache = use_cache
        log = db.log
        self.n_log = len(log)
        self.lids = log.column("Lid")
        self._cache: dict[str, int] = {}
        self._lock = threading.Lock()
        self._memo: dict[tuple, object] = {}
        self._memo_lock = threading.Lock()

    # -- shared lookups -------------------------------------------------------

    def _memoise(self, key, build):
        got = self._memo.get(key)
        if got is None:
            got = build()
            with self._memo_lock:
                self._memo.setdefault(key, got)
        return got

    def _log_groups(self, attr: str) -> dict[object, frozenset[int]]:
        """Log row indices keyed by the value of ``attr``."""

        def build():
            out: dict[object, set[int]] = {}
            for i, v in enumerate(self.db.log.column(attr)):
                out.setdefault(v, set()).add(i)
            return {k: frozenset(s) for k, s in out.items()}

        return self._memoise(("log", attr), build)

    def _log_values(self, attr: str) -> list:
        return self._memoise(("logcol", attr), lambda: self.db.log.column(attr))

    def domain(self, table: str, attr: str) -> frozenset:
        return self._memoise(
            ("dom", table, attr), lambda: frozenset(self.db.relation(table).column(attr))
        )

    def _adjacency(self, table: str, entry: str, exit_: str) -> dict[object, tuple]:
        """entry value -> exit values reachable through one row of ``table``."""

        def build():
            rel = self.db.relation(table)
            if self.dedup:
                rel = distinct_project(rel, [entry, exit_] if entry != exit_ else [entry])
            i, j = rel.decl.index(entry), rel.decl.index(exit_)
            out: dict[object, list] = {}
            for row in rel.rows:
                out.setdefault(row[i], []).append(row[j])
            return {k: tuple(v) for k, v in out.items()}

        return self._memoise(("adj", table, entry, exit_, self.dedup), build)

    def _log_adjacency(self, entry: str, exit_: str) -> dict[object, dict[object, tuple[int, ...]]]:
        """For a second log instance: entry value -> exit value -> row indices."""

        def build():
            log = self.db.log
            i, j = log.decl.index(entry), log.decl.index(exit_)
            out: dict[object, dict[object, list[int]]] = {}
            for r, row in enumerate(log.rows):
                out.setdefault(row[i], {}).setdefault(row[j], []).append(r)
            return {x: {y: tuple(rs) for y, rs in d.items()} for x, d in out.items()}

        return self._memoise(("logadj", entry, exit_), build)

    def _row_index(self, table: str, attr: str) -> dict[object, list[int]]:
        def build():
            out: dict[object, list[int]] = {}
            for r, v in enumerate(self.db.relation(table).column(attr)):
                out.setdefault(v, []).append(r)
            return out

        return self._memoise(("rows", table, attr), build)

    # -- support --------------------------------------------------------------

    def explained(self, p: Path) -> frozenset[int]:
        """Indices of log rows for which some assignment satisfies ``p``."""
        if self.dedup:
            return frozenset(self._semijoin(p))
        return frozenset(self._bag(p))

    def _hops(self, p: Path):
        """(edge, dst instance, exit attr of dst or None) per step."""
        exits = [e.left.attr for e in p.edges[1:]] + [None]
        return list(zip(p.edges, p.instances, exits))

    def _semijoin(self, p: Path) -> set[int]:
        start, close = self.graph.anchors(p.direction)
        state: dict[object, frozenset[int] | set[int]] = dict(self._log_groups(start))
        if not p.edges:
            return set(range(self.n_log))
        log = self.graph.log
        for e, dst, exit_ in self._hops(p):
            if dst == log:
                targets = self._log_groups(close)
                out: set[int] = set()
                for v, lids in state.items():
                    hit = targets.get(v)
                    if hit:
                        out |= lids & hit
                return out
            dom = self.domain(dst.table, e.right.attr)
            state = {v: s for v, s in state.items() if v in dom}
            if exit_ is None:
                return _union(state.values())
            if dst.table == log.table:
                state = self._through_log(state, e.right.attr, exit_)
            elif exit_ != e.right.attr:
                adj = self._adjacency(dst.table, e.right.attr, exit_)
                gathered: dict[object, list] = {}
                for x, lids in state.items():
                    for y in adj[x]:
                        gathered.setdefault(y, []).append(lids)
                state = {y: _union(parts) for y, parts in gathered.items()}
            if not state:
                return set()
        raise AssertionError("unreachable")

    def _through_log(self, state, entry: str, exit_: str):
        # the second log instance must be a different access than Log#0
        adj = self._log_adjacency(entry, exit_)
        gathered: dict[object, list] = {}
        for x, lids in state.items():
            for y, rows in adj[x].items():
                if len(rows) > 1:
                    gathered.setdefault(y, []).append(lids)
                elif rows[0] in lids:
                    gathered.setdefault(y, []).append(lids - {rows[0]})
                else:
                    gathered.setdefault(y, []).append(lids)
        return {y: u for y, parts in gathered.items() if (u := _union(parts))}

    def _bag(self, p: Path) -> set[int]:
        """Same semantics over raw rows, carrying (lid, value) pairs with duplicates."""
        start, close = self.graph.anchors(p.direction)
        starts = self._log_values(start)
        closes = self._log_values(close)
        pairs = [(i, v) for i, v in enumerate(starts)]
        if not p.edges:
            return set(range(self.n_log))
        log = self.graph.log
        for e, dst, exit_ in self._hops(p):
            if dst == log:
                return {i for i, v in pairs if closes[i] == v}
            rows = self._row_index(dst.table, e.right.attr)
            rel = self.db.relation(dst.table)
            nxt = []
            for i, v in pairs:
                for r in rows.get(v, ()):
                    if dst.table == log.table and r == i:
                        continue
                    nxt.append((i, rel.rows[r][rel.decl.index(exit_)] if exit_ else v))
            pairs = nxt
            if exit_ is None:
                return {i for i, _ in pairs}
        raise AssertionError("unreachable")

    def support(self, p: Path | ExplanationTemplate) -> SupportResult:
        count = len(self.explained_any(p))
        key = self._key(p)
        if self.use_cache:
            with self._lock:
                self._cache[key] = count
        return SupportResult(count, self._fraction(count), False)

    def support_cached(self, p: Path | ExplanationTemplate) -> SupportResult:
        if self.use_cache:
            hit = self._cache.get(self._key(p))
            if hit is not None:
                return SupportResult(hit, self._fraction(hit), True)
        return self.support(p)

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()

    def _fraction(self, count: int) -> float:
        return count / self.n_log if self.n_log else 0.0

    def _key(self, p: Path | ExplanationTemplate) -> str:
        if isinstance(p, ExplanationTemplate):
            return self.graph.canonical_key(p.path, p.filters)
        return self.graph.canonical_key(p)

    def explained_any(self, p: Path | ExplanationTemplate) -> frozenset[int]:
        if isinstance(p, ExplanationTemplate):
            if p.filters:
                return frozenset(i for i, _ in self.assignments(p.path, p.filters))
            p = p.path
        return self.explained(p)

    # -- estimation -----------------------------------------------------------

    def estimate_support(self, p: Path) -> float:
        """Distinct-count containment estimate of the number of explained log rows.

        Falls back to the exact count when every joined relation is small.
        """
        tables = {i.table for i in p.all_instances()}
        sizes = {t: len(self.db.relation(t)) for t in tables}
        if any(n == 0 for n in sizes.values()):
            return 0.0
        if all(n < EXACT_ESTIMATE_ROWS for n in sizes.values()):
            return float(len(self.explained(p)))
        start, close = self.graph.anchors(p.direction)
        log_table = self.graph.log.table
        survive = 1.0
        reach = 1.0  # distinct join values reachable per surviving log row
        prev = (log_table, start)
        for e, dst, exit_ in self._hops(p):
            left_ndv = len(self.domain(*prev))
            if dst == self.graph.log:
                survive *= min(1.0, reach / max(1, len(self.domain(log_table, close))))
                break
            right_ndv = len(self.domain(dst.table, e.right.attr))
            survive *= min(1.0, right_ndv / max(1, left_ndv))
            if exit_ is None:
                break
            if exit_ != e.right.attr:
                pairs = len(distinct_project(self.db.relation(dst.table), [e.right.attr, exit_]))
                exit_ndv = len(self.domain(dst.table, exit_))
                reach = min(float(exit_ndv), reach * pairs / max(1, right_ndv))
            prev = (dst.table, exit_)
        return max(0.0, min(float(self.n_log), self.n_log * survive))

    # -- full bindings ----------------------------------------------------------

    def assignments(
        self,
        p: Path,
        filters: Sequence[Filter] = (),
        lid_indices: Iterable[int] | None = None,
    ):
        """Yield (log row index, {instance label: row}) for every satisfying assignment."""
        start, close = self.graph.anchors(p.direction)
        log = self.graph.log
        log_rel = self.db.log
        rels = {t: self.db.relation(t) for t in {i.table for i in p.all_instances()}}
        hops = self._hops(p)
        compiled = []
        for f in filters:
            la, lx = split_node(f.left)
            ra, rx = split_node(f.right)
            compiled.append((la, lx, _OPS[f.op], ra, rx))
        indices = range(self.n_log) if lid_indices is None else lid_indices
        for i in indices:
            binding = {str(log): (i, log_rel.rows[i])}

            def walk(k: int, value):
                if k == len(hops):
                    yield dict(binding)
                    return
                e, dst, exit_ = hops[k]
                if dst == log:
                    if log_rel.rows[i][log_rel.decl.index(close)] == value:
                        yield from walk(k + 1, None)
                    return
                rel = rels[dst.table]
                for r in self._row_index(dst.table, e.right.attr).get(value, ()):
                    if dst.table == log.table and r == i:
                        continue
                    row = rel.rows[r]
                    binding[str(dst)] = (r, row)
                    nxt = row[rel.decl.index(exit_)] if exit_ else None
                    yield from walk(k + 1, nxt)
                binding.pop(str(dst), None)

            first = log_rel.rows[i][log_rel.decl.index(start)]
            for b in walk(0, first):
                if all(
                    op(
                        self._value(rels, b, la, lx),
                        self._value(rels, b, ra, rx),
                    )
                    for la, lx, op, ra, rx in compiled
                ):
                    yield i, b

    @staticmethod
    def _value(rels, binding, alias: str, attr: str):
        _, row = binding[alias]
        rel = rels[alias.partition("#")[0]]
        return row[rel.decl.index(attr)]

    def instances(
        self, templates: ExplanationTemplate | Sequence[ExplanationTemplate], lid: str | None = None
    ) -> list[ExplanationInstance]:
        """Rendered explanation instances, shortest path first."""
        if isinstance(templates, ExplanationTemplate):
            templates = [templates]
        indices = None
        if lid is not None:
            try:
                indices = [self.lids.index(lid)]
            except ValueError:
                raise KeyError(f"unknown log id {lid!r}") from None
        out = []
        for t in templates:
            rels = {i.table: self.db.relation(i.table) for i in t.path.all_instances()}
            for i, b in self.assignments(t.path, t.filters, indices):
                values = {}
                for alias, (_, row) in b.items():
                    decl = rels[alias.partition("#")[0]].decl
                    for name, v in zip(decl.names, row):
                        values[f"{alias}.{name}"] = v
                out.append(
                    ExplanationInstance(
                        lid=self.lids[i],
                        template_id=t.id,
                        values=tuple(sorted((k, str(v)) for k, v in values.items())),
                        description=render_description(t, values),
                        length=t.length,
                    )
                )
        out.sort(key=ExplanationInstance.sort_key)
        return out


def _union(parts) -> frozenset[int] | set[int]:
    parts = list({id(s): s for s in parts}.values())
    if not parts:
        return frozenset()
    if len(parts) == 1:
        return parts[0]
    return set().union(*parts)
