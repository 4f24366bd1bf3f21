"""Explanation graph: admissible join edges, paths over tuple-variable instances,
canonical keys and explanation templates.

A path is grown one join edge at a time from an anchor of the audited log
instance ``Log#0``.  Each edge leaves the instance at the path's right end (the
*frontier*) and either enters a freshly allocated instance of its right-hand
table or, when it lands on the closing anchor of the log table, returns to
``Log#0``.  Forward paths start at the accessed-data anchor and close at the
user anchor; backward paths do the mirror image.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .relstore import AttrRef, SchemaCatalog

FORWARD = "forward"
BACKWARD = "backward"

_KIND_RANK = {"fk": 0, "selfjoin": 1, "declared": 2}
MAX_INSTANCES_PER_TABLE = 2


@dataclass(frozen=True, order=True)
class JoinEdge:
    left: AttrRef
    right: AttrRef
    kind: str = "fk"

    def reversed(self) -> "JoinEdge":
        return JoinEdge(self.right, self.left, self.kind)

    @property
    def identity(self) -> tuple[AttrRef, AttrRef]:
        """Shared by an edge and its mirror."""
        return (min(self.left, self.right), max(self.left, self.right))

    def __str__(self):
        return f"{self.left} = {self.right}"


def build_graph(catalog: SchemaCatalog) -> tuple[JoinEdge, ...]:
    """Every admissible join edge, in both traversal orientations, sorted."""
    found: dict[tuple[AttrRef, AttrRef], str] = {}

    def add(a: AttrRef, b: AttrRef, kind: str):
        if a == b:
            kind = "selfjoin"
        for pair in ((a, b), (b, a)):
            old = found.get(pair)
            if old is None or _KIND_RANK[kind] < _KIND_RANK[old]:
                found[pair] = kind

    for a, b in catalog.fk_edges:
        add(a, b, "fk")
    for a, b in catalog.extra_relations:
        add(a, b, "declared")
    for a in catalog.selfjoin_attrs:
        add(a, a, "selfjoin")
    return tuple(sorted(JoinEdge(l, r, k) for (l, r), k in found.items()))


@dataclass(frozen=True, order=True)
class Instance:
    table: str
    index: int

    def __str__(self):
        return f"{self.table}#{self.index}"

    @classmethod
    def parse(cls, text: str) -> "Instance":
        table, sep, idx = text.partition("#")
        if not sep or not idx.isdigit():
            raise ValueError(f"expected Table#k instance label, got {text!r}")
        return cls(table, int(idx))


def node_label(inst: Instance | str, attr: str) -> str:
    return f"{inst}.{attr}"


def split_node(label: str) -> tuple[str, str]:
    alias, sep, attr = label.strip().rpartition(".")
    if not sep or not alias or not attr:
        raise ValueError(f"expected Instance.attribute, got {label!r}")
    return alias, attr


@dataclass(frozen=True)
class Path:
    """An ordered edge sequence with the instance each edge enters.

    ``instances[i]`` is the instance entered by ``edges[i]``; the instance an
    edge leaves is ``Log#0`` for the first edge and ``instances[i-1]`` after.
    """

    direction: str
    edges: tuple[JoinEdge, ...]
    instances: tuple[Instance, ...] = field(compare=False)
    log: Instance = field(compare=False)

    @property
    def length(self) -> int:
        return len(self.edges)

    @property
    def frontier(self) -> Instance:
        return self.instances[-1] if self.instances else self.log

    @property
    def closed(self) -> bool:
        return bool(self.instances) and self.instances[-1] == self.log

    def sources(self) -> list[Instance]:
        return [self.log, *self.instances[:-1]]

    def conditions(self) -> list[tuple[str, str]]:
        """Selection conditions as (left, right) node labels, in path order."""
        return [
            (node_label(src, e.left.attr), node_label(dst, e.right.attr))
            for e, src, dst in zip(self.edges, self.sources(), self.instances)
        ]

    def all_instances(self) -> list[Instance]:
        out = [self.log]
        for inst in self.instances:
            if inst not in out:
                out.append(inst)
        return out

    def table_names(self) -> list[str]:
        return sorted({i.table for i in self.all_instances()})

    def __str__(self):
        return " AND ".join(f"{l} = {r}" for l, r in self.conditions()) or f"<{self.log}>"


class ExplanationGraph:
    """Edge universe plus the path rules for one catalog."""

    def __init__(self, catalog: SchemaCatalog):
        self.catalog = catalog
        self.edges = build_graph(catalog)
        self.log = Instance(catalog.log_table, 0)
        self._by_table: dict[str, list[JoinEdge]] = {}
        for e in self.edges:
            self._by_table.setdefault(e.left.table, []).append(e)
        self._kinds = {(e.left, e.right): e.kind for e in self.edges}

    def anchors(self, direction: str) -> tuple[str, str]:
        """(start attribute, closing attribute) of the log table."""
        a, b = self.catalog.anchor_start.attr, self.catalog.anchor_end.attr
        if direction == FORWARD:
            return a, b
        if direction == BACKWARD:
            return b, a
        raise ValueError(f"unknown direction {direction!r}")

    def edges_from(self, table: str) -> list[JoinEdge]:
        return self._by_table.get(table, [])

    def edge(self, left: AttrRef, right: AttrRef) -> JoinEdge | None:
        kind = self._kinds.get((left, right))
        return JoinEdge(left, right, kind) if kind else None

    def root(self, direction: str = FORWARD) -> Path:
        self.anchors(direction)
        return Path(direction, (), (), self.log)

    def extend_path(self, p: Path, e: JoinEdge) -> Path | None:
        if p.closed:
            return None
        frontier = p.frontier
        if e.left.table != frontier.table:
            return None
        start, close = self.anchors(p.direction)
        log_table = self.log.table
        if not p.edges:
            if e.left.attr != start:
                return None
        elif frontier.table == log_table:
            # a non-audited log instance sits between two log self-joins
            if e.kind != "selfjoin" or e.left.attr == start:
                return None
        if e.right.table == log_table and e.right.attr == close:
            dst = self.log
        else:
            if e.right.table == log_table and e.kind != "selfjoin":
                return None
            used = [i.index for i in p.all_instances() if i.table == e.right.table]
            if len(used) >= MAX_INSTANCES_PER_TABLE:
                return None
            dst = Instance(e.right.table, max(used) + 1 if used else 1)
        return Path(p.direction, p.edges + (e,), p.instances + (dst,), self.log)

    def replay(self, edges: Iterable[JoinEdge], direction: str = FORWARD) -> Path | None:
        p = self.root(direction)
        for e in edges:
            p = self.extend_path(p, e)
            if p is None:
                return None
        return p

    def reverse(self, p: Path) -> Path | None:
        """The same closed path walked from the other anchor."""
        other = BACKWARD if p.direction == FORWARD else FORWARD
        return self.replay((e.reversed() for e in reversed(p.edges)), other)

    def to_forward(self, p: Path) -> Path:
        if p.direction == FORWARD:
            return p
        q = self.reverse(p)
        if q is None:
            raise ValueError(f"path {p} has no forward reading")
        return q

    def table_count(self, p: Path) -> int:
        return len({i.table for i in p.all_instances()} - self.catalog.exempt_tables)

    def is_restricted_simple(self, p: Path, max_tables: int) -> bool:
        return self.validate(p) and self.table_count(p) <= max_tables

    def is_explanation(self, p: Path) -> bool:
        return p.closed and self.validate(p)

    def validate(self, p: Path) -> bool:
        """Re-derive every path invariant from the condition list alone."""
        if not p.edges:
            return True
        start, close = self.anchors(p.direction)
        log, log_table = str(self.log), self.log.table
        conds = [(split_node(l), split_node(r)) for l, r in p.conditions()]
        if conds[0][0] != (log, start):
            return False
        entry, exit_ = {log: start}, {}
        nodes = {(log, start)}
        kinds: dict[str, list[str]] = {}
        last = len(conds) - 1
        for i, ((la, lx), (ra, rx)) in enumerate(conds):
            prev = log if i == 0 else conds[i - 1][1][0]
            if la != prev or la in exit_:
                return False
            exit_[la] = lx
            if lx != entry[la]:
                if (la, lx) in nodes:
                    return False
                nodes.add((la, lx))
            e = self.edge(AttrRef(_table_of(la), lx), AttrRef(_table_of(ra), rx))
            if e is None:
                return False
            kinds.setdefault(la, []).append(e.kind)
            kinds.setdefault(ra, []).append(e.kind)
            if ra == log:
                if i != last or rx != close or (ra, rx) in nodes:
                    return False
            else:
                if ra in entry or (_table_of(ra) == log_table and rx == close):
                    return False
                entry[ra] = rx
            nodes.add((ra, rx))
        per_table: dict[str, int] = {}
        for alias in entry:
            t = _table_of(alias)
            per_table[t] = per_table.get(t, 0) + 1
        if any(n > MAX_INSTANCES_PER_TABLE for n in per_table.values()):
            return False
        for alias in entry:
            if alias == log or _table_of(alias) != log_table:
                continue
            if any(k != "selfjoin" for k in kinds[alias]):
                return False
            if exit_.get(alias) == start:
                return False
        return True

    def canonical_key(self, p: Path, filters: Sequence["Filter"] = ()) -> str:
        return canonical_key(
            p.conditions(),
            [(f.left, f.op, f.right) for f in filters],
            str(self.log),
            self.anchors(FORWARD),
        )

    def path_from_conditions(
        self, conditions: Sequence[tuple[str, str]]
    ) -> tuple[Path, dict[str, str]]:
        """Rebuild a forward path from unordered conditions.

        Returns the path and a map from the labels used in ``conditions`` to the
        path's own instance labels.
        """
        start, close = self.anchors(FORWARD)
        chain = _order_chain(conditions, str(self.log), (start, close))
        if chain is None:
            raise ValueError("conditions do not form a path from the start anchor")
        label_map = {str(self.log): str(self.log)}
        p = self.root(FORWARD)
        for (la, lx), (ra, rx) in chain:
            lt = _table_of(la)
            rt = _table_of(ra)
            e = self.edge(AttrRef(lt, lx), AttrRef(rt, rx))
            if e is None:
                raise ValueError(f"{la}.{lx} = {ra}.{rx} is not an admissible join edge")
            if label_map.get(la) != str(p.frontier):
                raise ValueError(f"condition on {la} is not connected to the path")
            q = self.extend_path(p, e)
            if q is None:
                raise ValueError(f"{la}.{lx} = {ra}.{rx} breaks the simple-path rules")
            p = q
            if ra in label_map and label_map[ra] != str(p.frontier):
                raise ValueError(f"instance {ra} is entered twice")
            label_map[ra] = str(p.frontier)
        return p, label_map


def _table_of(alias: str) -> str:
    return alias.partition("#")[0]


def _order_chain(
    conditions: Sequence[tuple[str, str]], log: str, anchors: tuple[str, str]
) -> list[tuple[tuple[str, str], tuple[str, str]]] | None:
    """Orient and order conditions as a walk from the log's start anchor."""
    start, _ = anchors
    pending = [(split_node(l), split_node(r)) for l, r in conditions]
    walk = []
    cur = (log, start)
    first = True
    while pending:
        nxt = None
        for i, (a, b) in enumerate(pending):
            for x, y in ((a, b), (b, a)):
                if (first and x == cur) or (not first and x[0] == cur[0]):
                    nxt = (i, x, y)
                    break
            if nxt:
                break
        if nxt is None:
            return None
        i, x, y = nxt
        pending.pop(i)
        walk.append((x, y))
        cur = y
        first = False
    return walk


def canonical_key(
    conditions: Sequence[tuple[str, str]],
    filters: Sequence[tuple[str, str, str]],
    log: str,
    anchors: tuple[str, str],
) -> str:
    """Normal form of a condition set under symmetry and alias renaming.

    Aliases are renumbered in order of first appearance along the walk from the
    log instance's start anchor (or its end anchor for backward fragments).
    """
    conds = [(split_node(l), split_node(r)) for l, r in conditions]
    order: list[str] = [log]
    walk_from = None
    for anchor in anchors:
        if any((log, anchor) in c for c in conds):
            walk_from = (log, anchor)
            break
    remaining = list(conds)
    if walk_from is not None:
        cur, first = walk_from, True
        while True:
            hit = None
            for i, (a, b) in enumerate(remaining):
                for x, y in ((a, b), (b, a)):
                    if (first and x == cur) or (not first and x[0] == cur[0]):
                        hit = (i, y)
                        break
                if hit:
                    break
            if hit is None:
                break
            i, y = hit
            remaining.pop(i)
            if y[0] not in order:
                order.append(y[0])
            cur, first = y, False
    for a, b in sorted(remaining, key=lambda c: sorted(map(str, c))):
        for alias in (a[0], b[0]):
            if alias not in order:
                order.append(alias)
    rename: dict[str, str] = {}
    counters: dict[str, int] = {}
    for alias in order:
        table = _table_of(alias)
        if alias == log:
            rename[alias] = alias
            counters[table] = 0
            continue
        n = counters.get(table, 0) + 1
        counters[table] = n
        rename[alias] = f"{table}#{n}"

    def lab(node: tuple[str, str]) -> str:
        return f"{rename.get(node[0], node[0])}.{node[1]}"

    parts = sorted(" = ".join(sorted((lab(a), lab(b)))) for a, b in conds)
    key = " AND ".join(parts)
    if filters:
        flip = {"<": ">", ">": "<", "<=": ">=", ">=": "<=", "=": "="}
        fparts = []
        for l, op, r in filters:
            ll, rr = lab(split_node(l)), lab(split_node(r))
            if ll > rr:
                ll, rr, op = rr, ll, flip[op]
            fparts.append(f"{ll} {op} {rr}")
        key += " | " + " AND ".join(sorted(fparts))
    return key


# ---------------------------------------------------------------------------
# templates

OPS = ("<", "<=", "=", ">=", ">")
_PLACEHOLDER = re.compile(r"\[([^\[\]]+)\]")


@dataclass(frozen=True)
class Filter:
    left: str
    op: str
    right: str

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown comparison {self.op!r}")


@dataclass(frozen=True)
class ExplanationTemplate:
    path: Path
    filters: tuple[Filter, ...] = ()
    description: str | None = None
    support: int | None = None
    support_fraction: float | None = None
    id: str = ""

    @property
    def length(self) -> int:
        return self.path.length

    @property
    def simple(self) -> bool:
        return not self.filters


def template_id(key: str) -> str:
    return "T" + hashlib.sha1(key.encode()).hexdigest()[:10]


def auto_description(p: Path) -> str:
    parts = []
    for e, src, dst in zip(p.edges, p.sources(), p.instances):
        parts.append(
            f"{src} joins {dst} via {e.left.attr} = {e.right.attr} ([{src}.{e.left.attr}])"
        )
    return "; ".join(parts)


def make_template(
    graph: ExplanationGraph,
    path: Path,
    filters: Sequence[Filter] = (),
    description: str | None = None,
    support: int | None = None,
    support_fraction: float | None = None,
    id: str | None = None,
) -> ExplanationTemplate:
    path = graph.to_forward(path)
    if not graph.is_explanation(path):
        raise ValueError(f"{path} is not an explanation path")
    t = ExplanationTemplate(
        path=path,
        filters=tuple(filters),
        description=description if description is not None else auto_description(path),
        support=support,
        support_fraction=support_fraction,
        id=id or template_id(graph.canonical_key(path, filters)),
    )
    validate_template(graph, t)
    return t


def _check_node(graph: ExplanationGraph, path: Path, label: str) -> None:
    alias, attr = split_node(label)
    insts = {str(i): i for i in path.all_instances()}
    if alias not in insts:
        raise ValueError(f"{label} names an instance outside the path")
    if attr not in graph.catalog.table(insts[alias].table).names:
        raise ValueError(f"{label} names an unknown attribute")


def validate_template(graph: ExplanationGraph, t: ExplanationTemplate) -> None:
    for f in t.filters:
        _check_node(graph, t.path, f.left)
        _check_node(graph, t.path, f.right)
    for label in _PLACEHOLDER.findall(t.description or ""):
        _check_node(graph, t.path, label)


def render_description(t: ExplanationTemplate, binding: dict[str, object]) -> str:
    """Substitute ``[Instance.attribute]`` placeholders with bound values."""

    def sub(m):
        label = m.group(1)
        if label not in binding:
            raise KeyError(f"no value bound for placeholder [{label}]")
        return str(binding[label])

    return _PLACEHOLDER.sub(sub, t.description or "")


def template_to_dict(graph: ExplanationGraph, t: ExplanationTemplate) -> dict:
    return {
        "id": t.id,
        "conditions": [{"left": l, "right": r} for l, r in t.path.conditions()],
        "filters": [{"left": f.left, "op": f.op, "right": f.right} for f in t.filters],
        "length": t.length,
        "tables": t.path.table_names(),
        "support": t.support,
        "support_fraction": t.support_fraction,
        "description": t.description,
    }


def dumps_template(graph: ExplanationGraph, t: ExplanationTemplate) -> str:
    return json.dumps(template_to_dict(graph, t), sort_keys=True)


def template_from_dict(graph: ExplanationGraph, obj: dict) -> ExplanationTemplate:
    conds = [(c["left"], c["right"]) for c in obj["conditions"]]
    path, label_map = graph.path_from_conditions(conds)

    def relabel(label: str) -> str:
        alias, attr = split_node(label)
        if alias not in label_map:
            raise ValueError(f"{label} names an instance outside the path")
        return f"{label_map[alias]}.{attr}"

    filters = tuple(
        Filter(relabel(f["left"]), f["op"], relabel(f["right"])) for f in obj.get("filters", [])
    )
    description = obj.get("description")
    if description is not None:
        description = _PLACEHOLDER.sub(lambda m: f"[{relabel(m.group(1))}]", description)
    if "length" in obj and obj["length"] != path.length:
        raise ValueError(f"declared length {obj['length']} but path has {path.length} joins")
    return make_template(
        graph,
        path,
        filters,
        description,
        obj.get("support"),
        obj.get("support_fraction"),
        obj.get("id"),
    )


def loads_templates(graph: ExplanationGraph, text: str) -> list[ExplanationTemplate]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(template_from_dict(graph, json.loads(line)))
        except (ValueError, KeyError) as exc:
            raise ValueError(f"template line {lineno}: {exc}") from None
    return out
