"""Collaborative user groups inferred from co-access.

The patient x user access matrix ``A`` holds ``1/k`` where ``k`` users touched
the patient; ``W = AᵀA`` is the user-similarity graph.  Users are clustered by
greedy agglomerative modularity maximisation (CNM) and the clustering is applied
recursively to build a hierarchy, materialised as
``Groups(Group_Depth, Group_id, User)`` rows.
"""
from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

MERGE_TOLERANCE = 1e-12
DEFAULT_MAX_DEPTH = 8
GROUPS_HEADER = ("Group_Depth", "Group_id", "User")


@dataclass(frozen=True)
class AccessMatrix:
    patients: tuple
    users: tuple
    entries: dict[tuple[int, int], Fraction]

    @property
    def m(self) -> int:
        return len(self.patients)

    @property
    def n(self) -> int:
        return len(self.users)

    def __getitem__(self, key: tuple) -> Fraction:
        """``A[patient, user]`` by identifier."""
        patient, user = key
        try:
            i = self.patients.index(patient)
            j = self.users.index(user)
        except ValueError:
            raise KeyError(key) from None
        return self.entries.get((i, j), Fraction(0))

    def rows(self) -> dict[int, list[tuple[int, Fraction]]]:
        out: dict[int, list[tuple[int, Fraction]]] = {}
        for (i, j), v in sorted(self.entries.items()):
            out.setdefault(i, []).append((j, v))
        return out


def build_access_matrix(pairs: Iterable[tuple[object, object]]) -> AccessMatrix:
    """From (user, patient) access pairs; repeats do not change the matrix."""
    seen: dict[object, set] = {}
    users: set = set()
    for user, patient in pairs:
        seen.setdefault(patient, set()).add(user)
        users.add(user)
    if not users:
        raise ValueError("access matrix needs a non-empty log")
    patient_list = tuple(sorted(seen, key=str))
    user_list = tuple(sorted(users, key=str))
    col = {u: j for j, u in enumerate(user_list)}
    entries = {}
    for i, p in enumerate(patient_list):
        w = Fraction(1, len(seen[p]))
        for u in seen[p]:
            entries[(i, col[u])] = w
    return AccessMatrix(patient_list, user_list, entries)


def log_pairs(log) -> list[tuple[object, object]]:
    """(user, patient) pairs of a log relation."""
    return list(zip(log.column("User"), log.column("Patient")))


@dataclass(frozen=True)
class WeightGraph:
    users: tuple
    weights: dict[tuple[int, int], Fraction]

    def __getitem__(self, key: tuple) -> Fraction:
        a, b = key
        try:
            i, j = self.users.index(a), self.users.index(b)
        except ValueError:
            raise KeyError(key) from None
        return self.weights.get((i, j), Fraction(0))

    def node_weight(self, user) -> Fraction:
        i = self.users.index(user)
        return sum((w for (a, _), w in self.weights.items() if a == i), Fraction(0))

    def neighbours(self) -> dict[int, dict[int, Fraction]]:
        out: dict[int, dict[int, Fraction]] = {i: {} for i in range(len(self.users))}
        for (a, b), w in self.weights.items():
            if a != b:
                out[a][b] = w
        return out


def user_weights(A: AccessMatrix) -> WeightGraph:
    """Exact ``W = AᵀA``; zero entries are omitted."""
    acc: dict[tuple[int, int], Fraction] = {}
    for _, row in A.rows().items():
        for j1, v1 in row:
            for j2, v2 in row:
                acc[(j1, j2)] = acc.get((j1, j2), Fraction(0)) + v1 * v2
    return WeightGraph(A.users, {k: v for k, v in acc.items() if v})


@dataclass(frozen=True)
class Clustering:
    clusters: tuple[tuple, ...]
    modularity: float


def _degrees(g: WeightGraph) -> list[float]:
    """Node degrees for clustering: self-loops are left out."""
    k = [0.0] * len(g.users)
    for (a, b), w in g.weights.items():
        if a != b:
            k[a] += float(w)
    return k


def modularity(g: WeightGraph, clusters: Sequence[Sequence]) -> float:
    """Weighted modularity of the graph without its self-loops."""
    k = _degrees(g)
    two_m = sum(k)
    if two_m == 0:
        return 0.0
    index = {u: i for i, u in enumerate(g.users)}
    q = 0.0
    for c in clusters:
        members = {index[u] for u in c}
        inner = sum(
            float(w) for (i, j), w in g.weights.items() if i != j and i in members and j in members
        )
        deg = sum(k[i] for i in members)
        q += inner / two_m - (deg / two_m) ** 2
    return q


def cluster(g: WeightGraph) -> Clustering:
    """Greedy agglomerative modularity maximisation.

    Self-loops are ignored: they would be identical inside every partition
    but inflate each user's degree.  Starts from singletons and repeatedly merges the connected pair with the largest
    gain while the gain exceeds ``MERGE_TOLERANCE``.  Gains equal up to
    the tolerance are broken by the smallest pair of cluster ids; a cluster's
    id is the position of its first member in ``g.users``.
    """
    n = len(g.users)
    nb = g.neighbours()
    k = _degrees(g)
    two_m = sum(k)
    members = {i: [i] for i in range(n)}
    if two_m == 0:
        return Clustering(tuple((u,) for u in g.users), 0.0)
    a = {i: k[i] / two_m for i in range(n)}
    e = {i: {j: float(w) / two_m for j, w in nb[i].items()} for i in range(n)}
    version = {i: 0 for i in range(n)}

    def gain(x, y):
        return 2.0 * (e[x][y] - a[x] * a[y])

    heap = []

    def push(x, y):
        x, y = min(x, y), max(x, y)
        heapq.heappush(heap, (-round(gain(x, y), 12), x, y, version[x], version[y]))

    for i in range(n):
        for j in e[i]:
            if i < j:
                push(i, j)
    while heap:
        neg, x, y, vx, vy = heapq.heappop(heap)
        if version.get(x) != vx or version.get(y) != vy:
            continue
        if -neg <= MERGE_TOLERANCE:
            break
        # merge y into x (x < y keeps the smaller id)
        for z, w in e.pop(y).items():
            if z == x:
                continue
            e[x][z] = e[x].get(z, 0.0) + w
            e[z][x] = e[x][z]
            del e[z][y]
        e[x].pop(y, None)
        a[x] += a.pop(y)
        members[x].extend(members.pop(y))
        version[x] += 1
        del version[y]
        for z in e[x]:
            push(x, z)
    clusters = tuple(
        tuple(g.users[i] for i in sorted(ms)) for _, ms in sorted(members.items())
    )
    return Clustering(clusters, modularity(g, clusters))


@dataclass
class GroupHierarchy:
    """Partitions of the users per depth; depth 0 is the single all-users group."""

    users: tuple
    levels: dict[int, list[tuple]] = field(default_factory=dict)
    modularity: dict[int, list[float]] = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return max(self.levels, default=0)

    def partition(self, depth: int) -> list[tuple]:
        if depth == 0:
            return [self.users]
        return self.levels[depth]

    @staticmethod
    def group_id(depth: int, k: int) -> str:
        return f"d{depth}g{k}"

    def rows(self, depths: Iterable[int] | None = None) -> list[tuple[int, str, object]]:
        depths = sorted(self.levels) if depths is None else sorted(depths)
        out = []
        for d in depths:
            for k, grp in enumerate(self.partition(d)):
                gid = self.group_id(d, k)
                out.extend((d, gid, u) for u in grp)
        return out

    def to_csv(self, depths: Iterable[int] | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GROUPS_HEADER)
        for row in self.rows(depths):
            w.writerow(row)
        return buf.getvalue()


def build_hierarchy(
    pairs: Sequence[tuple[object, object]], max_depth: int = DEFAULT_MAX_DEPTH
) -> GroupHierarchy:
    """Recursive clustering of the users in (user, patient) access pairs.

    A group is re-clustered on the accesses of its own users only.  Recursion
    stops at ``max_depth``, at groups of at most two users, and when clustering
    returns a single group; a group that stops splitting is carried unchanged
    to the deeper levels so that every level partitions all users.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    pairs = list(pairs)
    A = build_access_matrix(pairs)
    h = GroupHierarchy(A.users)
    first = cluster(user_weights(A))
    h.levels[1] = _ordered(first.clusters, A.users)
    h.modularity[1] = [first.modularity]
    open_groups = [g for g in h.levels[1] if len(g) > 2 and len(h.levels[1]) > 1]
    for depth in range(2, max_depth + 1):
        if not open_groups:
            break
        level: list[tuple] = []
        qs = []
        still_open = set()
        for grp in h.levels[depth - 1]:
            if grp not in open_groups:
                level.append(grp)
                continue
            members = set(grp)
            sub = cluster(user_weights(build_access_matrix((u, p) for u, p in pairs if u in members)))
            qs.append(sub.modularity)
            if len(sub.clusters) == 1:
                level.append(grp)
                continue
            for c in sub.clusters:
                level.append(c)
                if len(c) > 2:
                    still_open.add(c)
        h.levels[depth] = _ordered(level, A.users)
        h.modularity[depth] = qs
        open_groups = [g for g in h.levels[depth] if g in still_open]
    return h


def _ordered(groups: Iterable[tuple], users: tuple) -> list[tuple]:
    rank = {u: i for i, u in enumerate(users)}
    return sorted(
        (tuple(sorted(g, key=rank.__getitem__)) for g in groups), key=lambda g: rank[g[0]]
    )


def depth_zero_rows(users: Iterable[object]) -> list[tuple[int, str, object]]:
    return [(0, GroupHierarchy.group_id(0, 0), u) for u in sorted(set(users), key=str)]
