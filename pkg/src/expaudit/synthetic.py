"""Synthetic hospital database and access log with planted access reasons.

Users belong to departments, and each department is split into care groups.
Every patient is looked after by one home group.  Log rows are drawn from four
reasons:

* ``direct``: the user has an event (appointment, lab order, ...) with the patient;
* ``collaborator``: another member of the user's group has the event;
* ``repeat``: the user re-opens a record they accessed earlier;
* ``noise``: a uniformly random (user, patient) pair.

The generator records which template shape explains each row, so mining and
evaluation can be checked against the truth.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta

from .graph import ExplanationGraph, Path
from .relstore import Database, DateValue, SchemaCatalog, load_schema

EVENT_TABLES = (
    ("Appointments", "Doctor"),
    ("Visits", "Doctor"),
    ("Documents", "Author"),
    ("Labs", "Requester"),
    ("Medications", "Requester"),
    ("Radiology", "Radiologist"),
)
REASONS = ("direct", "collaborator", "repeat", "noise")
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class InfeasibleSpec(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    users: int = 400
    patients: int = 5000
    departments: int = 8
    groups_per_department: int = 2
    event_tables: tuple[str, ...] = tuple(t for t, _ in EVENT_TABLES)
    reason_mix: tuple[float, float, float, float] = (0.4, 0.3, 0.2, 0.1)
    density: float = 0.005
    days: int = 365
    seed: int = 0
    start: str = "2010-01-01"

    def __post_init__(self):
        if len(self.reason_mix) != len(REASONS) or any(f < 0 for f in self.reason_mix):
            raise InfeasibleSpec("reason mix needs four non-negative fractions")
        if abs(sum(self.reason_mix) - 1.0) > 1e-9:
            raise InfeasibleSpec(f"reason fractions sum to {sum(self.reason_mix)}, not 1")
        if not (0 < self.density <= 1):
            raise InfeasibleSpec(f"density must be in (0, 1], got {self.density}")
        known = {t for t, _ in EVENT_TABLES}
        if not self.event_tables or not set(self.event_tables) <= known:
            raise InfeasibleSpec(f"event tables must be a non-empty subset of {sorted(known)}")
        if self.users < 1 or self.patients < 1 or self.days < 1:
            raise InfeasibleSpec("users, patients and days must be positive")
        if self.departments < 1 or self.groups_per_department < 1:
            raise InfeasibleSpec("departments and groups per department must be positive")
        if self.n_groups > self.users:
            raise InfeasibleSpec(f"{self.n_groups} groups cannot be staffed by {self.users} users")
        if self.reason_mix[1] > 0 and self.users < 2 * self.n_groups:
            raise InfeasibleSpec("collaborator accesses need at least two users per group")
        if self.log_rows < 1:
            raise InfeasibleSpec(
                f"density {self.density} over {self.users}x{self.patients} yields an empty log"
            )

    @property
    def n_groups(self) -> int:
        return self.departments * self.groups_per_department

    @property
    def log_rows(self) -> int:
        return round(self.density * self.users * self.patients)

    @property
    def event_columns(self) -> dict[str, str]:
        cols = dict(EVENT_TABLES)
        return {t: cols[t] for t in self.event_tables}


@dataclass
class GroundTruth:
    labels: dict[str, str] = field(default_factory=dict)  # Lid -> shape label
    user_group: dict[str, int] = field(default_factory=dict)
    user_department: dict[str, int] = field(default_factory=dict)

    def shape_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for label in self.labels.values():
            out[label] = out.get(label, 0) + 1
        return out

    def planted_shapes(self) -> set[str]:
        return {l for l in self.labels.values() if l != "noise"}


def synthetic_schema(event_tables: dict[str, str], with_groups: bool = False) -> str:
    lines = [
        "# synthetic hospital schema",
        "table Log(Lid text, Date date, User text, Patient text) key Lid",
        "table Users(User text, Department text) key User",
    ]
    for table, col in event_tables.items():
        lines.append(f"table {table}(Patient text, Date date, {col} text)")
    if with_groups:
        lines.append("table Groups(Group_Depth integer, Group_id text, User text)")
    for table, col in event_tables.items():
        lines.append(f"fk: Log.Patient = {table}.Patient")
        lines.append(f"fk: Log.User = {table}.{col}")
        lines.append(f"fk: {table}.{col} = Users.User")
        if with_groups:
            lines.append(f"fk: {table}.{col} = Groups.User")
    lines.append("fk: Log.User = Users.User")
    if with_groups:
        lines.append("fk: Log.User = Groups.User")
        lines.append("selfjoin: Groups.Group_id")
    lines += [
        "selfjoin: Users.Department",
        "selfjoin: Log.Patient",
        "selfjoin: Log.User",
        "anchors: Log.Patient -> Log.User",
    ]
    return "\n".join(lines) + "\n"


def gen_synthetic(spec: SyntheticSpec) -> tuple[Database, GroundTruth]:
    rng = random.Random(spec.seed)
    start = datetime.strptime(spec.start, "%Y-%m-%d")
    span = spec.days * 86400
    users = [f"u{i:04d}" for i in range(spec.users)]
    patients = [f"p{i:05d}" for i in range(spec.patients)]
    truth = GroundTruth()
    members: list[list[str]] = [[] for _ in range(spec.n_groups)]
    for i, u in enumerate(users):
        g = i % spec.n_groups
        members[g].append(u)
        truth.user_group[u] = g
        truth.user_department[u] = g // spec.groups_per_department
    home = {p: rng.randrange(spec.n_groups) for p in patients}
    tables = list(spec.event_tables)
    ucol = spec.event_columns

    n = spec.log_rows
    counts = [int(n * f) for f in spec.reason_mix]
    counts[3] += n - sum(counts)
    reasons = [r for r, k in zip(REASONS, counts) for _ in range(k)]
    rng.shuffle(reasons)

    events: dict[str, list[tuple]] = {t: [] for t in tables}
    rows: list[tuple[int, str, str, str]] = []  # (second offset, user, patient, label)
    firsts: list[int] = []

    def event(table, patient, user, t):
        when = start + timedelta(seconds=max(0, t - rng.randrange(0, 30 * 86400)))
        events[table].append((patient, _date(when), user))

    for reason in reasons:
        if reason == "repeat":
            continue
        t = rng.randrange(span)
        if reason == "noise":
            rows.append((t, rng.choice(users), rng.choice(patients), "noise"))
            continue
        p = rng.choice(patients)
        group = members[home[p]]
        table = rng.choice(tables)
        if reason == "direct":
            u = rng.choice(group)
            event(table, p, u, t)
        else:
            author, u = rng.sample(group, 2)
            event(table, p, author, t)
        firsts.append(len(rows))
        rows.append((t, u, p, f"{reason}:{table}"))
    n_repeat = counts[2]
    if n_repeat and not firsts:
        raise InfeasibleSpec("repeat accesses need direct or collaborator accesses to repeat")
    for _ in range(n_repeat):
        t0, u, p, _ = rows[rng.choice(firsts)]
        t = min(span - 1, t0 + rng.randrange(1, 7 * 86400))
        rows.append((t, u, p, "repeat"))

    order = sorted(range(len(rows)), key=lambda i: (rows[i][0], i))
    width = len(str(len(rows)))
    log_rows = []
    for k, i in enumerate(order):
        t, u, p, label = rows[i]
        lid = f"L{k:0{width}d}"
        log_rows.append((lid, _date(start + timedelta(seconds=t)), u, p))
        truth.labels[lid] = label

    catalog = load_schema(synthetic_schema(ucol))
    db = Database(catalog)
    db.add_rows("Log", log_rows)
    db.add_rows(
        "Users", [(u, f"dept{truth.user_department[u]}") for u in users]
    )
    for table in tables:
        db.add_rows(table, sorted(events[table], key=lambda r: (r[1], r[0], r[2])))
    return db.seal(), truth


def _date(when: datetime) -> DateValue:
    return DateValue(when, when.strftime(DATE_FORMAT))


def planted_conditions(label: str, event_columns: dict[str, str], group_table: str = "Users"):
    """Selection conditions of the template shape behind a truth label."""
    if label == "repeat":
        return [("Log#0.Patient", "Log#1.Patient"), ("Log#1.User", "Log#0.User")]
    reason, _, table = label.partition(":")
    col = event_columns[table]
    if reason == "direct":
        return [("Log#0.Patient", f"{table}#1.Patient"), (f"{table}#1.{col}", "Log#0.User")]
    if reason == "collaborator":
        link = "Department" if group_table == "Users" else "Group_id"
        g = group_table
        return [
            ("Log#0.Patient", f"{table}#1.Patient"),
            (f"{table}#1.{col}", f"{g}#1.User"),
            (f"{g}#1.{link}", f"{g}#2.{link}"),
            (f"{g}#2.User", "Log#0.User"),
        ]
    raise ValueError(f"no planted shape for label {label!r}")


def planted_paths(
    graph: ExplanationGraph, labels, event_columns: dict[str, str], group_table: str = "Users"
) -> dict[str, Path]:
    return {
        label: graph.path_from_conditions(planted_conditions(label, event_columns, group_table))[0]
        for label in sorted(set(labels))
        if label != "noise"
    }


def with_groups(db: Database, rows) -> Database:
    """The database plus a Groups relation holding ``rows``."""
    cols = {}
    for decl in db.catalog.tables:
        if decl.name in ("Log", "Users", "Groups"):
            continue
        cols[decl.name] = decl.names[2]
    catalog: SchemaCatalog = load_schema(synthetic_schema(cols, with_groups=True))
    return db.replace({"Groups": list(rows)}, catalog)
