from __future__ import annotations

import sys
from pathlib import Path

import pytest

from expaudit.graph import ExplanationGraph, make_template
from expaudit.relstore import Database, load_schema
from expaudit.synthetic import SyntheticSpec, gen_synthetic

DATA = Path(__file__).parent / "data"
sys.path.insert(0, str(Path(__file__).parent))

CLINIC_A = [("Log#0.Patient", "Appointments#1.Patient"), ("Appointments#1.Doctor", "Log#0.User")]
CLINIC_B = [
    ("Log#0.Patient", "Appointments#1.Patient"),
    ("Appointments#1.Doctor", "Doctor_Info#1.Doctor"),
    ("Doctor_Info#1.Department", "Doctor_Info#2.Department"),
    ("Doctor_Info#2.Doctor", "Log#0.User"),
]
CLINIC_A_TEXT = "[Log#0.Patient] had an appointment with [Log#0.User] on [Appointments#1.Date]."

# which users accessed each patient's record
COACCESS = {"A": "012", "B": "02", "C": "12", "D": "23"}

SAMPLE_LOG = [
    ("L100", "Mon Jan 03 10:16:57 2010", "Nurse Nick", "Alice"),
    ("L116", "Mon Jan 03 11:22:43 2010", "Dr. Dave", "Alice"),
    ("L127", "Mon Jan 03 17:09:03 2010", "Radiologist Ron", "Alice"),
    ("L900", "Mon Apr 28 14:29:08 2010", "Surgeon Sam", "Alice"),
]

ACCEPTANCE: list[str] = []


def clinic_catalog():
    return load_schema((DATA / "clinic" / "clinic.schema").read_text())


@pytest.fixture
def clinic_db():
    return Database.from_directory(clinic_catalog(), DATA / "clinic")


@pytest.fixture
def clinic_graph(clinic_db):
    return ExplanationGraph(clinic_db.catalog)


@pytest.fixture
def clinic_templates(clinic_graph):
    g = clinic_graph
    a = make_template(g, g.path_from_conditions(CLINIC_A)[0], description=CLINIC_A_TEXT)
    b = make_template(g, g.path_from_conditions(CLINIC_B)[0])
    return a, b


def coaccess_pairs():
    return [(u, p) for p, users in COACCESS.items() for u in users]


@pytest.fixture(scope="session")
def synthetic():
    spec = SyntheticSpec()
    db, truth = gen_synthetic(spec)
    return spec, db, truth


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
