import random
import threading

import pytest

from conftest import CLINIC_A, CLINIC_B, clinic_catalog
from expaudit.evaluator import EXACT_ESTIMATE_ROWS, Evaluator
from expaudit.graph import FORWARD, ExplanationGraph, Filter, make_template
from expaudit.relstore import Database
from oracle import enumerate_explanations, nested_loop_support, random_database


def test_template_a_explains_one_of_two(clinic_db, clinic_templates):
    a, _ = clinic_templates
    r = Evaluator(clinic_db).support(a)
    assert (r.count, r.fraction) == (1, 0.5)


def test_template_b_explains_both(clinic_db, clinic_templates):
    _, b = clinic_templates
    r = Evaluator(clinic_db).support(b)
    assert (r.count, r.fraction) == (2, 1.0)


def test_open_path_counts_rows_with_an_appointment(clinic_db, clinic_graph):
    p = clinic_graph.path_from_conditions(CLINIC_A[:1])[0]
    assert Evaluator(clinic_db).support(p).count == 2


def test_second_call_is_a_cache_hit(clinic_db, clinic_templates):
    a, _ = clinic_templates
    ev = Evaluator(clinic_db)
    first = ev.support_cached(a)
    second = ev.support_cached(a)
    assert not first.from_cache and second.from_cache
    assert first.count == second.count


def test_cache_is_keyed_by_canonical_form(clinic_db, clinic_graph):
    ev = Evaluator(clinic_db)
    a = clinic_graph.path_from_conditions(CLINIC_A)[0]
    ev.support_cached(a)
    assert ev.support_cached(clinic_graph.reverse(a)).from_cache


def test_disabled_cache_never_hits(clinic_db, clinic_templates):
    a, _ = clinic_templates
    ev = Evaluator(clinic_db, use_cache=False)
    ev.support_cached(a)
    assert not ev.support_cached(a).from_cache


def test_cache_is_safe_under_threads(clinic_db, clinic_templates):
    ev = Evaluator(clinic_db)
    counts = []

    def work():
        for t in clinic_templates * 50:
            counts.append((t.id, ev.support_cached(t).count))

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert set(counts) == {(clinic_templates[0].id, 1), (clinic_templates[1].id, 2)}


def test_small_tables_estimate_exactly(clinic_db, clinic_graph):
    ev = Evaluator(clinic_db)
    for conds in (CLINIC_A, CLINIC_B, CLINIC_A[:1]):
        p = clinic_graph.path_from_conditions(conds)[0]
        assert ev.estimate_support(p) == ev.support(p).count


def test_estimate_is_bounded_by_log_size():
    db = _large_database()
    ev = Evaluator(db)
    g = ev.graph
    p = g.path_from_conditions([("Log#0.Patient", "Visits#1.Patient"), ("Visits#1.Doctor", "Log#0.User")])[0]
    est = ev.estimate_support(p)
    assert 0 <= est <= ev.n_log
    exact = ev.support(p).count
    assert exact > 0 and est > 0


def _large_database():
    cat_text = (
        "table Log(Lid text, Date date, User text, Patient text) key Lid\n"
        "table Visits(Patient text, Doctor text)\n"
        "fk: Log.Patient = Visits.Patient\n"
        "fk: Visits.Doctor = Log.User\n"
        "anchors: Log.Patient -> Log.User\n"
    )
    from expaudit.relstore import load_schema

    rng = random.Random(3)
    db = Database(load_schema(cat_text))
    n = EXACT_ESTIMATE_ROWS + 200
    db.add_rows(
        "Log",
        [(f"L{i}", None, f"u{rng.randrange(50)}", f"p{rng.randrange(300)}") for i in range(n)],
    )
    db.add_rows("Visits", [(f"p{rng.randrange(300)}", f"u{rng.randrange(50)}") for _ in range(n)])
    return db.seal()


def test_instance_for_l1_renders_description(clinic_db, clinic_templates):
    a, _ = clinic_templates
    (inst,) = Evaluator(clinic_db).instances(a, "L1")
    assert inst.description == "Alice had an appointment with Dave on 1/1/2010."
    assert inst.lid == "L1" and inst.length == 2


def test_no_instance_for_l2(clinic_db, clinic_templates):
    a, _ = clinic_templates
    assert Evaluator(clinic_db).instances(a, "L2") == []


def test_unknown_lid_is_an_error(clinic_db, clinic_templates):
    with pytest.raises(KeyError):
        Evaluator(clinic_db).instances(list(clinic_templates), "L404")


def test_duplicate_appointment_rows_give_two_instances(clinic_templates):
    db = Database(clinic_catalog())
    db.ingest_csv("Log", "Lid,Date,User,Patient\nL1,1/1/2010,Dave,Alice\n")
    db.ingest_csv(
        "Appointments", "Patient,Date,Doctor\nAlice,1/1/2010,Dave\nAlice,3/3/2010,Dave\n"
    )
    db.ingest_csv("Doctor_Info", "Doctor,Department\nDave,Pediatrics\n")
    db.seal()
    a, _ = clinic_templates
    ev = Evaluator(db)
    found = ev.instances(a, "L1")
    assert [i.description for i in found] == [
        "Alice had an appointment with Dave on 1/1/2010.",
        "Alice had an appointment with Dave on 3/3/2010.",
    ]
    assert ev.support(a).count == 1


def test_instances_are_ranked_shortest_first(clinic_db, clinic_templates):
    a, b = clinic_templates
    found = Evaluator(clinic_db).instances([b, a], "L1")
    assert [i.length for i in found] == sorted(i.length for i in found)
    assert found[0].template_id == a.id


def test_filter_restricts_support(clinic_db, clinic_graph):
    p = clinic_graph.path_from_conditions(CLINIC_A)[0]
    ev = Evaluator(clinic_db)
    before = make_template(clinic_graph, p, filters=[Filter("Appointments#1.Date", "<=", "Log#0.Date")])
    after = make_template(clinic_graph, p, filters=[Filter("Appointments#1.Date", ">", "Log#0.Date")])
    assert ev.support(before).count == 1
    assert ev.support(after).count == 0


def test_unsealed_database_is_rejected():
    with pytest.raises(ValueError):
        Evaluator(Database(clinic_catalog()))


def _all_paths(db, M=4, T=3):
    g = ExplanationGraph(db.catalog)
    for conds in enumerate_explanations(db.catalog, M, T):
        yield g, conds, g.path_from_conditions(list(conds))[0]


@pytest.mark.parametrize("seed", range(40))
def test_semijoin_matches_nested_loops(seed):
    db = random_database(seed, max_log_rows=60)
    ev = Evaluator(db)
    for _, conds, p in _all_paths(db):
        assert ev.support(p).count == nested_loop_support(db, conds), conds


@pytest.mark.parametrize("seed", range(40))
def test_bag_mode_agrees_with_dedup(seed):
    db = random_database(seed, max_log_rows=60)
    dedup, bag = Evaluator(db), Evaluator(db, dedup=False)
    for _, _, p in _all_paths(db):
        assert dedup.explained(p) == bag.explained(p)


@pytest.mark.parametrize("seed", range(20))
def test_full_bindings_agree_with_semijoin(seed):
    db = random_database(seed, max_log_rows=40)
    ev = Evaluator(db)
    for g, _, p in _all_paths(db, M=3):
        t = make_template(g, p)
        bound = {i for i, _ in ev.assignments(p)}
        assert bound == set(ev.explained(p))
        # every explained access has an instance, and only those do
        for i, lid in enumerate(ev.lids):
            assert bool(ev.instances(t, lid)) == (i in bound)


@pytest.mark.parametrize("seed", range(20))
def test_decorated_support_never_exceeds_plain(seed):
    db = random_database(seed, max_log_rows=40)
    ev = Evaluator(db)
    rng = random.Random(seed)
    for g, _, p in _all_paths(db, M=3):
        logs = sorted({str(i) for i in p.all_instances() if i.table == "Log"})
        if len(logs) < 2:
            continue
        f = Filter(f"{logs[1]}.Date", rng.choice(["<", "<=", ">", ">=", "="]), f"{logs[0]}.Date")
        t = make_template(g, p, filters=[f])
        assert ev.support(t).count <= ev.support(p).count


def _check_extensions(seed) -> int:
    """Assert every one-edge extension explains a subset; return how many were checked."""
    db = random_database(seed, max_log_rows=60)
    ev = Evaluator(db)
    g = ev.graph
    frontier = [g.root(FORWARD)]
    checked = 0
    for _ in range(4):
        nxt = []
        for p in frontier:
            base = ev.explained(p)
            for e in g.edges_from(p.frontier.table):
                q = g.extend_path(p, e)
                if q is None:
                    continue
                checked += 1
                assert ev.explained(q) <= base
                if not q.closed:
                    nxt.append(q)
        frontier = nxt
    return checked


def test_extension_never_gains_support():
    assert sum(_check_extensions(seed) for seed in range(40)) > 100
