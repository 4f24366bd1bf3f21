"""Command-line interface: ingest, mine, groups, explain, evaluate, gen.

Exit status is 0 on success, 1 for invalid arguments or malformed input and 2
for any other failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import groups as grp
from .evaluator import Evaluator
from .graph import ExplanationGraph, loads_templates
from .harness import anchor_domain, evaluate, first_accesses, gen_fake_log
from .miner import ConfigError, MiningConfig, mine
from .relstore import DataError, Database, SchemaError, load_schema
from .synthetic import InfeasibleSpec, SyntheticSpec, gen_synthetic, synthetic_schema

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_store(p: argparse.ArgumentParser) -> None:
    p.add_argument("--schema", required=True, help="schema declaration file")
    p.add_argument("--data", required=True, help="directory with one <Table>.csv per table")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="expaudit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load and validate a dataset")
    _add_store(p)
    p.add_argument("--check", action="store_true", help="validate only (the default)")

    p = sub.add_parser("mine", help="mine supported explanation templates")
    _add_store(p)
    p.add_argument("-s", "--support-pct", type=float, default=1.0, help="support threshold in percent")
    p.add_argument("-M", "--max-length", type=int, default=5)
    p.add_argument("-T", "--max-tables", type=int, default=3)
    p.add_argument("--algorithm", choices=("one-way", "two-way", "bridge"), default="bridge")
    p.add_argument(
        "--bridge-depth",
        type=int,
        default=None,
        help="bridge depth l (default: smallest l with 2l-1 >= max length)",
    )
    p.add_argument("-c", "--skip-constant", type=float, default=10.0)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--no-skip", action="store_true")
    p.add_argument("--no-dedup", action="store_true")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", help="templates file (JSON lines); default stdout")
    p.add_argument("--stats", help="stats file (JSON); default stderr")

    p = sub.add_parser("groups", help="infer collaborative groups from the log")
    _add_store(p)
    p.add_argument("--max-group-depth", type=int, default=grp.DEFAULT_MAX_DEPTH)
    p.add_argument("--depth", type=int, action="append", help="emit only these depths (0 allowed)")
    p.add_argument("--out", help="Groups CSV; default stdout")

    p = sub.add_parser("explain", help="ranked explanations of one access")
    _add_store(p)
    p.add_argument("--templates", required=True, help="templates file (JSON lines)")
    p.add_argument("--lid", required=True)
    p.add_argument("--out")

    p = sub.add_parser("evaluate", help="precision and recall against a fake log")
    _add_store(p)
    p.add_argument("--templates", required=True, help="templates file (JSON lines)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--first-accesses", action="store_true", help="score first accesses only")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out")

    p = sub.add_parser("gen", help="write a synthetic dataset with planted access reasons")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=SyntheticSpec.users)
    p.add_argument("--patients", type=int, default=SyntheticSpec.patients)
    p.add_argument("--departments", type=int, default=SyntheticSpec.departments)
    p.add_argument("--groups-per-department", type=int, default=SyntheticSpec.groups_per_department)
    p.add_argument("--density", type=float, default=SyntheticSpec.density)
    p.add_argument(
        "--mix",
        default=",".join(str(x) for x in SyntheticSpec.reason_mix),
        help="direct,collaborator,repeat,noise fractions",
    )
    return parser


def _load(args) -> Database:
    schema = Path(args.schema)
    if not schema.is_file():
        raise UsageError(f"schema file not found: {schema}")
    if not Path(args.data).is_dir():
        raise UsageError(f"data directory not found: {args.data}")
    try:
        catalog = load_schema(schema.read_text())
    except SchemaError as exc:
        raise SchemaError(f"{schema}: {exc}") from None
    return Database.from_directory(catalog, args.data)


def _emit(text: str, path: str | None, stdout) -> None:
    if path:
        Path(path).write_text(text)
    else:
        stdout.write(text)


def _templates(args, graph: ExplanationGraph):
    path = Path(args.templates)
    if not path.is_file():
        raise UsageError(f"templates file not found: {path}")
    try:
        return loads_templates(graph, path.read_text())
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _cmd_ingest(args, out, err) -> None:
    db = _load(args)
    for decl in db.catalog.tables:
        out.write(f"{decl.name}\t{len(db.relation(decl.name))}\n")


def _cmd_mine(args, out, err) -> None:
    if not (0 < args.support_pct <= 100):
        raise ConfigError(f"support must be in (0, 100] percent, got {args.support_pct}")
    cfg = MiningConfig(
        s=args.support_pct / 100,
        M=args.max_length,
        T=args.max_tables,
        c=args.skip_constant,
        algorithm=args.algorithm,
        bridge_depth=args.bridge_depth,
        use_cache=not args.no_cache,
        dedup=not args.no_dedup,
        skip=not args.no_skip,
        threads=args.threads,
    )
    db = _load(args)
    if len(db.log) == 0:
        raise DataError("cannot mine an empty log")
    result = mine(db, cfg)
    graph = ExplanationGraph(db.catalog)
    _emit(result.to_jsonl(graph), args.out, out)
    _emit(result.stats_json() + "\n", args.stats, err)


def _cmd_groups(args, out, err) -> None:
    if args.max_group_depth < 1:
        raise ConfigError("--max-group-depth must be at least 1")
    db = _load(args)
    if len(db.log) == 0:
        raise DataError("cannot cluster an empty log")
    h = grp.build_hierarchy(grp.log_pairs(db.log), args.max_group_depth)
    depths = args.depth
    if depths and any(d not in h.levels and d != 0 for d in depths):
        raise ConfigError(f"hierarchy has depths 0..{h.depth}, asked for {depths}")
    _emit(h.to_csv(depths), args.out, out)


def _cmd_explain(args, out, err) -> None:
    db = _load(args)
    graph = ExplanationGraph(db.catalog)
    templates = _templates(args, graph)
    ev = Evaluator(db, graph)
    try:
        found = ev.instances(templates, args.lid)
    except KeyError as exc:
        raise DataError(str(exc).strip("'\"")) from None
    _emit("".join(i.description + "\n" for i in found), args.out, out)


def _cmd_evaluate(args, out, err) -> None:
    db = _load(args)
    graph = ExplanationGraph(db.catalog)
    templates = _templates(args, graph)
    if len(db.log) == 0:
        raise DataError("cannot evaluate on an empty log")
    if args.first_accesses:
        db = db.replace({db.catalog.log_table: list(first_accesses(db.log).rows)})
    fake = gen_fake_log(
        db.log,
        anchor_domain(db, graph, db.catalog.anchor_end),
        anchor_domain(db, graph, db.catalog.anchor_start),
        seed=args.seed,
    )
    report = evaluate(templates, db, fake)
    _emit(report.to_json() + "\n" if args.format == "json" else report.to_text(), args.out, out)


def _cmd_gen(args, out, err) -> None:
    try:
        mix = tuple(float(x) for x in args.mix.split(","))
    except ValueError:
        raise UsageError(f"--mix expects four comma-separated numbers, got {args.mix!r}") from None
    spec = SyntheticSpec(
        users=args.users,
        patients=args.patients,
        departments=args.departments,
        groups_per_department=args.groups_per_department,
        reason_mix=mix,
        density=args.density,
        seed=args.seed,
    )
    db, truth = gen_synthetic(spec)
    target = Path(args.out)
    db.to_directory(target)
    (target / "hospital.schema").write_text(synthetic_schema(spec.event_columns))
    lines = ["Lid,Reason"] + [f"{lid},{label}" for lid, label in truth.labels.items()]
    (target / "truth.csv").write_text("\n".join(lines) + "\n")
    out.write(f"wrote {len(db.log)} log rows to {target}\n")


COMMANDS = {
    "ingest": _cmd_ingest,
    "mine": _cmd_mine,
    "groups": _cmd_groups,
    "explain": _cmd_explain,
    "evaluate": _cmd_evaluate,
    "gen": _cmd_gen,
}


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, stdout, stderr)
    except (UsageError, ConfigError, SchemaError, DataError, InfeasibleSpec) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - report and map to the failure status
        stderr.write(f"failed: {type(exc).__name__}: {exc}\n")
        return EXIT_FAILURE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
