"""Level-wise mining of supported explanation templates.

Three strategies share one candidate-evaluation step:

* one-way: grow paths from the start anchor until they close on the end anchor;
* two-way: grow from both anchors at once and union what closes;
* bridge: grow both directions to a fixed depth, then join forward prefixes
  with backward suffixes that share their last edge.

Every level is evaluated (optionally in parallel) before the next one is
generated, and outputs are sorted by canonical key, so results do not depend on
the worker count.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .evaluator import Evaluator
from .graph import (
    BACKWARD,
    FORWARD,
    ExplanationGraph,
    ExplanationTemplate,
    Path,
    dumps_template,
    make_template,
)
from .relstore import Database

ALGORITHMS = ("one-way", "two-way", "bridge")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MiningConfig:
    s: float = 0.01
    M: int = 5
    T: int = 3
    c: float = 10.0
    algorithm: str = "bridge"
    bridge_depth: int | None = None
    use_cache: bool = True
    dedup: bool = True
    skip: bool = True
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not (0 < self.s <= 1):
            raise ConfigError(f"support fraction must be in (0, 1], got {self.s}")
        if self.M < 1:
            raise ConfigError(f"max length must be at least 1, got {self.M}")
        if self.T < 2:
            raise ConfigError(f"max tables must be at least 2, got {self.T}")
        if self.c < 1:
            raise ConfigError(f"skip constant must be at least 1, got {self.c}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.algorithm == "bridge":
            depth = self.depth
            if depth < 2:
                raise ConfigError(f"bridge depth must be at least 2, got {depth}")
            if self.M > 2 * depth - 1:
                raise ConfigError(
                    f"bridge depth {depth} reaches length {2 * depth - 1}, below max length {self.M}"
                )

    @property
    def depth(self) -> int:
        """Bridge depth; when unset, the smallest depth that reaches M."""
        if self.bridge_depth is not None:
            return self.bridge_depth
        return max(2, (self.M + 2) // 2)

    def absolute_support(self, n_log: int) -> int:
        if n_log < 1:
            raise ConfigError("support threshold is undefined on an empty log")
        # round away float noise such as 10000 * 0.01 = 100.00000000000001
        return max(1, math.ceil(round(n_log * self.s, 9)))


@dataclass
class LevelStats:
    direction: str
    length: int
    candidates: int = 0
    rejected: int = 0
    evaluated: int = 0
    cache_hits: int = 0
    skipped: int = 0
    pruned: int = 0
    kept: int = 0
    explanations: int = 0
    seconds: float = 0.0


@dataclass
class MiningOutput:
    templates: list[ExplanationTemplate]
    stats: list[LevelStats] = field(default_factory=list)
    support_threshold: int = 0
    log_size: int = 0

    def keys(self, graph: ExplanationGraph) -> set[str]:
        return {graph.canonical_key(t.path) for t in self.templates}

    def to_jsonl(self, graph: ExplanationGraph) -> str:
        return "".join(dumps_template(graph, t) + "\n" for t in self.templates)

    def stats_json(self) -> str:
        body = {
            "support_threshold": self.support_threshold,
            "log_size": self.log_size,
            "templates": len(self.templates),
            "levels": [
                {k: (round(v, 6) if isinstance(v, float) else v) for k, v in asdict(s).items()}
                for s in self.stats
            ],
        }
        return json.dumps(body, indent=2, sort_keys=True)


class _Run:
    """State shared by the levels of one mining call."""

    def __init__(self, db: Database, cfg: MiningConfig, evaluator: Evaluator | None = None):
        self.db = db
        self.cfg = cfg
        self.graph = evaluator.graph if evaluator else ExplanationGraph(db.catalog)
        self.ev = evaluator or Evaluator(db, self.graph, dedup=cfg.dedup, use_cache=cfg.use_cache)
        self.S = cfg.absolute_support(len(db.log))
        self.stats: list[LevelStats] = []
        self.found: dict[str, tuple[Path, int]] = {}
        self.pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None

    def close(self):
        if self.pool:
            self.pool.shutdown()

    def _map(self, fn, items):
        if self.pool and len(items) > 1:
            return list(self.pool.map(fn, items))
        return [fn(x) for x in items]

    def _support(self, p: Path):
        if self.cfg.use_cache:
            return self.ev.support_cached(p)
        return self.ev.support(p)

    def _judge(self, p: Path):
        """('keep'|'skip'|'prune'|'explain'|'drop', count or None, from_cache)."""
        if self.graph.is_explanation(p):
            r = self._support(p)
            return ("explain" if r.count >= self.S else "drop", r.count, r.from_cache)
        if self.cfg.skip and p.length < self.cfg.M:
            if self.ev.estimate_support(p) >= self.S * self.cfg.c:
                return ("skip", None, False)
        r = self._support(p)
        return ("keep" if r.count >= self.S else "prune", r.count, r.from_cache)

    def extend(self, paths: Sequence[Path]) -> list[Path]:
        out = []
        for p in paths:
            for e in self.graph.edges_from(p.frontier.table):
                q = self.graph.extend_path(p, e)
                if q is not None:
                    out.append(q)
        return out

    def level(self, direction: str, length: int, candidates: list[Path]) -> list[Path]:
        """Evaluate one level; return the open paths worth extending."""
        st = LevelStats(direction, length)
        t0 = time.perf_counter()
        st.candidates = len(candidates)
        admissible = []
        for p in candidates:
            if self.graph.table_count(p) > self.cfg.T:
                st.rejected += 1
            elif length >= self.cfg.M and not p.closed:
                st.rejected += 1
            else:
                admissible.append(p)
        verdicts = self._map(self._judge, admissible)
        kept = []
        for p, (verdict, count, hit) in zip(admissible, verdicts):
            if count is not None:
                st.evaluated += not hit
                st.cache_hits += hit
            if verdict == "explain":
                st.explanations += 1
                self.record(p, count)
            elif verdict == "keep":
                st.kept += 1
                kept.append(p)
            elif verdict == "skip":
                st.skipped += 1
                kept.append(p)
            else:
                st.pruned += 1
        st.seconds = time.perf_counter() - t0
        self.stats.append(st)
        return kept

    def record(self, p: Path, count: int) -> None:
        fwd = self.graph.to_forward(p)
        self.found.setdefault(self.graph.canonical_key(fwd), (fwd, count))

    def grow(self, direction: str, depth: int) -> dict[int, list[Path]]:
        """Level-wise growth from one anchor; open paths kept per length."""
        frontier = [self.graph.root(direction)]
        kept_by_length: dict[int, list[Path]] = {}
        for length in range(1, depth + 1):
            frontier = self.level(direction, length, self.extend(frontier))
            kept_by_length[length] = frontier
            if not frontier:
                break
        return kept_by_length

    def grow_both(self, depth: int) -> tuple[dict[int, list[Path]], dict[int, list[Path]]]:
        fwd = [self.graph.root(FORWARD)]
        bwd = [self.graph.root(BACKWARD)]
        kept_f: dict[int, list[Path]] = {}
        kept_b: dict[int, list[Path]] = {}
        for length in range(1, depth + 1):
            if fwd:
                fwd = self.level(FORWARD, length, self.extend(fwd))
                kept_f[length] = fwd
            if bwd:
                bwd = self.level(BACKWARD, length, self.extend(bwd))
                kept_b[length] = bwd
            if not fwd and not bwd:
                break
        return kept_f, kept_b

    def output(self) -> MiningOutput:
        templates = []
        n = len(self.db.log)
        for key in sorted(self.found):
            p, count = self.found[key]
            templates.append(make_template(self.graph, p, support=count, support_fraction=count / n))
        return MiningOutput(templates, self.stats, self.S, n)


def _run(db: Database, cfg: MiningConfig, body, evaluator: Evaluator | None = None) -> MiningOutput:
    run = _Run(db, cfg, evaluator)
    try:
        body(run)
        return run.output()
    finally:
        run.close()


def mine_one_way(db: Database, cfg: MiningConfig, evaluator: Evaluator | None = None) -> MiningOutput:
    return _run(db, cfg, lambda r: r.grow(FORWARD, cfg.M), evaluator)


def mine_two_way(db: Database, cfg: MiningConfig, evaluator: Evaluator | None = None) -> MiningOutput:
    return _run(db, cfg, lambda r: r.grow_both(cfg.M), evaluator)


def bridge(
    graph: ExplanationGraph,
    prefixes: Sequence[Path],
    suffixes: Sequence[Path],
    n: int,
    max_tables: int,
) -> list[Path]:
    """Join forward prefixes of length l with backward suffixes of length n-l+1.

    The prefix's last edge and the suffix's last edge must be the same join
    walked in opposite directions.  Returns forward explanation paths of length
    ``n``, unique by canonical key, still to be support-tested.
    """
    if not prefixes or not suffixes:
        return []
    ell = prefixes[0].length
    if any(p.length != ell or p.direction != FORWARD for p in prefixes):
        raise ValueError("prefixes must be forward paths of one length")
    if not (2 <= ell < n <= 2 * ell - 1):
        raise ValueError(f"bridging needs 2 <= l < n <= 2l-1, got l={ell}, n={n}")
    if any(s.length != n - ell + 1 or s.direction != BACKWARD for s in suffixes):
        raise ValueError(f"suffixes must be backward paths of length {n - ell + 1}")
    by_bridge: dict[object, list[Path]] = {}
    for s in suffixes:
        by_bridge.setdefault(s.edges[-1].reversed(), []).append(s)
    out: dict[str, Path] = {}
    for p in prefixes:
        for s in by_bridge.get(p.edges[-1], ()):
            edges = p.edges + tuple(e.reversed() for e in reversed(s.edges[:-1]))
            q = graph.replay(edges, FORWARD)
            if q is None or not graph.is_explanation(q):
                continue
            if graph.table_count(q) > max_tables:
                continue
            out.setdefault(graph.canonical_key(q), q)
    return [out[k] for k in sorted(out)]


def mine_bridged(db: Database, cfg: MiningConfig, evaluator: Evaluator | None = None) -> MiningOutput:
    ell = cfg.depth
    if cfg.M > 2 * ell - 1:
        raise ConfigError(f"bridge depth {ell} cannot reach length {cfg.M}")

    def body(run: _Run):
        depth = min(ell, cfg.M)
        kept_f, kept_b = run.grow_both(depth)
        if cfg.M <= ell:
            return
        prefixes = kept_f.get(ell, [])
        for n in range(ell + 1, cfg.M + 1):
            st = LevelStats("bridge", n)
            t0 = time.perf_counter()
            cands = bridge(run.graph, prefixes, kept_b.get(n - ell + 1, []), n, cfg.T)
            st.candidates = len(cands)
            results = run._map(run._support, cands)
            for q, r in zip(cands, results):
                st.evaluated += not r.from_cache
                st.cache_hits += r.from_cache
                if r.count >= run.S:
                    st.explanations += 1
                    run.record(q, r.count)
                else:
                    st.pruned += 1
            st.seconds = time.perf_counter() - t0
            run.stats.append(st)

    return _run(db, cfg, body, evaluator)


def mine(db: Database, cfg: MiningConfig, evaluator: Evaluator | None = None) -> MiningOutput:
    return {
        "one-way": mine_one_way,
        "two-way": mine_two_way,
        "bridge": mine_bridged,
    }[cfg.algorithm](db, cfg, evaluator)
