"""Meta-pattern mining: random-walk sampling, minimal-subpath grouping,
top-K selection, affiliation/interaction categorization, and per-node
instance matching.

A meta-pattern is a canonical sequence of node types whose two endpoints
share a focal type; it is the unit of structure that transfers between
graphs with disjoint type sets. Patterns are sorted into four categories:

* affiliation (max degree-ratio along the pattern >= theta_mp), split into
  SAP (palindromic type sequence) and WAP (asymmetric);
* interaction (all ratios below theta_mp), split into SIP (edge length
  <= theta_lp) and WIP (longer).
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from cgfl._seeds import mix_seed
from cgfl.hetgraph import HetGraph, average_degree

logger = logging.getLogger(__name__)

CATEGORIES = ("SAP", "WAP", "SIP", "WIP")

_TAG_WALK = 0x21
_TAG_MATCH = 0x22


class DegenerateDegreeError(ValueError):
    """A node type in the pair has zero average degree."""


@dataclass(frozen=True)
class MetaPattern:
    """A canonical node-type sequence with its mined frequency."""

    type_sequence: tuple[int, ...]
    count: int
    category: str | None = None
    dispersion: float | None = None

    def __post_init__(self):
        if len(self.type_sequence) < 3:
            raise ValueError(f"a meta-pattern needs at least 3 nodes, got {self.type_sequence}")
        if self.type_sequence[0] != self.type_sequence[-1]:
            raise ValueError(f"meta-pattern endpoints must share the focal type: {self.type_sequence}")
        if self.type_sequence != canonical_sequence(self.type_sequence):
            raise ValueError(f"meta-pattern stored in non-canonical orientation: {self.type_sequence}")

    @property
    def focal(self) -> int:
        return self.type_sequence[0]

    @property
    def edge_length(self) -> int:
        return len(self.type_sequence) - 1

    @property
    def is_palindromic(self) -> bool:
        return self.type_sequence == self.type_sequence[::-1]


@dataclass(frozen=True)
class PatternInstance:
    """A concrete node path matching a pattern's type sequence."""

    nodes: tuple[int, ...]
    pattern: MetaPattern

    @property
    def anchor(self) -> int:
        return self.nodes[0]


@dataclass
class MinerConfig:
    n_path: int = 20
    walk_length: int = 40
    k_mp: int = 10
    max_subpath_edges: int = 4
    theta_mp: float = 10.0
    theta_lp: int = 3
    instance_cap: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_path < 1 or self.walk_length < 2 or self.k_mp < 1:
            raise ValueError("MinerConfig needs n_path >= 1, walk_length >= 2, k_mp >= 1")
        if self.theta_mp <= 1 or self.theta_lp < 2 or self.max_subpath_edges < 2:
            raise ValueError("MinerConfig needs theta_mp > 1, theta_lp >= 2, max_subpath_edges >= 2")
        if self.instance_cap < 1:
            raise ValueError("MinerConfig needs instance_cap >= 1")


@dataclass
class WalkSet:
    walks: list[list[int]]


@dataclass
class PatternCatalog:
    """All kept patterns of one graph, grouped on demand."""

    patterns: list[MetaPattern] = field(default_factory=list)

    def for_focal(self, type_id: int) -> list[MetaPattern]:
        return [p for p in self.patterns if p.focal == type_id]

    def by_category(self, category: str) -> list[MetaPattern]:
        return [p for p in self.patterns if p.category == category]

    def max_pattern(self, category: str) -> MetaPattern | None:
        """The category's most frequent pattern; ties go to the
        lexicographically smaller canonical sequence."""
        candidates = self.by_category(category)
        if not candidates:
            return None
        return min(candidates, key=lambda p: (-p.count, p.type_sequence))

    def without_categories(self, dropped: set[str] | frozenset[str]) -> "PatternCatalog":
        return PatternCatalog([p for p in self.patterns if p.category not in dropped])


def canonical_sequence(seq: tuple[int, ...]) -> tuple[int, ...]:
    """A pattern and its reversal are the same pattern; keep the smaller."""
    rev = seq[::-1]
    return seq if seq <= rev else rev


def sample_walks(g: HetGraph, cfg: MinerConfig) -> WalkSet:
    """Start n_path uniform random walks of walk_length edges from every node.

    Per-node RNG streams derived from (seed, node id) make the result
    independent of iteration and thread order. Isolated nodes yield
    single-node walks.
    """
    if g.num_nodes == 0:
        raise ValueError(f"graph '{g.name}' is empty")
    walks: list[list[int]] = []
    for v in range(g.num_nodes):
        rng = random.Random(mix_seed(cfg.seed, _TAG_WALK, v))
        for _ in range(cfg.n_path):
            walk = [v]
            cur = v
            for _ in range(cfg.walk_length):
                nbrs = g.adjacency[cur]
                if len(nbrs) == 0:
                    break
                cur = int(nbrs[rng.randrange(len(nbrs))])
                walk.append(cur)
            walks.append(walk)
    return WalkSet(walks)


def extract_subpaths(
    walks: WalkSet, g: HetGraph, focal: int, max_subpath_edges: int
) -> dict[tuple[int, ...], list[tuple[int, ...]]]:
    """Group every minimal focal-endpoint subpath of the walks by pattern.

    Minimal means both endpoints have the focal type and no interior node
    does; only subpaths of 2..max_subpath_edges edges are kept, and only
    simple ones (a backtracking walk segment like a-b-a is structural
    noise, not a pattern occurrence). Keys are canonical type sequences;
    values keep every occurrence (multiset).
    """
    groups: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
    types = g.node_type_ids
    for walk in walks.walks:
        positions = [i for i, v in enumerate(walk) if types[v] == focal]
        for a, b in zip(positions, positions[1:]):
            length = b - a
            if not 2 <= length <= max_subpath_edges:
                continue
            nodes = tuple(walk[a : b + 1])
            if len(set(nodes)) != len(nodes):
                continue
            seq = tuple(int(types[v]) for v in nodes)
            canon = canonical_sequence(seq)
            if canon != seq:
                nodes = nodes[::-1]
            groups.setdefault(canon, []).append(nodes)
    return groups


def select_meta_patterns(
    groups: dict[tuple[int, ...], list[tuple[int, ...]]], k_mp: int
) -> list[MetaPattern]:
    """Keep the k_mp most frequent patterns; ties break lexicographically."""
    ranked = sorted(groups.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    return [MetaPattern(seq, count=len(instances)) for seq, instances in ranked[:k_mp]]


def relation_ratio(g: HetGraph, t1: str, t2: str) -> float:
    """max(d1, d2) / min(d1, d2) over the two types' average degrees."""
    d1, d2 = average_degree(g, t1), average_degree(g, t2)
    if min(d1, d2) == 0.0:
        raise DegenerateDegreeError(
            f"graph '{g.name}': type pair ({t1}, {t2}) has a zero average degree"
        )
    return max(d1, d2) / min(d1, d2)


def pattern_dispersion(p: MetaPattern, g: HetGraph) -> float:
    """Maximum degree ratio over the pattern's consecutive type pairs.

    A degenerate (zero-degree) pair counts as +inf, i.e. affiliation: a
    type that only ever appears attached to something reads as hub-like.
    """
    best = 0.0
    for ta, tb in zip(p.type_sequence, p.type_sequence[1:]):
        try:
            ratio = relation_ratio(g, g.node_types[ta], g.node_types[tb])
        except DegenerateDegreeError:
            logger.warning(
                "graph '%s': degenerate degree for pair (%s, %s); treating as affiliation",
                g.name,
                g.node_types[ta],
                g.node_types[tb],
            )
            return math.inf
        best = max(best, ratio)
    return best


def categorize(catalog: PatternCatalog, g: HetGraph, cfg: MinerConfig) -> PatternCatalog:
    """Assign exactly one of SAP/WAP/SIP/WIP to every pattern."""
    out = []
    for p in catalog.patterns:
        disp = pattern_dispersion(p, g)
        if disp >= cfg.theta_mp:
            cat = "SAP" if p.is_palindromic else "WAP"
        else:
            cat = "SIP" if p.edge_length <= cfg.theta_lp else "WIP"
        out.append(replace(p, category=cat, dispersion=disp))
    return PatternCatalog(out)


def mine_catalog(g: HetGraph, cfg: MinerConfig) -> PatternCatalog:
    """Full mining pass: walks -> subpaths -> top-K per focal type -> categories."""
    walks = sample_walks(g, cfg)
    patterns: list[MetaPattern] = []
    for focal in range(len(g.node_types)):
        groups = extract_subpaths(walks, g, focal, cfg.max_subpath_edges)
        patterns.extend(select_meta_patterns(groups, cfg.k_mp))
    return categorize(PatternCatalog(patterns), g, cfg)


def match_instances(
    g: HetGraph, v: int, catalog: PatternCatalog, cap: int, seed: int
) -> dict[str, list[PatternInstance]]:
    """Up to `cap` simple paths from v per applicable pattern, by category.

    Pattern-guided depth-first search with neighbor order shuffled by a
    stream derived from (seed, node, pattern index): deterministic per
    seed and independent of scheduling.
    """
    groups: dict[str, list[PatternInstance]] = {c: [] for c in CATEGORIES}
    v_type = int(g.node_type_ids[v])
    for idx, pattern in enumerate(catalog.patterns):
        if pattern.type_sequence[0] != v_type:
            continue
        rng = random.Random(mix_seed(seed, _TAG_MATCH, v, idx))
        found: list[tuple[int, ...]] = []
        _match_dfs(g, pattern.type_sequence, [v], rng, cap, found)
        for nodes in found:
            inst = PatternInstance(nodes=nodes, pattern=pattern)
            assert tuple(int(g.node_type_ids[u]) for u in inst.nodes) == pattern.type_sequence
            groups.setdefault(pattern.category or "?", []).append(inst)
    return groups


def _match_dfs(
    g: HetGraph,
    seq: tuple[int, ...],
    path: list[int],
    rng: random.Random,
    cap: int,
    found: list[tuple[int, ...]],
) -> None:
    if len(found) >= cap:
        return
    depth = len(path)
    if depth == len(seq):
        found.append(tuple(path))
        return
    want = seq[depth]
    candidates = [int(u) for u in g.adjacency[path[-1]] if g.node_type_ids[u] == want and u not in path]
    rng.shuffle(candidates)
    for u in candidates:
        if len(found) >= cap:
            return
        path.append(u)
        _match_dfs(g, seq, path, rng, cap, found)
        path.pop()


# -- export -------------------------------------------------------------------


def catalog_to_json(catalog: PatternCatalog, g: HetGraph) -> list[dict]:
    return [
        {
            "pattern": [g.node_types[t] for t in p.type_sequence],
            "count": p.count,
            "dispersion": p.dispersion if p.dispersion is None or math.isfinite(p.dispersion) else "inf",
            "category": p.category,
        }
        for p in catalog.patterns
    ]


def write_catalog(catalog: PatternCatalog, g: HetGraph, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(catalog_to_json(catalog, g), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
