"""Heterogeneous-graph data model, TSV ingestion, feature projection, and a
synthetic cross-heterogeneity benchmark generator.

A heterogeneous graph carries typed nodes with raw per-type feature vectors
and optional class labels, plus typed undirected edges. Graphs from
different heterogeneities share no node or edge types, so raw features are
aligned by per-type z-scoring followed by a fixed seeded random projection
into one shared space; nothing about the alignment is trained, which is
what allows a never-seen target heterogeneity at test time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cgfl._seeds import mix_seed, string_seed


class GraphFormatError(ValueError):
    """Malformed graph files; message carries file and line."""


class SyntheticSpecError(ValueError):
    """Synthetic spec whose constraints cannot be realized."""


ROLE_SOURCE = "source"
ROLE_TARGET = "target"

_TAG_PROJECTION = 0x11
_TAG_SYNTH = 0x12


@dataclass
class HetGraph:
    """Typed nodes and edges with dense 0-based ids.

    node_type_ids[v] indexes into node_types; labels[v] indexes into
    classes, -1 meaning unlabeled. Edges are undirected for all degree,
    walk, and matching purposes. raw_features is ragged across types but
    uniform within a type.
    """

    name: str
    role: str
    node_types: list[str]
    edge_types: list[str]
    node_type_ids: np.ndarray
    raw_features: list[np.ndarray]
    labels: np.ndarray
    classes: list[str]
    edges: np.ndarray  # (m, 3) rows of (src, dst, edge_type_id)
    original_ids: list[str]
    adjacency: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.node_types) + len(self.edge_types) <= 2:
            raise GraphFormatError(
                f"graph '{self.name}': a heterogeneous graph needs |node types| + |edge types| > 2, "
                f"got {len(self.node_types)} + {len(self.edge_types)}"
            )
        if not self.adjacency:
            self.adjacency = _build_adjacency(self.num_nodes, self.edges)
        for tid in range(len(self.node_types)):
            dims = {f.shape[0] for f, t in zip(self.raw_features, self.node_type_ids) if t == tid}
            if len(dims) > 1:
                raise GraphFormatError(
                    f"graph '{self.name}': ragged feature dimensions {sorted(dims)} within type "
                    f"'{self.node_types[tid]}'"
                )

    @property
    def num_nodes(self) -> int:
        return len(self.node_type_ids)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def type_id(self, name: str) -> int:
        try:
            return self.node_types.index(name)
        except ValueError:
            raise ValueError(f"graph '{self.name}' has no node type '{name}'") from None

    def nodes_of_type(self, type_id: int) -> np.ndarray:
        return np.flatnonzero(self.node_type_ids == type_id)

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)

    def nodes_by_class(self) -> dict[int, np.ndarray]:
        return {c: np.flatnonzero(self.labels == c) for c in range(len(self.classes))}

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def feature_dim(self, type_id: int) -> int:
        members = self.nodes_of_type(type_id)
        return int(self.raw_features[members[0]].shape[0]) if len(members) else 0

    def heterogeneity(self) -> tuple[frozenset[str], frozenset[str]]:
        return frozenset(self.node_types), frozenset(self.edge_types)


def _build_adjacency(n: int, edges: np.ndarray) -> list[np.ndarray]:
    lists: list[list[int]] = [[] for _ in range(n)]
    for src, dst, _ in edges:
        lists[src].append(int(dst))
        lists[dst].append(int(src))
    return [np.array(sorted(nbrs), dtype=np.int64) for nbrs in lists]


def average_degree(g: HetGraph, type_name: str) -> float:
    """Mean undirected degree over the nodes of one type (0.0 if all isolated)."""
    tid = g.type_id(type_name)
    members = g.nodes_of_type(tid)
    if len(members) == 0:
        raise ValueError(f"graph '{g.name}': node type '{type_name}' has no nodes")
    return float(sum(g.degree(int(v)) for v in members)) / len(members)


def assert_disjoint_heterogeneity(sources: list[HetGraph], target: HetGraph) -> None:
    """Every source must share no node types and no edge types with the target."""
    a_t, r_t = target.heterogeneity()
    for g in sources:
        a_i, r_i = g.heterogeneity()
        shared_nodes = sorted(a_i & a_t)
        shared_edges = sorted(r_i & r_t)
        if shared_nodes or shared_edges:
            raise ValueError(
                f"cross-heterogeneity violated between '{g.name}' and '{target.name}': "
                f"shared node types {shared_nodes}, shared edge types {shared_edges}"
            )


# -- file formats ----------------------------------------------------------------

_NODES_HEADER = "node_id\tnode_type\tlabel\tfeatures"
_EDGES_HEADER = "src_id\tdst_id\tedge_type"


def load_graph(manifest_path: str | Path) -> HetGraph:
    """Read a manifest plus its nodes/edges TSV files into a validated graph."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise GraphFormatError(f"{manifest_path}: invalid JSON manifest: {e}") from e
    for key in ("name", "role", "nodes", "edges", "classes"):
        if key not in manifest:
            raise GraphFormatError(f"{manifest_path}: manifest missing key '{key}'")
    if manifest["role"] not in (ROLE_SOURCE, ROLE_TARGET):
        raise GraphFormatError(f"{manifest_path}: role must be 'source' or 'target', got {manifest['role']!r}")
    classes = list(manifest["classes"])
    base = manifest_path.parent
    nodes_path = base / manifest["nodes"]
    edges_path = base / manifest["edges"]

    original_ids: list[str] = []
    id_index: dict[str, int] = {}
    type_names: list[str] = []
    label_names: list[str] = []
    feature_rows: list[np.ndarray] = []

    lines = _read_tsv(nodes_path, expected_header=_NODES_HEADER, n_cols=4)
    for lineno, cols in lines:
        node_id, type_name, label, feats = cols
        if node_id in id_index:
            raise GraphFormatError(f"{nodes_path}:{lineno}: duplicated node id '{node_id}'")
        if label and label not in classes:
            raise GraphFormatError(
                f"{nodes_path}:{lineno}: label '{label}' not in declared class set {classes}"
            )
        try:
            vec = np.array([float(x) for x in feats.split(",")], dtype=np.float64) if feats else np.zeros(0)
        except ValueError:
            raise GraphFormatError(f"{nodes_path}:{lineno}: malformed feature vector '{feats}'") from None
        if vec.size == 0:
            raise GraphFormatError(f"{nodes_path}:{lineno}: node '{node_id}' has an empty feature vector")
        id_index[node_id] = len(original_ids)
        original_ids.append(node_id)
        type_names.append(type_name)
        label_names.append(label)
        feature_rows.append(vec)

    if not original_ids:
        raise GraphFormatError(f"{nodes_path}: no nodes")

    node_types = sorted(set(type_names))
    type_index = {t: i for i, t in enumerate(node_types)}
    node_type_ids = np.array([type_index[t] for t in type_names], dtype=np.int64)
    class_index = {c: i for i, c in enumerate(classes)}
    labels = np.array([class_index[l] if l else -1 for l in label_names], dtype=np.int64)

    edge_rows: list[tuple[int, int, str]] = []
    for lineno, cols in _read_tsv(edges_path, expected_header=_EDGES_HEADER, n_cols=3):
        src, dst, etype = cols
        for endpoint in (src, dst):
            if endpoint not in id_index:
                raise GraphFormatError(f"{edges_path}:{lineno}: edge endpoint '{endpoint}' is not a known node id")
        edge_rows.append((id_index[src], id_index[dst], etype))

    edge_types = sorted({e[2] for e in edge_rows})
    etype_index = {t: i for i, t in enumerate(edge_types)}
    edges = (
        np.array([(s, d, etype_index[t]) for s, d, t in edge_rows], dtype=np.int64)
        if edge_rows
        else np.zeros((0, 3), dtype=np.int64)
    )

    return HetGraph(
        name=str(manifest["name"]),
        role=str(manifest["role"]),
        node_types=node_types,
        edge_types=edge_types,
        node_type_ids=node_type_ids,
        raw_features=feature_rows,
        labels=labels,
        classes=classes,
        edges=edges,
        original_ids=original_ids,
    )


def _read_tsv(path: Path, expected_header: str, n_cols: int):
    if not path.exists():
        raise GraphFormatError(f"{path}: file not found")
    rows = []
    with path.open(encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != expected_header:
            raise GraphFormatError(f"{path}:1: expected header '{expected_header}', got '{header}'")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != n_cols:
                raise GraphFormatError(f"{path}:{lineno}: expected {n_cols} tab-separated fields, got {len(cols)}")
            rows.append((lineno, cols))
    return rows


def save_graph(g: HetGraph, out_dir: str | Path) -> Path:
    """Write manifest + TSV files; inverse of load_graph on the data model."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nodes_name = f"{g.name}_nodes.tsv"
    edges_name = f"{g.name}_edges.tsv"

    with (out_dir / nodes_name).open("w", encoding="utf-8") as fh:
        fh.write(_NODES_HEADER + "\n")
        for v in range(g.num_nodes):
            label = g.classes[g.labels[v]] if g.labels[v] >= 0 else ""
            feats = ",".join(repr(float(x)) for x in g.raw_features[v])
            fh.write(f"{g.original_ids[v]}\t{g.node_types[g.node_type_ids[v]]}\t{label}\t{feats}\n")

    with (out_dir / edges_name).open("w", encoding="utf-8") as fh:
        fh.write(_EDGES_HEADER + "\n")
        for src, dst, et in g.edges:
            fh.write(f"{g.original_ids[src]}\t{g.original_ids[dst]}\t{g.edge_types[et]}\n")

    manifest = {
        "name": g.name,
        "role": g.role,
        "nodes": nodes_name,
        "edges": edges_name,
        "classes": g.classes,
    }
    manifest_path = out_dir / f"{g.name}_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


# -- feature projection ------------------------------------------------------------


@dataclass
class FeatureProjector:
    """Training-free alignment of per-type raw features into one d_in space.

    The projection matrix for a type is a pure function of (seed, type
    name, raw dim): columns of a seeded Gaussian matrix normalized to unit
    norm. identity=True skips normalization and projects with the identity
    (requires raw_dim == d_in); intended for tests and manual oracles.
    """

    seed: int
    d_in: int = 64
    identity: bool = False

    def matrix(self, type_name: str, raw_dim: int) -> np.ndarray:
        if self.identity:
            if raw_dim != self.d_in:
                raise ValueError(f"identity projection needs raw_dim == d_in, got {raw_dim} != {self.d_in}")
            return np.eye(raw_dim)
        rng = np.random.default_rng(mix_seed(self.seed, _TAG_PROJECTION, string_seed(type_name), raw_dim))
        mat = rng.normal(size=(raw_dim, self.d_in))
        return mat / np.linalg.norm(mat, axis=0, keepdims=True)

    def project(self, g: HetGraph) -> np.ndarray:
        """(num_nodes, d_in) matrix: per-type z-score then fixed projection."""
        out = np.zeros((g.num_nodes, self.d_in))
        for tid in range(len(g.node_types)):
            members = g.nodes_of_type(tid)
            if len(members) == 0:
                continue
            raw = np.stack([g.raw_features[int(v)] for v in members])
            if not self.identity:
                mean = raw.mean(axis=0)
                std = raw.std(axis=0)
                std[std < 1e-12] = 1.0
                raw = (raw - mean) / std
            proj = self.matrix(g.node_types[tid], raw.shape[1])
            out[members] = raw @ proj
        return out


# -- synthetic benchmark ----------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Recipe for one community-structured heterogeneous graph.

    Members affiliate with their community hub (an affiliation relation:
    hub degree dwarfs member degree), and interact through bridge nodes
    (an interaction relation: comparable degrees). Labels follow the
    member's community unless label_rule='random', which breaks the
    label-structure link entirely (a pure-noise source).
    """

    name: str
    role: str = ROLE_SOURCE
    type_prefix: str = ""
    n_communities: int = 2
    members_per_community: int = 40
    hubs_per_community: int = 1
    bridges_per_community: int = 10
    member_bridge_degree: int = 2
    bridge_peer_degree: int = 2
    hub_bridge_edges: int = 2
    cross_community_fraction: float = 0.05
    label_rule: str = "community"  # or "random"
    label_noise: float = 0.0
    feature_noise: float = 0.3
    member_dim: int = 16
    hub_dim: int = 12
    bridge_dim: int = 14
    seed: int = 0

    def __post_init__(self):
        if self.n_communities < 2:
            raise SyntheticSpecError("need at least 2 communities to plant classes")
        if min(self.members_per_community, self.hubs_per_community, self.bridges_per_community) < 1:
            raise SyntheticSpecError("per-community node counts must be >= 1")
        if self.label_rule not in ("community", "random"):
            raise SyntheticSpecError(f"unknown label_rule '{self.label_rule}'")
        if not 0.0 <= self.label_noise <= 1.0 or not 0.0 <= self.cross_community_fraction <= 1.0:
            raise SyntheticSpecError("label_noise and cross_community_fraction must lie in [0, 1]")
        # Affiliation needs hub degree >= 10x member degree; check the
        # expected degrees up front so impossible specs fail fast.
        member_deg = self.hubs_per_community + self.member_bridge_degree
        hub_deg = self.members_per_community + self.hub_bridge_edges
        if hub_deg < 10 * member_deg:
            raise SyntheticSpecError(
                f"spec cannot realize an affiliation relation: expected hub degree {hub_deg} "
                f"< 10 x expected member degree {member_deg}"
            )

    @property
    def member_type(self) -> str:
        return f"{self.type_prefix}member"

    @property
    def hub_type(self) -> str:
        return f"{self.type_prefix}hub"

    @property
    def bridge_type(self) -> str:
        return f"{self.type_prefix}bridge"


def generate_synthetic(spec: SyntheticSpec) -> HetGraph:
    """Deterministically realize a spec; validates the planted relations."""
    rng = np.random.default_rng(mix_seed(spec.seed, _TAG_SYNTH, string_seed(spec.name)))
    classes = [f"{spec.type_prefix}class{i}" for i in range(spec.n_communities)]

    original_ids: list[str] = []
    type_names: list[str] = []
    label_names: list[str] = []
    features: list[np.ndarray] = []
    community: list[int] = []

    centroids = {
        kind: rng.normal(size=(spec.n_communities, dim)) * 2.0
        for kind, dim in (("member", spec.member_dim), ("hub", spec.hub_dim), ("bridge", spec.bridge_dim))
    }

    def add_node(kind: str, type_name: str, comm: int, label: str) -> int:
        idx = len(original_ids)
        original_ids.append(f"{kind[0]}{idx}")
        type_names.append(type_name)
        label_names.append(label)
        dim = {"member": spec.member_dim, "hub": spec.hub_dim, "bridge": spec.bridge_dim}[kind]
        features.append(centroids[kind][comm] + spec.feature_noise * rng.normal(size=dim))
        community.append(comm)
        return idx

    members: list[list[int]] = []
    hubs: list[list[int]] = []
    bridges: list[list[int]] = []
    for c in range(spec.n_communities):
        members.append([])
        for _ in range(spec.members_per_community):
            if spec.label_rule == "random":
                label = classes[rng.integers(spec.n_communities)]
            elif spec.label_noise > 0 and rng.random() < spec.label_noise:
                label = classes[rng.integers(spec.n_communities)]
            else:
                label = classes[c]
            members[c].append(add_node("member", spec.member_type, c, label))
        hubs.append([add_node("hub", spec.hub_type, c, "") for _ in range(spec.hubs_per_community)])
        bridges.append([add_node("bridge", spec.bridge_type, c, "") for _ in range(spec.bridges_per_community)])

    affil_t = f"{spec.type_prefix}affiliation"
    link_t = f"{spec.type_prefix}link"
    peer_t = f"{spec.type_prefix}peer"
    serve_t = f"{spec.type_prefix}service"
    edge_rows: list[tuple[int, int, str]] = []
    seen_pairs: set[tuple[int, int]] = set()

    def add_edge(u: int, v: int, etype: str) -> bool:
        key = (min(u, v), max(u, v))
        if u == v or key in seen_pairs:
            return False
        seen_pairs.add(key)
        edge_rows.append((u, v, etype))
        return True

    def pick_community(own: int) -> int:
        if spec.n_communities > 1 and rng.random() < spec.cross_community_fraction:
            others = [c for c in range(spec.n_communities) if c != own]
            return others[rng.integers(len(others))]
        return own

    for c in range(spec.n_communities):
        for m in members[c]:
            for h in hubs[c]:
                add_edge(m, h, affil_t)
            for _ in range(spec.member_bridge_degree):
                pool = bridges[pick_community(c)]
                add_edge(m, pool[rng.integers(len(pool))], link_t)
        for h in hubs[c]:
            for _ in range(spec.hub_bridge_edges):
                add_edge(h, bridges[c][rng.integers(len(bridges[c]))], serve_t)
        for b in bridges[c]:
            for _ in range(spec.bridge_peer_degree):
                pool = [x for x in bridges[pick_community(c)] if x != b]
                if pool:
                    add_edge(b, pool[rng.integers(len(pool))], peer_t)

    edge_types = sorted({e[2] for e in edge_rows})
    etype_index = {t: i for i, t in enumerate(edge_types)}
    node_types = sorted(set(type_names))
    type_index = {t: i for i, t in enumerate(node_types)}
    class_index = {cname: i for i, cname in enumerate(classes)}

    g = HetGraph(
        name=spec.name,
        role=spec.role,
        node_types=node_types,
        edge_types=edge_types,
        node_type_ids=np.array([type_index[t] for t in type_names], dtype=np.int64),
        raw_features=features,
        labels=np.array([class_index[l] if l else -1 for l in label_names], dtype=np.int64),
        classes=classes,
        edges=np.array([(s, d, etype_index[t]) for s, d, t in edge_rows], dtype=np.int64),
        original_ids=original_ids,
    )

    ratio = _degree_ratio(g, spec.member_type, spec.hub_type)
    if ratio < 10.0:
        raise SyntheticSpecError(
            f"generated graph '{spec.name}' has member/hub degree ratio {ratio:.2f} < 10; "
            "raise members_per_community or lower member_bridge_degree"
        )
    interaction = _degree_ratio(g, spec.member_type, spec.bridge_type)
    if interaction >= 10.0:
        raise SyntheticSpecError(
            f"generated graph '{spec.name}' has member/bridge degree ratio {interaction:.2f} >= 10; "
            "no interaction relation was realized"
        )
    return g


def _degree_ratio(g: HetGraph, t1: str, t2: str) -> float:
    d1, d2 = average_degree(g, t1), average_degree(g, t2)
    if min(d1, d2) == 0.0:
        return math.inf
    return max(d1, d2) / min(d1, d2)
