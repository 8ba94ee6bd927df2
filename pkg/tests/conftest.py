"""Shared fixtures: hand-built toy graphs used across test modules."""

import numpy as np

from cgfl.hetgraph import HetGraph


def make_graph(name, nodes, edges, classes=(), role="source"):
    """Build a HetGraph from literal rows.

    nodes: list of (type_name, label_or_empty, feature_list)
    edges: list of (u_index, v_index, edge_type_name)
    """
    classes = list(classes)
    type_names = [t for t, _, _ in nodes]
    node_types = sorted(set(type_names))
    type_index = {t: i for i, t in enumerate(node_types)}
    edge_types = sorted({e for _, _, e in edges}) or ["edge"]
    etype_index = {t: i for i, t in enumerate(edge_types)}
    labels = np.array([classes.index(lbl) if lbl else -1 for _, lbl, _ in nodes], dtype=np.int64)
    edge_arr = (
        np.array([(u, v, etype_index[t]) for u, v, t in edges], dtype=np.int64)
        if edges
        else np.zeros((0, 3), dtype=np.int64)
    )
    return HetGraph(
        name=name,
        role=role,
        node_types=node_types,
        edge_types=edge_types,
        node_type_ids=np.array([type_index[t] for t in type_names], dtype=np.int64),
        raw_features=[np.array(f, dtype=np.float64) for _, _, f in nodes],
        labels=labels,
        classes=classes,
        edges=edge_arr,
        original_ids=[f"n{i}" for i in range(len(nodes))],
    )


def star_graph(n_leaves=8, center_type="A", leaf_type="B"):
    """One center of center_type joined to n_leaves leaves of leaf_type."""
    nodes = [(center_type, "", [1.0])] + [(leaf_type, "", [1.0]) for _ in range(n_leaves)]
    edges = [(0, i + 1, "spoke") for i in range(n_leaves)]
    return make_graph("star", nodes, edges)
