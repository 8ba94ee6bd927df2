"""Three-level weighting of source data: graph transferability, task
consistency, and node informativeness.

Graph and task scores are softmax weights over concatenated summary
vectors; their inputs arrive *detached* (plain arrays), so gradients from
a score reach only that score's own head. Node scores combine a
tanh-scored node feature with tanh-scored instance aggregates through a
small attention, then squash log-popularity times the attended sum
through a sigmoid; a node's score is the mean over pattern categories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cgfl import numerics as nx
from cgfl._seeds import mix_seed
from cgfl.metapattern import PatternInstance
from cgfl.numerics import Tensor

_TAG_SCORE_INIT = 0x41


@dataclass
class ScoreConfig:
    d: int = 64
    d_in: int = 64
    eta: float = 1e-6
    leaky_slope: float = 0.01
    categories: tuple[str, ...] = ("SAP", "WAP", "SIP", "WIP")

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")


@dataclass
class ScoreParams:
    """Trainable score heads: one row each for graphs/tasks/nodes plus a
    per-category instance head and length-2 attention vector."""

    config: ScoreConfig
    w_graph: Tensor = None
    w_task: Tensor = None
    w_node: Tensor = None
    w_cat: dict[str, Tensor] = field(default_factory=dict)
    a_cat: dict[str, Tensor] = field(default_factory=dict)

    @staticmethod
    def initialize(config: ScoreConfig, seed: int) -> "ScoreParams":
        rng = np.random.default_rng(mix_seed(seed, _TAG_SCORE_INIT))
        p = ScoreParams(config)

        def head(size):
            limit = np.sqrt(6.0 / (size + 1))
            return Tensor(rng.uniform(-limit, limit, size=size), requires_grad=True)

        p.w_graph = head(2 * config.d)
        p.w_task = head(2 * config.d)
        p.w_node = head(config.d_in)
        for cat in config.categories:
            p.w_cat[cat] = head(config.d_in)
            p.a_cat[cat] = head(2)
        return p

    def all_tensors(self) -> dict[str, Tensor]:
        out = {"w_graph": self.w_graph, "w_task": self.w_task, "w_node": self.w_node}
        for cat, t in self.w_cat.items():
            out[f"w_cat:{cat}"] = t
        for cat, t in self.a_cat.items():
            out[f"a_cat:{cat}"] = t
        return out


def graph_representation(mean_view_vectors: list[np.ndarray]) -> np.ndarray:
    """Mean of (detached) mean-view vectors: the graph's pattern-distribution summary."""
    if not mean_view_vectors:
        raise ValueError("cannot summarize a graph from zero node vectors")
    return np.mean(np.stack(mean_view_vectors), axis=0)


def split_representation(sum_view_vectors: list[np.ndarray]) -> np.ndarray:
    """Mean of (detached) sum-view vectors over one support or query set."""
    if not sum_view_vectors:
        raise ValueError("cannot summarize an empty node set")
    return np.mean(np.stack(sum_view_vectors), axis=0)


def graph_scores(
    source_reps: list[np.ndarray], target_rep: np.ndarray, params: ScoreParams
) -> Tensor:
    """Softmax transferability weights over source graphs.

    Inputs are detached summaries; the only trainable dependency is the
    graph head, so backward from the result reaches w_graph alone.
    """
    if not source_reps:
        raise ValueError("graph scores need at least one source graph")
    slope = params.config.leaky_slope
    logits = [
        nx.leaky_relu(nx.dot(params.w_graph, Tensor(np.concatenate([rep, target_rep]))), slope)
        for rep in source_reps
    ]
    return nx.softmax(nx.stack(logits))


def task_scores(task_reps: list[tuple[np.ndarray, np.ndarray]], params: ScoreParams) -> Tensor:
    """Softmax consistency weights over the tasks of one source graph."""
    if not task_reps:
        raise ValueError("task scores need at least one task")
    slope = params.config.leaky_slope
    logits = [
        nx.leaky_relu(nx.dot(params.w_task, Tensor(np.concatenate([spt, qry]))), slope)
        for spt, qry in task_reps
    ]
    return nx.softmax(nx.stack(logits))


def node_score_components(
    x_v: np.ndarray,
    sum_pools: dict[str, np.ndarray | None],
    params: ScoreParams,
) -> dict[str, Tensor]:
    """Per-category informativeness of one labeled node.

    sum_pools maps category -> (n_instances, d_in) matrix of sum-pooled
    instance features (None when the node has no instances of that
    category; such a category scores exactly sigmoid(0) = 0.5).
    """
    cfg = params.config
    s_v = nx.tanh(nx.dot(params.w_node, Tensor(x_v)))
    out: dict[str, Tensor] = {}
    for cat in cfg.categories:
        pools = sum_pools.get(cat)
        if pools is None or len(pools) == 0:
            out[cat] = nx.sigmoid(Tensor(0.0))
            continue
        s_inst = nx.tanh(nx.matmul(Tensor(pools), params.w_cat[cat]))  # (n_i,)
        a0 = nx.take(params.a_cat[cat], 0)
        a1 = nx.take(params.a_cat[cat], 1)
        logits = nx.leaky_relu(a0 * s_v + a1 * s_inst, cfg.leaky_slope)
        eps_weights = nx.softmax(logits)
        attended = nx.dot(eps_weights, s_inst)
        popularity = math.log(len(pools) + cfg.eta)
        out[cat] = nx.sigmoid(popularity * attended)
    return out


def node_score(
    x_v: np.ndarray,
    sum_pools: dict[str, np.ndarray | None],
    params: ScoreParams,
) -> Tensor:
    """Informativeness of one labeled node: mean of the category scores, in (0, 1)."""
    components = list(node_score_components(x_v, sum_pools, params).values())
    total = components[0]
    for t in components[1:]:
        total = total + t
    return total * (1.0 / len(components))


def sum_pool_features(
    groups: dict[str, list[PatternInstance]], features: np.ndarray, categories: tuple[str, ...]
) -> dict[str, np.ndarray | None]:
    """Sum-pooled feature matrix per category for node scoring."""
    out: dict[str, np.ndarray | None] = {}
    for cat in categories:
        insts = groups.get(cat, [])
        out[cat] = np.stack([features[list(i.nodes)].sum(axis=0) for i in insts]) if insts else None
    return out
