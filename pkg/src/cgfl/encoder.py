"""Multi-view node encoder over meta-pattern instances.

Per node, matched pattern instances are organized into three views per
category: *sum* (all instances), *max* (instances of the category's most
frequent pattern), and *mean* (a fixed-size seeded sample per pattern).
Each slice is encoded (mean-pool then a per-category linear map), reduced
by multi-head attention against the node's projected features, and the
results are funneled through category-level and view-level attention into
a single embedding. The intermediate sum- and mean-view vectors are
exposed because the scoring stage consumes them directly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from cgfl import numerics as nx
from cgfl._seeds import mix_seed
from cgfl.hetgraph import HetGraph
from cgfl.metapattern import CATEGORIES, PatternCatalog, PatternInstance, match_instances
from cgfl.numerics import Tensor

VIEWS = ("sum", "max", "mean")

_TAG_MEAN_SAMPLE = 0x31
_TAG_PARAM_INIT = 0x32


@dataclass
class EncoderConfig:
    d_in: int = 64
    d: int = 64
    k_att: int = 4
    d_att: int = 32
    n_mean: int = 5
    leaky_slope: float = 0.01
    categories: tuple[str, ...] = CATEGORIES
    views: tuple[str, ...] = VIEWS

    def __post_init__(self):
        if self.d % self.k_att != 0:
            raise ValueError(f"d={self.d} must be divisible by k_att={self.k_att}")
        if self.n_mean < 1:
            raise ValueError(f"n_mean must be >= 1, got {self.n_mean}")
        if not self.categories or not self.views:
            raise ValueError("at least one category and one view must stay enabled")
        unknown = set(self.categories) - set(CATEGORIES) | set(self.views) - set(VIEWS)
        if unknown:
            raise ValueError(f"unknown categories/views: {sorted(unknown)}")

    @property
    def d_head(self) -> int:
        return self.d // self.k_att


@dataclass
class ViewBundle:
    """Instance slices per (view, category) for one node."""

    slices: dict[tuple[str, str], list[PatternInstance]]

    def slice(self, view: str, category: str) -> list[PatternInstance]:
        return self.slices.get((view, category), [])


def build_views(
    groups: dict[str, list[PatternInstance]],
    catalog: PatternCatalog,
    n_mean: int,
    seed: int,
    node: int,
    categories: tuple[str, ...] = CATEGORIES,
) -> ViewBundle:
    """Assemble the sum/max/mean instance slices from matched groups.

    max keeps instances of the category's globally most frequent pattern;
    mean samples up to n_mean instances per pattern, seed-deterministic.
    """
    slices: dict[tuple[str, str], list[PatternInstance]] = {}
    for cat in categories:
        insts = list(groups.get(cat, []))
        slices[("sum", cat)] = insts
        top = catalog.max_pattern(cat)
        slices[("max", cat)] = (
            [i for i in insts if top is not None and i.pattern.type_sequence == top.type_sequence]
        )
        rng = random.Random(mix_seed(seed, _TAG_MEAN_SAMPLE, node, CATEGORIES.index(cat)))
        mean_insts: list[PatternInstance] = []
        for pattern in catalog.by_category(cat):
            of_pattern = [i for i in insts if i.pattern.type_sequence == pattern.type_sequence]
            if len(of_pattern) <= n_mean:
                mean_insts.extend(of_pattern)
            else:
                mean_insts.extend(rng.sample(of_pattern, n_mean))
        slices[("mean", cat)] = mean_insts
    return ViewBundle(slices)


@dataclass
class EncoderParams:
    """All trainable tensors of the encoder, keyed for the optimizer."""

    config: EncoderConfig
    enc_w: dict[str, Tensor] = field(default_factory=dict)
    enc_b: dict[str, Tensor] = field(default_factory=dict)
    att_x: dict[tuple[str, str], Tensor] = field(default_factory=dict)
    att_h: dict[tuple[str, str], Tensor] = field(default_factory=dict)
    null: dict[tuple[str, str], Tensor] = field(default_factory=dict)
    level_w: dict[str, Tensor] = field(default_factory=dict)
    level_b: dict[str, Tensor] = field(default_factory=dict)
    level_a: dict[str, Tensor] = field(default_factory=dict)

    @staticmethod
    def initialize(config: EncoderConfig, seed: int) -> "EncoderParams":
        rng = np.random.default_rng(mix_seed(seed, _TAG_PARAM_INIT))
        p = EncoderParams(config)

        def glorot(*shape):
            fan_in = shape[0] if len(shape) == 1 else shape[0]
            fan_out = 1 if len(shape) == 1 else shape[1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)

        # biases get a small random init rather than zeros: with zero biases
        # a rectifier-zeroed category vector lands the attention logit
        # exactly on its kink, which is non-differentiable
        for cat in config.categories:
            p.enc_w[cat] = glorot(config.d_in, config.d_head)
            p.enc_b[cat] = Tensor(rng.normal(scale=0.05, size=config.d_head), requires_grad=True)
        for view in VIEWS:
            for cat in config.categories:
                full = rng.uniform(
                    -np.sqrt(6.0 / (config.d_in + config.d_head + 1)),
                    np.sqrt(6.0 / (config.d_in + config.d_head + 1)),
                    size=(config.k_att, config.d_in + config.d_head),
                )
                p.att_x[(view, cat)] = Tensor(full[:, : config.d_in].copy(), requires_grad=True)
                p.att_h[(view, cat)] = Tensor(full[:, config.d_in :].copy(), requires_grad=True)
                # small random init keeps downstream rectifier logits off
                # their kink (exact zeros break finite-difference checks)
                p.null[(view, cat)] = Tensor(rng.normal(scale=0.1, size=config.d), requires_grad=True)
        for level in list(VIEWS) + ["view"]:
            p.level_w[level] = glorot(config.d_att, config.d)
            p.level_b[level] = Tensor(rng.normal(scale=0.05, size=config.d_att), requires_grad=True)
            p.level_a[level] = glorot(config.d_att)
        return p

    def all_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for cat, t in self.enc_w.items():
            out[f"enc_w:{cat}"] = t
        for cat, t in self.enc_b.items():
            out[f"enc_b:{cat}"] = t
        for (view, cat), t in self.att_x.items():
            out[f"att_x:{view}:{cat}"] = t
        for (view, cat), t in self.att_h.items():
            out[f"att_h:{view}:{cat}"] = t
        for (view, cat), t in self.null.items():
            out[f"null:{view}:{cat}"] = t
        for level, t in self.level_w.items():
            out[f"level_w:{level}"] = t
        for level, t in self.level_b.items():
            out[f"level_b:{level}"] = t
        for level, t in self.level_a.items():
            out[f"level_a:{level}"] = t
        return out


def encode_instance(
    inst: PatternInstance, features: np.ndarray, params: EncoderParams, category: str
) -> Tensor:
    """One instance to a d_head vector: mean-pool node features, then the
    category's linear map."""
    if len(inst.nodes) == 0:
        raise ValueError("cannot encode an empty instance")
    pooled = features[list(inst.nodes)].mean(axis=0)
    return nx.matmul(Tensor(pooled), params.enc_w[category]) + params.enc_b[category]


def aggregate_instances(
    x_v: np.ndarray,
    encoded: Tensor,
    att_x: Tensor,
    att_h: Tensor,
    slope: float,
) -> Tensor:
    """Multi-head attention pooling of encoded instances into one d vector.

    Head k scores instance i with a_k . [x_v || h_i] (split into the two
    att halves), softmax-normalizes over instances, and emits
    relu(sum_i alpha_ik h_i); head outputs are concatenated.
    """
    base = nx.matmul(att_x, Tensor(x_v))  # (k_att,)
    logits = nx.leaky_relu(nx.matmul(encoded, nx.transpose(att_h)) + base, slope)  # (n_i, k_att)
    alphas = nx.softmax(logits, axis=0)
    heads = nx.relu(nx.matmul(nx.transpose(alphas), encoded))  # (k_att, d_head)
    return nx.reshape(heads, (heads.shape[0] * heads.shape[1],))


def attention_mix(vectors: dict[str, Tensor], keys: tuple[str, ...], w: Tensor, b: Tensor, a: Tensor) -> Tensor:
    """Softmax-attention combination of named d-vectors.

    Logit per key: relu((W h + b) . a); output: sum of softmax-weighted
    vectors. Used identically at the category level and the view level.
    """
    logits = nx.stack([nx.relu(nx.dot(nx.matmul(w, vectors[k]) + b, a)) for k in keys])
    weights = nx.softmax(logits)
    return nx.matmul(weights, nx.stack([vectors[k] for k in keys]))


@dataclass
class NodeEmbedding:
    h: Tensor
    view_vectors: dict[str, Tensor]

    @property
    def h_sum(self) -> Tensor:
        return self.view_vectors["sum"]

    @property
    def h_mean(self) -> Tensor:
        return self.view_vectors["mean"]


@dataclass
class _NodePrep:
    groups: dict[str, list[PatternInstance]]
    mean_pools: dict[tuple[str, str], np.ndarray | None]
    sum_pools: dict[str, np.ndarray | None]


class MultiViewEncoder:
    """Embedding pipeline for one graph: matching, views, attention stack.

    Instance matching and feature pooling depend only on (graph, catalog,
    seed), so they are cached per node; the tensor forward pass is rebuilt
    on every call because parameters evolve between optimizer steps.
    """

    def __init__(
        self,
        graph: HetGraph,
        catalog: PatternCatalog,
        features: np.ndarray,
        params: EncoderParams,
        config: EncoderConfig,
        seed: int,
        instance_cap: int = 20,
    ):
        if features.shape != (graph.num_nodes, config.d_in):
            raise ValueError(
                f"features shape {features.shape} does not match (num_nodes, d_in) = "
                f"({graph.num_nodes}, {config.d_in})"
            )
        self.graph = graph
        self.catalog = catalog.without_categories(set(CATEGORIES) - set(config.categories))
        self.features = features
        self.params = params
        self.config = config
        self.seed = seed
        self.instance_cap = instance_cap
        self._prep_cache: dict[int, _NodePrep] = {}

    def node_prep(self, v: int) -> _NodePrep:
        prep = self._prep_cache.get(v)
        if prep is None:
            groups = match_instances(self.graph, v, self.catalog, self.instance_cap, self.seed)
            bundle = build_views(
                groups, self.catalog, self.config.n_mean, self.seed, v, self.config.categories
            )
            mean_pools: dict[tuple[str, str], np.ndarray | None] = {}
            for view in VIEWS:
                for cat in self.config.categories:
                    insts = bundle.slice(view, cat)
                    mean_pools[(view, cat)] = (
                        np.stack([self.features[list(i.nodes)].mean(axis=0) for i in insts])
                        if insts
                        else None
                    )
            sum_pools = {
                cat: (
                    np.stack([self.features[list(i.nodes)].sum(axis=0) for i in groups.get(cat, [])])
                    if groups.get(cat)
                    else None
                )
                for cat in self.config.categories
            }
            prep = _NodePrep(groups, mean_pools, sum_pools)
            self._prep_cache[v] = prep
        return prep

    def instance_groups(self, v: int) -> dict[str, list[PatternInstance]]:
        return self.node_prep(v).groups

    def sum_pools(self, v: int) -> dict[str, np.ndarray | None]:
        return self.node_prep(v).sum_pools

    def embed(self, v: int) -> NodeEmbedding:
        """Full pipeline for one node; isolated nodes ride on null vectors."""
        prep = self.node_prep(v)
        cfg = self.config
        p = self.params
        x_v = self.features[v]
        view_vectors: dict[str, Tensor] = {}
        for view in VIEWS:
            cat_vectors: dict[str, Tensor] = {}
            for cat in cfg.categories:
                pooled = prep.mean_pools[(view, cat)]
                if pooled is None:
                    cat_vectors[cat] = p.null[(view, cat)]
                else:
                    encoded = nx.matmul(Tensor(pooled), p.enc_w[cat]) + p.enc_b[cat]
                    cat_vectors[cat] = aggregate_instances(
                        x_v, encoded, p.att_x[(view, cat)], p.att_h[(view, cat)], cfg.leaky_slope
                    )
            view_vectors[view] = attention_mix(
                cat_vectors, cfg.categories, p.level_w[view], p.level_b[view], p.level_a[view]
            )
        h = attention_mix(view_vectors, cfg.views, p.level_w["view"], p.level_b["view"], p.level_a["view"])
        out = NodeEmbedding(h=h, view_vectors=view_vectors)
        assert out.h.shape == (cfg.d,)
        return out
