"""Graph/task/node score submodules: normalization, closed forms, stop-gradients."""

import math

import numpy as np
import pytest

from cgfl import numerics as nx
from cgfl.encoder import EncoderConfig, EncoderParams, MultiViewEncoder
from cgfl.hetgraph import FeatureProjector
from cgfl.metapattern import MinerConfig, mine_catalog
from cgfl.numerics import Tensor, backward
from cgfl.scoring import (
    ScoreConfig,
    ScoreParams,
    graph_representation,
    graph_scores,
    node_score,
    split_representation,
    task_scores,
)

from conftest import make_graph


def params_for(d=4, d_in=3, seed=0, **kw):
    cfg = ScoreConfig(d=d, d_in=d_in, **kw)
    return ScoreParams.initialize(cfg, seed=seed)


# -- graph scores ------------------------------------------------------------------


def test_graph_scores_identical_sources_are_uniform():
    p = params_for()
    rep = np.array([1.0, -1.0, 0.5, 2.0])
    target = np.array([0.1, 0.2, 0.3, 0.4])
    gs = graph_scores([rep, rep, rep], target, p)
    np.testing.assert_allclose(gs.data, [1 / 3] * 3, atol=1e-12)


def test_graph_scores_single_source_is_one():
    p = params_for()
    gs = graph_scores([np.ones(4)], np.zeros(4), p)
    np.testing.assert_allclose(gs.data, [1.0], atol=1e-15)


def test_graph_scores_closed_form_logits():
    # force the logits to (0, ln 3) by hand-picking the head and summaries
    p = params_for()
    p.w_graph = Tensor(np.array([1.0, 0, 0, 0, 0, 0, 0, 0]), requires_grad=True)
    target = np.zeros(4)
    g1 = np.array([0.0, 9, 9, 9])  # logit leaky(0) = 0
    g2 = np.array([math.log(3.0), 9, 9, 9])  # logit ln 3 > 0, leaky is identity
    gs = graph_scores([g1, g2], target, p)
    np.testing.assert_allclose(gs.data, [0.25, 0.75], atol=1e-12)


def test_graph_scores_require_a_source():
    with pytest.raises(ValueError):
        graph_scores([], np.zeros(4), params_for())


def test_graph_scores_sum_to_one_and_positive():
    rng = np.random.default_rng(0)
    p = params_for()
    gs = graph_scores([rng.normal(size=4) for _ in range(5)], rng.normal(size=4), p)
    assert abs(gs.data.sum() - 1.0) < 1e-12
    assert np.all(gs.data > 0)


# -- task scores --------------------------------------------------------------------


def test_task_scores_single_task_is_one():
    p = params_for()
    ts = task_scores([(np.ones(4), np.zeros(4))], p)
    np.testing.assert_allclose(ts.data, [1.0], atol=1e-15)


def test_task_scores_identical_tasks_split_evenly():
    p = params_for()
    rep = (np.array([1.0, 2, 3, 4]), np.array([4.0, 3, 2, 1]))
    ts = task_scores([rep, rep], p)
    np.testing.assert_allclose(ts.data, [0.5, 0.5], atol=1e-12)


def test_support_equals_query_gives_equal_representations():
    vecs = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
    np.testing.assert_array_equal(split_representation(vecs), split_representation(list(vecs)))
    np.testing.assert_array_equal(split_representation(vecs), np.array([2.0, 3.0]))


def test_task_scores_require_a_task():
    with pytest.raises(ValueError):
        task_scores([], params_for())


def test_graph_representation_is_mean():
    vecs = [np.zeros(3), np.ones(3) * 3.0]
    np.testing.assert_array_equal(graph_representation(vecs), np.ones(3) * 1.5)
    with pytest.raises(ValueError):
        graph_representation([])


# -- node scores --------------------------------------------------------------------


def test_node_score_empty_category_contributes_exactly_half():
    p = params_for()
    pools = {c: None for c in p.config.categories}
    ns = node_score(np.zeros(3), pools, p)
    assert ns.item() == 0.5  # all four categories empty -> mean of four 0.5s


def test_node_score_popularity_closed_form():
    # three instances, saturated instance scores s = 1.0 exactly:
    # score = sigmoid(log(3 + eta) * 1) ~= 0.75
    p = params_for()
    for cat in p.config.categories:
        p.w_cat[cat] = Tensor(np.full(3, 1e3), requires_grad=True)
    pools = {c: None for c in p.config.categories}
    pools["SIP"] = np.ones((3, 3))  # tanh(1e3 * 3) == 1.0 in float64
    ns = node_score(np.zeros(3), pools, p)
    expected_sip = 1.0 / (1.0 + math.exp(-math.log(3.0 + p.config.eta)))
    assert abs(expected_sip - 0.75) < 1e-6
    expected = (3 * 0.5 + expected_sip) / 4.0
    assert abs(ns.item() - expected) < 1e-9


def test_node_score_in_unit_interval():
    rng = np.random.default_rng(1)
    p = params_for()
    for _ in range(25):
        pools = {
            c: (rng.normal(size=(rng.integers(1, 6), 3)) if rng.random() < 0.8 else None)
            for c in p.config.categories
        }
        ns = node_score(rng.normal(size=3), pools, p)
        assert 0.0 < ns.item() < 1.0


def test_node_score_monotone_in_popularity_for_fixed_positive_scores():
    # identical instances make the attended sum constant, so the score
    # grows with instance count through the log factor alone
    p = params_for()
    for cat in p.config.categories:
        p.w_cat[cat] = Tensor(np.array([5.0, 0.0, 0.0]), requires_grad=True)
    base_row = np.array([1.0, 0.0, 0.0])
    values = []
    for n in (1, 2, 4, 8):
        pools = {c: None for c in p.config.categories}
        pools["WAP"] = np.tile(base_row, (n, 1))
        values.append(node_score(np.zeros(3), pools, p).item())
    assert values == sorted(values)
    assert values[0] < values[-1]


def test_node_score_gradients_reach_score_heads():
    rng = np.random.default_rng(2)
    p = params_for()
    pools = {c: rng.normal(size=(3, 3)) for c in p.config.categories}
    ns = node_score(rng.normal(size=3), pools, p)
    backward(ns, p.all_tensors().values())
    assert np.any(p.w_node.grad != 0)
    assert all(np.any(p.w_cat[c].grad != 0) for c in p.config.categories)


# -- stop-gradient contract ------------------------------------------------------------


def build_tiny_pipeline(seed=0):
    nodes = [("M", "", [1.0, 0.0]), ("H", "", [0.5, 0.5]), ("M", "", [0.0, 1.0]), ("M", "", [0.7, 0.3])]
    edges = [(0, 1, "mh"), (1, 2, "mh"), (1, 3, "mh")]
    g = make_graph("tiny", nodes, edges)
    config = EncoderConfig(d_in=4, d=4, k_att=2, d_att=3, n_mean=2)
    catalog = mine_catalog(g, MinerConfig(n_path=10, walk_length=6, seed=seed))
    features = FeatureProjector(seed=seed, d_in=4).project(g)
    enc_params = EncoderParams.initialize(config, seed=seed)
    enc = MultiViewEncoder(g, catalog, features, enc_params, config, seed=seed)
    score_params = ScoreParams.initialize(ScoreConfig(d=4, d_in=4), seed=seed)
    return g, enc, score_params


def test_stop_gradient_scores_touch_only_their_heads():
    g, enc, sp = build_tiny_pipeline()
    # detached graph summaries from real embeddings
    reps = [enc.embed(v).h_mean.data for v in range(g.num_nodes)]
    gs = graph_scores([graph_representation(reps[:2]), graph_representation(reps[2:])],
                      graph_representation(reps), sp)
    loss = nx.dot(gs, Tensor(np.array([1.0, 2.0])))
    everything = {**enc.params.all_tensors(), **sp.all_tensors()}
    backward(loss, everything.values())
    assert np.any(sp.w_graph.grad != 0)
    for name, t in enc.params.all_tensors().items():
        np.testing.assert_array_equal(t.grad, np.zeros_like(t.data), err_msg=name)
    np.testing.assert_array_equal(sp.w_task.grad, np.zeros_like(sp.w_task.data))


def test_perturbing_encoder_changes_scores_but_not_their_gradients():
    g, enc, sp = build_tiny_pipeline()
    reps = [enc.embed(v).h_mean.data for v in range(g.num_nodes)]
    gs1 = graph_scores([graph_representation(reps[:2]), graph_representation(reps[2:])],
                       graph_representation(reps), sp).data.copy()
    # shift the instance encoder of the populated category; the detached
    # summaries move with it
    cat = enc.catalog.patterns[0].category
    enc.params.enc_w[cat].data = enc.params.enc_w[cat].data + 0.5
    reps2 = [enc.embed(v).h_mean.data for v in range(g.num_nodes)]
    gs2 = graph_scores([graph_representation(reps2[:2]), graph_representation(reps2[2:])],
                       graph_representation(reps2), sp).data
    assert not np.allclose(gs1, gs2)
