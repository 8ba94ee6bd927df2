"""Acceptance criteria, one test per criterion.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
PASS lines as they complete. The end-to-end checks (5 and 6) train over
10 seeds each and dominate the runtime (a few minutes total).
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from cgfl import numerics as nx
from cgfl.encoder import EncoderConfig, EncoderParams
from cgfl.harness import (
    ABLATION_VARIANTS,
    parse_config,
    run_ablation_suite,
    run_experiment,
    run_one_seed,
)
from cgfl.hetgraph import FeatureProjector
from cgfl.metalearn import (
    EpisodeTask,
    ModelParams,
    TrainConfig,
    build_prototype,
    build_runtime,
    prototypes,
    sample_tasks,
    task_loss,
)
from cgfl.metapattern import (
    MetaPattern,
    MinerConfig,
    PatternCatalog,
    canonical_sequence,
    categorize,
    extract_subpaths,
    mine_catalog,
    sample_walks,
    select_meta_patterns,
)
from cgfl.numerics import Tensor, finite_difference_check, softmax
from cgfl.scoring import ScoreConfig, ScoreParams, graph_scores, node_score, node_score_components, task_scores

from conftest import make_graph


def _report(number: int, name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[criterion {number}] {name}: {status}{suffix}")
    assert passed, f"criterion {number} ({name}) failed{suffix}"


def _benchmark_source(name, prefix, rule="community", seed=17):
    return {
        "name": name,
        "type_prefix": prefix,
        "n_communities": 2,
        "members_per_community": 40,
        "bridges_per_community": 10,
        "member_bridge_degree": 2,
        "feature_noise": 0.3,
        "label_rule": rule,
        "seed": seed,
    }


def benchmark_config(out_dir, n_noise_sources=0, seeds=range(10), epochs=25, tasks=10, test_tasks=50):
    sources = [{"synthetic": _benchmark_source(f"s{i}", f"s{i}_")} for i in range(3)]
    if n_noise_sources:
        sources += [
            {"synthetic": _benchmark_source(f"noise{i}", f"n{i}_", rule="random")}
            for i in range(n_noise_sources)
        ]
    return {
        "name": "synthetic_benchmark",
        "sources": sources,
        "target": {"synthetic": _benchmark_source("tgt", "t_")},
        "miner": {"seed": 5},
        "encoder": {},
        "training": {
            "epochs": epochs,
            "n_way": 2,
            "k_shot": 1,
            "tasks_per_graph": tasks,
            "test_tasks": test_tasks,
            "seeds": list(seeds),
        },
        "output_dir": str(out_dir),
    }


# -- criterion 1: gradient integrity over a full episode loss -------------------------


def ten_node_world(seed=3):
    """Two 5-node communities (4 members + 1 hub); K = 2 uses every member."""
    rng = np.random.default_rng(seed)
    nodes, edges = [], []
    for c, label in enumerate(["alpha", "beta"]):
        hub = len(nodes) + 4
        for i in range(4):
            feat = [2.0 * c - 1.0 + 0.2 * rng.normal(), 1.0 - 2.0 * c + 0.2 * rng.normal()]
            nodes.append(("member", label, feat))
            edges.append((len(nodes) - 1, hub, "affil"))
        nodes.append(("hub", "", [float(c), 0.5]))
    g = make_graph("tenNode", nodes, edges, classes=["alpha", "beta"])
    assert g.num_nodes == 10
    config = EncoderConfig(d_in=8, d=8, k_att=2, d_att=4, n_mean=2)
    catalog = mine_catalog(g, MinerConfig(n_path=10, walk_length=8, seed=seed))
    model = ModelParams(
        encoder=EncoderParams.initialize(config, seed=seed),
        score=ScoreParams.initialize(ScoreConfig(d=8, d_in=8), seed=seed),
    )
    rt = build_runtime(g, catalog, config, model.encoder, FeatureProjector(seed=seed, d_in=8), seed=seed)
    return g, rt, model


def test_criterion_1_gradient_integrity():
    start = time.perf_counter()
    g, rt, model = ten_node_world()
    task = sample_tasks(g, n_way=2, k_shot=2, m=1, seed=4)[0]

    def build_loss():
        cache = {v: rt.pipeline.embed(v) for v in task.nodes()}
        ns = {
            v: node_score(rt.features[v], rt.pipeline.sum_pools(v), model.score)
            for v, _ in task.support
        }
        protos = prototypes(task, cache, ns)
        return task_loss(task, cache, protos)

    report = finite_difference_check(
        build_loss, model.all_tensors(), eps=1e-5, tol=1e-4, max_coords_per_param=4, seed=0
    )
    elapsed = time.perf_counter() - start
    _report(
        1,
        "gradient integrity",
        report.passed and elapsed < 30.0,
        f"{len(report.records)} coords, max rel err {report.max_rel_error:.2e}, {elapsed:.1f}s",
    )


# -- criterion 2: mining equals the brute-force oracle ---------------------------------


def _oracle_subpaths(walks, type_ids, focal, max_edges):
    """Independent enumeration: every (i, j) pair, minimality and simplicity checked."""
    out = {}
    for walk in walks:
        for i in range(len(walk)):
            if type_ids[walk[i]] != focal:
                continue
            for j in range(i + 2, min(i + max_edges, len(walk) - 1) + 1):
                if type_ids[walk[j]] != focal:
                    continue
                if any(type_ids[walk[k]] == focal for k in range(i + 1, j)):
                    continue
                segment = walk[i : j + 1]
                if len(set(segment)) != len(segment):
                    continue
                seq = tuple(int(type_ids[v]) for v in segment)
                canon = min(seq, seq[::-1])
                out[canon] = out.get(canon, 0) + 1
    return out


def _random_graph(seed, max_nodes=30):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(6, max_nodes + 1))
    names = ["t0", "t1", "t2", "t3"][: int(rng.integers(2, 5))]
    nodes = [(names[int(rng.integers(len(names)))], "", [1.0]) for _ in range(n)]
    pairs = set()
    for _ in range(int(rng.integers(n, 3 * n))):
        u, v = int(rng.integers(n)), int(rng.integers(n))
        if u != v:
            pairs.add((min(u, v), max(u, v)))
    return make_graph(f"oracle{seed}", nodes, [(u, v, "e") for u, v in sorted(pairs)])


def test_criterion_2_mining_oracle_equivalence():
    start = time.perf_counter()
    cfg = MinerConfig(n_path=5, walk_length=12, k_mp=10, seed=1)
    all_equal = True
    for seed in range(20):
        g = _random_graph(seed)
        walks = sample_walks(g, cfg)
        for focal in range(len(g.node_types)):
            groups = extract_subpaths(walks, g, focal, cfg.max_subpath_edges)
            mined = {
                p.type_sequence: p.count for p in select_meta_patterns(groups, cfg.k_mp)
            }
            oracle_counts = _oracle_subpaths(walks.walks, g.node_type_ids, focal, cfg.max_subpath_edges)
            ranked = sorted(oracle_counts.items(), key=lambda kv: (-kv[1], kv[0]))[: cfg.k_mp]
            if mined != dict(ranked):
                all_equal = False
    elapsed = time.perf_counter() - start
    _report(2, "mining oracle equivalence", all_equal and elapsed < 60.0, f"20 graphs, {elapsed:.1f}s")


# -- criterion 3: categorization fidelity on fixtures ------------------------------------


def test_criterion_3_categorization_fidelity():
    # Fixture A: hub system. Degrees: C = 24, U = 2, I = 2 => D(U,C) = 12,
    # D(U,I) = D(I,I) = 1, D(C,I) = 12.
    n_u = 24
    nodes = [("C", "", [1.0])] + [("U", "", [1.0])] * n_u + [("I", "", [1.0])] * n_u
    edges = [(0, 1 + i, "uc") for i in range(n_u)]
    edges += [(1 + i, 1 + n_u + i, "ui") for i in range(n_u)]
    edges += [(1 + n_u + 2 * i, 1 + n_u + 2 * i + 1, "ii") for i in range(n_u // 2)]
    ga = make_graph("fixtureA", nodes, edges)
    u, c, i_ = ga.type_id("U"), ga.type_id("C"), ga.type_id("I")

    # Fixture B: 10-leaf star, ratio exactly 10 (threshold boundary -> affiliation).
    gb = make_graph(
        "fixtureB",
        [("X", "", [1.0])] + [("Y", "", [1.0])] * 10,
        [(0, 1 + k, "xy") for k in range(10)],
    )
    x, y = gb.type_id("X"), gb.type_id("Y")

    # Fixture C: 8-leaf star (ratio 8 -> interaction) plus a single-type ring.
    gc = make_graph(
        "fixtureC",
        [("A", "", [1.0])] + [("B", "", [1.0])] * 8,
        [(0, 1 + k, "ab") for k in range(8)],
    )
    a, b = gc.type_id("A"), gc.type_id("B")
    gd = make_graph(
        "fixtureD",
        [("R", "", [1.0])] * 6 + [("S", "", [1.0])],
        [(k, (k + 1) % 6, "rr") for k in range(6)],
    )
    r = gd.type_id("R")

    cfg = MinerConfig(theta_mp=10.0, theta_lp=3)
    fixtures = [
        (ga, (u, c, u), "SAP"),            # symmetric, D = 12
        (ga, (u, c, i_, u), "WAP"),        # asymmetric affiliation
        (ga, (u, c, c, u), "SAP"),         # symmetric, 3 edges, D = 12
        (ga, (u, i_, c, i_, u), "SAP"),    # symmetric, 4 edges, D = 12
        (ga, (u, c, i_, i_, u), "WAP"),    # asymmetric, 4 edges
        (ga, (u, i_, u), "SIP"),           # D = 1, 2 edges
        (ga, (u, i_, i_, u), "SIP"),       # D = 1, 3 edges = theta_lp
        (ga, (u, i_, i_, i_, u), "WIP"),   # D = 1, 4 edges > theta_lp
        (gb, (y, x, y), "SAP"),            # boundary D = 10 counts as affiliation
        (gc, (b, a, b), "SIP"),            # D = 8 < 10, short
        (gd, (r, r, r), "SIP"),            # single type, D = 1, 2 edges
        (gd, (r, r, r, r, r), "WIP"),      # single type, 4 edges
    ]
    correct = 0
    for g, seq, expected in fixtures:
        pattern = MetaPattern(canonical_sequence(seq), count=1)
        got = categorize(PatternCatalog([pattern]), g, cfg).patterns[0].category
        correct += got == expected

    # tie-breaking: equal counts resolve to the lexicographically smaller pattern
    tie = select_meta_patterns({(0, 2, 0): [1, 2, 3], (0, 1, 0): [4, 5, 6]}, 1)
    tie_ok = tie[0].type_sequence == (0, 1, 0)

    _report(3, "categorization fidelity", correct == 12 and tie_ok, f"{correct}/12 fixtures")


# -- criterion 4: closed-form episode checks ----------------------------------------------


def test_criterion_4_closed_form_episode_checks():
    ok = True
    details = []

    # uniform predictions -> ln N
    for n in (2, 3):
        classes = list(range(n))
        task = EpisodeTask(
            classes=classes,
            support=[(i, c) for i, c in enumerate(classes)],
            query=[(100 + i, c) for i, c in enumerate(classes)],
            graph_name="g",
        )

        class E:
            def __init__(self, h):
                self.h = h

        embeds = {v: E(Tensor(np.zeros(3))) for v, _ in task.support + task.query}
        protos = {c: Tensor(np.ones(3)) for c in classes}
        loss = task_loss(task, embeds, protos)
        if abs(loss.item() - math.log(n)) >= 1e-9:
            ok = False
            details.append(f"ln{n} loss off by {abs(loss.item() - math.log(n)):.2e}")

    # K = 1 prototype is the support embedding, bit for bit
    h = Tensor(np.array([0.1, -0.7, 3.14159]))
    proto = build_prototype([h], [Tensor(0.123)])
    if not (proto.data is h.data or np.array_equal(proto.data, h.data)):
        ok = False
        details.append("K=1 prototype differs")

    # softmax and score normalizations sum to 1 within 1e-12
    rng = np.random.default_rng(0)
    sp = ScoreParams.initialize(ScoreConfig(d=4, d_in=3), seed=1)
    sums = [
        softmax(Tensor(rng.normal(size=257))).data.sum(),
        graph_scores([rng.normal(size=4) for _ in range(5)], rng.normal(size=4), sp).data.sum(),
        task_scores([(rng.normal(size=4), rng.normal(size=4)) for _ in range(7)], sp).data.sum(),
    ]
    raw = rng.uniform(0.2, 0.9, size=4)
    sums.append((raw / raw.sum()).sum())
    if any(abs(s - 1.0) >= 1e-12 for s in sums):
        ok = False
        details.append(f"normalization sums {sums}")

    # zero-instance category score is exactly one half
    pools = {cat: None for cat in sp.config.categories}
    pools["SIP"] = rng.normal(size=(3, 3))
    components = node_score_components(rng.normal(size=3), pools, sp)
    empty_vals = [components[c].item() for c in ("SAP", "WAP", "WIP")]
    if any(v != 0.5 for v in empty_vals):
        ok = False
        details.append(f"empty-category scores {empty_vals}")
    all_empty = node_score(rng.normal(size=3), {c: None for c in sp.config.categories}, sp)
    if all_empty.item() != 0.5:
        ok = False
        details.append("all-empty node score != 0.5")

    _report(4, "closed-form episode checks", ok, "; ".join(details))


# -- criterion 5: end-to-end synthetic benchmark -------------------------------------------


def test_criterion_5_end_to_end_benchmark(tmp_path):
    start = time.perf_counter()
    config = parse_config(benchmark_config(tmp_path / "bench"), tmp_path)
    result = run_experiment(config)
    elapsed = time.perf_counter() - start
    acc = result.metrics["results"]["2-way_1-shot"]["accuracy"]["mean"]
    _report(
        5,
        "end-to-end synthetic benchmark",
        acc >= 0.75 and elapsed < 600.0,
        f"accuracy {acc:.4f} over 10 seeds, {elapsed:.0f}s",
    )


# -- criterion 6: score-weighting pushes a noise source below uniform ------------------------


def test_criterion_6_noise_source_downweighted(tmp_path):
    start = time.perf_counter()
    config = parse_config(benchmark_config(tmp_path / "noise", n_noise_sources=1), tmp_path)
    noise_index = 3  # fourth source; uniform weight would be 1/4
    hits = 0
    for seed in range(10):
        row = run_one_seed(config, 2, 1, seed)
        gs = np.array([entry["gs"] for entry in row["log"]])
        hits += gs[:, noise_index].mean() < 0.25
    elapsed = time.perf_counter() - start
    _report(6, "noise source down-weighted", hits >= 8, f"{hits}/10 seeds below 0.25, {elapsed:.0f}s")


# -- criterion 7: ablation suite -----------------------------------------------------------


def test_criterion_7_ablation_suite(tmp_path):
    start = time.perf_counter()
    config = parse_config(
        benchmark_config(tmp_path / "abl", seeds=[0], epochs=3, tasks=2, test_tasks=5), tmp_path
    )
    rows = run_ablation_suite(config)
    all_ok = [r["variant"] for r in rows] == list(ABLATION_VARIANTS) and all(
        r["status"] == "ok" for r in rows
    )
    by_variant = {r["variant"]: r for r in rows}
    degenerate_exact = (
        by_variant["no_node_score"]["accuracy"] == by_variant["base"]["accuracy"]
        and by_variant["no_node_score"]["macro_f1"] == by_variant["base"]["macro_f1"]
    )
    elapsed = time.perf_counter() - start
    _report(
        7,
        "ablation suite",
        all_ok and degenerate_exact,
        f"{sum(r['status'] == 'ok' for r in rows)}/11 ok, K=1 node-score degeneracy exact, {elapsed:.0f}s",
    )


# -- criterion 8: byte-identical determinism -------------------------------------------------


def test_criterion_8_determinism(tmp_path):
    config_a = parse_config(
        benchmark_config(tmp_path / "det_a", seeds=[3], epochs=3, tasks=2, test_tasks=5), tmp_path
    )
    run_experiment(config_a)
    config_b = parse_config(
        benchmark_config(tmp_path / "det_b", seeds=[3], epochs=3, tasks=2, test_tasks=5), tmp_path
    )
    run_experiment(config_b)
    identical = (tmp_path / "det_a" / "metrics.json").read_bytes() == (
        tmp_path / "det_b" / "metrics.json"
    ).read_bytes()
    _report(8, "determinism", identical, "metrics.json byte-identical")
