"""Episodic meta-training and meta-testing of the prototypical classifier.

Each epoch embeds all task nodes of every source graph, recomputes the
(detached-input) graph and task scores with the current parameters, forms
score-weighted class prototypes from support nodes, and minimizes the
score-weighted sum of per-task query losses in one full-batch optimizer
step. Meta-testing re-uses the node-score head to weight prototypes on the
target graph but never updates a parameter.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from cgfl import numerics as nx
from cgfl import scoring
from cgfl._seeds import mix_seed
from cgfl.encoder import EncoderParams, MultiViewEncoder, NodeEmbedding
from cgfl.hetgraph import HetGraph
from cgfl.metapattern import PatternCatalog
from cgfl.numerics import Adam, Tensor, backward, no_grad
from cgfl.scoring import ScoreParams

_TAG_TASKS = 0x51
_TAG_TARGET_SAMPLE = 0x52
_TAG_TEST_TASKS = 0x53
_TAG_TIE_BREAK = 0x54


class TaskConstructionError(ValueError):
    """A graph cannot furnish the requested N-way K-shot split."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class EpisodeTask:
    """One N-way K-shot episode: disjoint support and query node sets."""

    classes: list[int]
    support: list[tuple[int, int]]  # (node id, class id)
    query: list[tuple[int, int]]
    graph_name: str

    def __post_init__(self):
        spt = {v for v, _ in self.support}
        qry = {v for v, _ in self.query}
        if spt & qry:
            raise TaskConstructionError(f"support and query overlap on nodes {sorted(spt & qry)}")
        valid = set(self.classes)
        if any(c not in valid for _, c in self.support + self.query):
            raise TaskConstructionError("a sampled node's label is outside the task's classes")

    def nodes(self) -> list[int]:
        return [v for v, _ in self.support] + [v for v, _ in self.query]


@dataclass
class TrainConfig:
    epochs: int = 100
    n_way: int = 2
    k_shot: int = 1
    tasks_per_graph: int = 100
    test_tasks: int = 100
    learning_rate: float = 5e-3
    use_graph_score: bool = True
    use_task_score: bool = True
    use_node_score: bool = True

    def __post_init__(self):
        if self.epochs < 0 or self.n_way < 2 or self.k_shot < 1:
            raise ValueError("TrainConfig needs epochs >= 0, n_way >= 2, k_shot >= 1")
        if self.tasks_per_graph < 1 or self.test_tasks < 1:
            raise ValueError("TrainConfig needs tasks_per_graph >= 1 and test_tasks >= 1")


@dataclass
class ModelParams:
    """Every trainable tensor of the model, encoder and score heads together."""

    encoder: EncoderParams
    score: ScoreParams

    def all_tensors(self) -> dict[str, Tensor]:
        out = {f"enc/{k}": t for k, t in self.encoder.all_tensors().items()}
        out.update({f"score/{k}": t for k, t in self.score.all_tensors().items()})
        return out

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name, t in self.all_tensors().items():
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(t.data).tobytes())
        return digest.hexdigest()


@dataclass
class GraphRuntime:
    """A graph bundled with its mined catalog, features, and encoder pipeline."""

    graph: HetGraph
    catalog: PatternCatalog
    features: np.ndarray
    pipeline: MultiViewEncoder
    tasks: list[EpisodeTask] = field(default_factory=list)


def build_runtime(
    graph: HetGraph,
    catalog: PatternCatalog,
    encoder_config,
    encoder_params: EncoderParams,
    projector,
    seed: int,
    instance_cap: int = 20,
) -> GraphRuntime:
    """Project features and wire up the embedding pipeline for one graph."""
    features = projector.project(graph)
    pipeline = MultiViewEncoder(
        graph, catalog, features, encoder_params, encoder_config, seed, instance_cap
    )
    return GraphRuntime(graph=graph, catalog=catalog, features=features, pipeline=pipeline)


def sample_tasks(g: HetGraph, n_way: int, k_shot: int, m: int, seed: int) -> list[EpisodeTask]:
    """m episodes: N classes without replacement, then 2K disjoint nodes per class."""
    if n_way > len(g.classes):
        raise TaskConstructionError(
            f"graph '{g.name}' declares {len(g.classes)} classes, cannot build {n_way}-way tasks"
        )
    by_class = {c: np.sort(nodes) for c, nodes in g.nodes_by_class().items()}
    eligible = [c for c in sorted(by_class) if len(by_class[c]) >= 2 * k_shot]
    if len(eligible) < n_way:
        short = [c for c in sorted(by_class) if len(by_class[c]) < 2 * k_shot]
        worst = short[0] if short else sorted(by_class)[0]
        raise TaskConstructionError(
            f"graph '{g.name}': class '{g.classes[worst]}' has {len(by_class[worst])} labeled nodes, "
            f"need {2 * k_shot}; only {len(eligible)} of {len(by_class)} classes are usable for "
            f"{n_way}-way {k_shot}-shot tasks"
        )
    rng = np.random.default_rng(mix_seed(seed, _TAG_TASKS))
    tasks = []
    for _ in range(m):
        chosen = [eligible[i] for i in rng.choice(len(eligible), size=n_way, replace=False)]
        support, query = [], []
        for c in chosen:
            picked = rng.choice(by_class[c], size=2 * k_shot, replace=False)
            support.extend((int(v), c) for v in picked[:k_shot])
            query.extend((int(v), c) for v in picked[k_shot:])
        tasks.append(EpisodeTask(classes=chosen, support=support, query=query, graph_name=g.name))
    return tasks


def build_prototype(embeddings: list[Tensor], scores: list[Tensor] | None) -> Tensor:
    """Score-weighted mean of one class's support embeddings.

    With K = 1 the normalized weight is identically 1, so the embedding is
    returned as-is (exact, and independent of the node score by algebra).
    Passing scores=None selects uniform weights.
    """
    if not embeddings:
        raise ValueError("a prototype needs at least one support embedding")
    if len(embeddings) == 1:
        return embeddings[0]
    stacked = nx.stack(embeddings)
    if scores is None:
        weights = Tensor(np.full(len(embeddings), 1.0 / len(embeddings)))
    else:
        s = nx.stack(scores)
        weights = s / nx.tsum(s)
    return nx.matmul(weights, stacked)


def prototypes(
    task: EpisodeTask,
    embeddings: dict[int, NodeEmbedding],
    node_scores: dict[int, Tensor] | None,
) -> dict[int, Tensor]:
    out: dict[int, Tensor] = {}
    for c in task.classes:
        members = [v for v, cls in task.support if cls == c]
        embeds = [embeddings[v].h for v in members]
        scores = None if node_scores is None else [node_scores[v] for v in members]
        out[c] = build_prototype(embeds, scores)
    return out


def classify(h_u: Tensor, protos: list[Tensor]) -> Tensor:
    """Class probabilities: softmax over negative squared Euclidean distances."""
    if not protos:
        raise ValueError("classification needs at least one prototype")
    dists = nx.stack([nx.tsum(nx.square(h_u - p)) for p in protos])
    return nx.softmax(-dists)


def task_loss(
    task: EpisodeTask,
    embeddings: dict[int, NodeEmbedding],
    protos: dict[int, Tensor],
) -> Tensor:
    """Mean negative log-likelihood of the true class over the query set."""
    ordered = [protos[c] for c in task.classes]
    log_probs = []
    for v, c in task.query:
        dists = nx.stack([nx.tsum(nx.square(embeddings[v].h - p)) for p in ordered])
        log_probs.append(nx.take(nx.log_softmax(-dists), task.classes.index(c)))
    return -nx.tmean(nx.stack(log_probs))


def meta_loss(per_graph_losses: list[list[Tensor]], gs: Tensor, ts_list: list[Tensor]) -> Tensor:
    """Sum over graphs i and tasks j of gs_i * ts_ij * L_ij."""
    total = None
    for i, (losses, ts) in enumerate(zip(per_graph_losses, ts_list)):
        contrib = nx.take(gs, i) * nx.dot(ts, nx.stack(losses))
        total = contrib if total is None else total + contrib
    if total is None:
        raise ValueError("meta loss needs at least one source graph")
    return total


def _node_scores_for(
    runtime: GraphRuntime, nodes: list[int], score_params: ScoreParams
) -> dict[int, Tensor]:
    out = {}
    for v in nodes:
        pools = runtime.pipeline.sum_pools(v)
        out[v] = scoring.node_score(runtime.features[v], pools, score_params)
    return out


def _uniform(n: int) -> Tensor:
    return Tensor(np.full(n, 1.0 / n))


def meta_train(
    sources: list[GraphRuntime],
    target: GraphRuntime,
    model: ModelParams,
    cfg: TrainConfig,
    run_seed: int,
) -> list[dict]:
    """Train in place over the sources' episodes; returns per-epoch log rows."""
    if not sources:
        raise ValueError("meta-training needs at least one source graph")
    for i, rt in enumerate(sources):
        if not rt.tasks:
            rt.tasks = sample_tasks(
                rt.graph, cfg.n_way, cfg.k_shot, cfg.tasks_per_graph, mix_seed(run_seed, _TAG_TASKS, i)
            )
    optimizer = Adam(model.all_tensors(), lr=cfg.learning_rate)
    log: list[dict] = []
    for epoch in range(cfg.epochs):
        try:
            entry = _train_epoch(sources, target, model, cfg, run_seed, epoch, optimizer)
        except ValueError as e:
            raise DivergenceError(f"non-finite value during epoch {epoch}: {e}") from e
        log.append(entry)
    return log


@dataclass
class ScoreInputs:
    """Detached summaries feeding the graph/task score heads.

    These are stop-gradient quantities: the loss depends on them only
    numerically, never through the tape. Freezing them (e.g. for a
    finite-difference check) reproduces exactly the gradient the
    optimizer uses.
    """

    source_reps: list[np.ndarray] | None
    target_rep: np.ndarray | None
    task_reps: list[list[tuple[np.ndarray, np.ndarray]]] | None


def collect_score_inputs(
    sources: list[GraphRuntime],
    target: GraphRuntime,
    cfg: TrainConfig,
    run_seed: int,
    epoch: int,
) -> ScoreInputs:
    """Evaluate the detached score inputs at the current parameters."""
    with no_grad():
        caches = []
        for rt in sources:
            cache: dict[int, NodeEmbedding] = {}
            for task in rt.tasks:
                for v in task.nodes():
                    if v not in cache:
                        cache[v] = rt.pipeline.embed(v)
            caches.append(cache)
        source_reps = (
            [
                scoring.graph_representation([e.h_mean.data for e in sorted_cache_values(cache)])
                for cache in caches
            ]
            if cfg.use_graph_score
            else None
        )
        target_rep = _target_representation(target, cfg, run_seed, epoch) if cfg.use_graph_score else None
        task_reps = (
            [
                [
                    (
                        scoring.split_representation([cache[v].h_sum.data for v, _ in task.support]),
                        scoring.split_representation([cache[v].h_sum.data for v, _ in task.query]),
                    )
                    for task in rt.tasks
                ]
                for rt, cache in zip(sources, caches)
            ]
            if cfg.use_task_score
            else None
        )
    return ScoreInputs(source_reps, target_rep, task_reps)


def compute_meta_loss(
    sources: list[GraphRuntime],
    target: GraphRuntime,
    model: ModelParams,
    cfg: TrainConfig,
    run_seed: int,
    epoch: int,
    score_inputs: ScoreInputs | None = None,
) -> tuple[Tensor, Tensor, list[Tensor]]:
    """One full forward pass: (meta loss, graph scores, per-graph task scores).

    When score_inputs is None the detached score summaries are read off
    this same pass (numerically identical, half the work).
    """
    # forward pass over every task node, shared across tasks within a graph
    embed_caches: list[dict[int, NodeEmbedding]] = []
    for rt in sources:
        cache: dict[int, NodeEmbedding] = {}
        for task in rt.tasks:
            for v in task.nodes():
                if v not in cache:
                    cache[v] = rt.pipeline.embed(v)
        embed_caches.append(cache)

    if cfg.use_graph_score:
        if score_inputs is not None:
            source_reps, target_rep = score_inputs.source_reps, score_inputs.target_rep
        else:
            source_reps = [
                scoring.graph_representation([e.h_mean.data for e in sorted_cache_values(cache)])
                for cache in embed_caches
            ]
            target_rep = _target_representation(target, cfg, run_seed, epoch)
        gs = scoring.graph_scores(source_reps, target_rep, model.score)
    else:
        gs = _uniform(len(sources))

    per_graph_losses: list[list[Tensor]] = []
    ts_list: list[Tensor] = []
    for gi, (rt, cache) in enumerate(zip(sources, embed_caches)):
        if cfg.use_task_score:
            if score_inputs is not None:
                reps = score_inputs.task_reps[gi]
            else:
                reps = [
                    (
                        scoring.split_representation([cache[v].h_sum.data for v, _ in task.support]),
                        scoring.split_representation([cache[v].h_sum.data for v, _ in task.query]),
                    )
                    for task in rt.tasks
                ]
            ts_list.append(scoring.task_scores(reps, model.score))
        else:
            ts_list.append(_uniform(len(rt.tasks)))

        losses = []
        for task in rt.tasks:
            if cfg.use_node_score and cfg.k_shot > 1:
                ns = _node_scores_for(rt, [v for v, _ in task.support], model.score)
            else:
                ns = None  # K = 1: weights are identically 1 regardless of scores
            protos = prototypes(task, cache, ns)
            losses.append(task_loss(task, cache, protos))
        per_graph_losses.append(losses)

    return meta_loss(per_graph_losses, gs, ts_list), gs, ts_list


def _train_epoch(
    sources: list[GraphRuntime],
    target: GraphRuntime,
    model: ModelParams,
    cfg: TrainConfig,
    run_seed: int,
    epoch: int,
    optimizer: Adam,
) -> dict:
    loss, gs, ts_list = compute_meta_loss(sources, target, model, cfg, run_seed, epoch)
    loss_value = loss.item()
    backward(loss, model.all_tensors().values())
    optimizer.step()
    return {
        "epoch": epoch,
        "loss": loss_value,
        "gs": [float(x) for x in gs.data],
        "mean_ts": [float(ts.data.mean()) for ts in ts_list],
    }


def sorted_cache_values(cache: dict[int, NodeEmbedding]) -> list[NodeEmbedding]:
    return [cache[v] for v in sorted(cache)]


def _target_representation(
    target: GraphRuntime, cfg: TrainConfig, run_seed: int, epoch: int
) -> np.ndarray:
    """Mean-view summary of a fresh per-epoch sample of target labeled nodes."""
    pool = np.sort(target.graph.labeled_nodes())
    if len(pool) == 0:
        raise ValueError(f"target graph '{target.graph.name}' has no labeled nodes to sample")
    want = cfg.n_way * cfg.k_shot * cfg.tasks_per_graph
    rng = np.random.default_rng(mix_seed(run_seed, _TAG_TARGET_SAMPLE, epoch))
    picked = rng.choice(pool, size=min(want, len(pool)), replace=False)
    with no_grad():
        vectors = [target.pipeline.embed(int(v)).h_mean.data for v in picked]
    return scoring.graph_representation(vectors)


@dataclass
class MetaTestMetrics:
    accuracy: float
    macro_f1: float
    per_task_accuracy: list[float]
    per_task_macro_f1: list[float]


def macro_f1(y_true: list[int], y_pred: list[int], n_classes: int) -> float:
    """Unweighted mean of per-class F1 (a class absent from both counts 0)."""
    total = 0.0
    for c in range(n_classes):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        denom = 2 * tp + fp + fn
        total += (2.0 * tp / denom) if denom else 0.0
    return total / n_classes


def meta_test(
    target: GraphRuntime, model: ModelParams, cfg: TrainConfig, seed: int
) -> MetaTestMetrics:
    """Evaluate on held-out target episodes; zero parameter mutations."""
    checksum_before = model.checksum()
    tasks = sample_tasks(
        target.graph, cfg.n_way, cfg.k_shot, cfg.test_tasks, mix_seed(seed, _TAG_TEST_TASKS)
    )
    accs, f1s = [], []
    cache: dict[int, NodeEmbedding] = {}
    with no_grad():
        for t_idx, task in enumerate(tasks):
            for v in task.nodes():
                if v not in cache:
                    cache[v] = target.pipeline.embed(v)
            if cfg.use_node_score and cfg.k_shot > 1:
                ns = _node_scores_for(target, [v for v, _ in task.support], model.score)
            else:
                ns = None
            protos = prototypes(task, cache, ns)
            ordered = [protos[c] for c in task.classes]
            rng = np.random.default_rng(mix_seed(seed, _TAG_TIE_BREAK, t_idx))
            y_true, y_pred = [], []
            for v, c in task.query:
                probs = classify(cache[v].h, ordered).data
                best = np.flatnonzero(probs == probs.max())
                pick = int(best[rng.integers(len(best))]) if len(best) > 1 else int(best[0])
                y_true.append(task.classes.index(c))
                y_pred.append(pick)
            accs.append(sum(1 for t, p in zip(y_true, y_pred) if t == p) / len(y_true))
            f1s.append(macro_f1(y_true, y_pred, cfg.n_way))
    if model.checksum() != checksum_before:
        raise RuntimeError("meta-testing mutated model parameters")
    return MetaTestMetrics(
        accuracy=float(np.mean(accs)),
        macro_f1=float(np.mean(f1s)),
        per_task_accuracy=accs,
        per_task_macro_f1=f1s,
    )
