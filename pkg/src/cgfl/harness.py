"""Config-driven experiment runner and CLI.

One JSON config describes the whole experiment: source/target graphs
(files or synthetic recipes), mining and encoder settings, the training
schedule, and the seed list. The runner mines, trains, and tests once per
seed and (n_way, k_shot) combination, then writes diffable artifacts:

    <out>/catalogs/<graph>.json   mined catalog (first seed, representative)
    <out>/logs/<combo>_seed<s>.jsonl   per-epoch loss, gs, mean ts
    <out>/metrics.json            mean +/- std per combination
    <out>/results.csv             one row per (seed, combination)

Subcommands: run, ablate (the ten category/view/score variants), sweep
(one miner/encoder parameter over a value list), mine (catalogs only),
synth (materialize a synthetic spec to TSV files). The env var CGFL_OUT
overrides the output root. Exit codes: 0 ok, 2 config error, 3 runtime
error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from cgfl._seeds import mix_seed
from cgfl.encoder import EncoderConfig, EncoderParams
from cgfl.hetgraph import (
    FeatureProjector,
    GraphFormatError,
    HetGraph,
    SyntheticSpec,
    SyntheticSpecError,
    assert_disjoint_heterogeneity,
    generate_synthetic,
    load_graph,
    save_graph,
)
from cgfl.metalearn import (
    ModelParams,
    TrainConfig,
    build_runtime,
    meta_test,
    meta_train,
)
from cgfl.metapattern import MinerConfig, mine_catalog, write_catalog
from cgfl.scoring import ScoreConfig, ScoreParams

_TAG_RUN_MINER = 0x61
_TAG_RUN_PROJECTOR = 0x62
_TAG_RUN_MODEL = 0x63
_TAG_RUN_MATCH = 0x64
_TAG_RUN_TEST = 0x65


class ConfigError(ValueError):
    """Invalid experiment configuration."""


ABLATION_VARIANTS = (
    "base",
    "no_sap",
    "no_wap",
    "no_sip",
    "no_wip",
    "no_sum",
    "no_max",
    "no_mean",
    "no_graph_score",
    "no_task_score",
    "no_node_score",
)

SWEEPABLE = {
    "theta_mp": ("miner", "theta_mp", float),
    "theta_lp": ("miner", "theta_lp", int),
    "k_mp": ("miner", "k_mp", int),
    "n_mean": ("encoder", "n_mean", int),
    "k_att": ("encoder", "k_att", int),
    "d": ("encoder", "d", int),
}


@dataclass
class GraphSource:
    """Either a manifest path or an inline synthetic recipe."""

    manifest: Path | None = None
    synthetic: SyntheticSpec | None = None

    def build(self) -> HetGraph:
        if self.manifest is not None:
            return load_graph(self.manifest)
        return generate_synthetic(self.synthetic)

    def describe(self) -> str:
        return str(self.manifest) if self.manifest is not None else f"synthetic:{self.synthetic.name}"


@dataclass
class ExperimentConfig:
    name: str
    sources: list[GraphSource]
    target: GraphSource
    miner: MinerConfig
    encoder: EncoderConfig
    training: TrainConfig
    seeds: list[int]
    output_dir: Path
    cross_heterogeneity: bool = True
    combos: list[tuple[int, int]] = None  # (n_way, k_shot) pairs

    def __post_init__(self):
        if not self.sources:
            raise ConfigError("at least one source graph is required")
        if not self.seeds:
            raise ConfigError("the seed list must not be empty")
        if self.combos is None:
            self.combos = [(self.training.n_way, self.training.k_shot)]


def _build_source(entry: dict, base_dir: Path, role: str) -> GraphSource:
    if not isinstance(entry, dict) or len(entry) != 1:
        raise ConfigError(f"each graph entry must be {{'manifest': ...}} or {{'synthetic': ...}}, got {entry!r}")
    if "manifest" in entry:
        path = base_dir / entry["manifest"]
        if not path.exists():
            raise ConfigError(f"manifest not found: {path}")
        return GraphSource(manifest=path)
    if "synthetic" in entry:
        try:
            spec = SyntheticSpec(role=role, **entry["synthetic"])
        except (TypeError, SyntheticSpecError) as e:
            raise ConfigError(f"invalid synthetic spec: {e}") from e
        return GraphSource(synthetic=spec)
    raise ConfigError(f"graph entry needs a 'manifest' or 'synthetic' key, got {sorted(entry)}")


def _as_list(value) -> list:
    return value if isinstance(value, list) else [value]


def parse_config(data: dict, base_dir: Path) -> ExperimentConfig:
    for key in ("name", "sources", "target", "training", "output_dir"):
        if key not in data:
            raise ConfigError(f"config missing required key '{key}'")
    try:
        miner = MinerConfig(**data.get("miner", {}))
        encoder = EncoderConfig(**data.get("encoder", {}))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid miner/encoder settings: {e}") from e

    training_raw = dict(data["training"])
    seeds = training_raw.pop("seeds", None)
    if seeds is None:
        raise ConfigError("training.seeds is required (list of integers)")
    n_ways = [int(n) for n in _as_list(training_raw.pop("n_way", 2))]
    k_shots = [int(k) for k in _as_list(training_raw.pop("k_shot", 1))]
    try:
        training = TrainConfig(n_way=n_ways[0], k_shot=k_shots[0], **training_raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid training settings: {e}") from e

    sources = [_build_source(s, base_dir, "source") for s in data["sources"]]
    target = _build_source(data["target"], base_dir, "target")
    return ExperimentConfig(
        name=str(data["name"]),
        sources=sources,
        target=target,
        miner=miner,
        encoder=encoder,
        training=training,
        seeds=[int(s) for s in seeds],
        output_dir=Path(data["output_dir"]),
        cross_heterogeneity=bool(data.get("cross_heterogeneity", True)),
        combos=[(n, k) for n in n_ways for k in k_shots],
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return parse_config(data, path.parent)


def apply_variant(config: ExperimentConfig, variant: str) -> ExperimentConfig:
    """The ten ablation variants: drop one category, view, or score level."""
    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant '{variant}' (choose from {ABLATION_VARIANTS})")
    if variant == "base":
        return config
    enc, train = config.encoder, config.training
    if variant in ("no_sap", "no_wap", "no_sip", "no_wip"):
        dropped = variant.removeprefix("no_").upper()
        enc = replace(enc, categories=tuple(c for c in enc.categories if c != dropped))
    elif variant in ("no_sum", "no_max", "no_mean"):
        dropped = variant.removeprefix("no_")
        enc = replace(enc, views=tuple(v for v in enc.views if v != dropped))
    elif variant == "no_graph_score":
        train = replace(train, use_graph_score=False)
    elif variant == "no_task_score":
        train = replace(train, use_task_score=False)
    elif variant == "no_node_score":
        train = replace(train, use_node_score=False)
    return replace(config, encoder=enc, training=train)


# -- single-seed run ---------------------------------------------------------------


def build_graphs(config: ExperimentConfig) -> tuple[list[HetGraph], HetGraph]:
    sources = [s.build() for s in config.sources]
    target = config.target.build()
    if config.cross_heterogeneity:
        assert_disjoint_heterogeneity(sources, target)
    return sources, target


def run_one_seed(config: ExperimentConfig, n_way: int, k_shot: int, seed: int) -> dict:
    """Mine, train, and test one fully independent run; returns a result row."""
    sources, target = build_graphs(config)
    miner = replace(config.miner, seed=mix_seed(config.miner.seed, _TAG_RUN_MINER, seed))
    catalogs = {g.name: mine_catalog(g, miner) for g in sources + [target]}
    projector = FeatureProjector(seed=mix_seed(seed, _TAG_RUN_PROJECTOR), d_in=config.encoder.d_in)
    model = ModelParams(
        encoder=EncoderParams.initialize(config.encoder, seed=mix_seed(seed, _TAG_RUN_MODEL)),
        score=ScoreParams.initialize(
            ScoreConfig(
                d=config.encoder.d,
                d_in=config.encoder.d_in,
                leaky_slope=config.encoder.leaky_slope,
                categories=config.encoder.categories,
            ),
            seed=mix_seed(seed, _TAG_RUN_MODEL),
        ),
    )
    match_seed = mix_seed(seed, _TAG_RUN_MATCH)
    runtimes = [
        build_runtime(g, catalogs[g.name], config.encoder, model.encoder, projector,
                      seed=match_seed, instance_cap=config.miner.instance_cap)
        for g in sources
    ]
    target_rt = build_runtime(target, catalogs[target.name], config.encoder, model.encoder,
                              projector, seed=match_seed, instance_cap=config.miner.instance_cap)
    train_cfg = replace(config.training, n_way=n_way, k_shot=k_shot)
    log = meta_train(runtimes, target_rt, model, train_cfg, run_seed=seed)
    metrics = meta_test(target_rt, model, train_cfg, seed=mix_seed(seed, _TAG_RUN_TEST))
    return {
        "seed": seed,
        "n_way": n_way,
        "k_shot": k_shot,
        "accuracy": metrics.accuracy,
        "macro_f1": metrics.macro_f1,
        "log": log,
        "catalogs": {name: cat for name, cat in catalogs.items()},
        "graphs": {g.name: g for g in sources + [target]},
    }


def _combo_key(n_way: int, k_shot: int) -> str:
    return f"{n_way}-way_{k_shot}-shot"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]
    metrics: dict
    output_dir: Path


def run_experiment(config: ExperimentConfig, output_dir: Path | None = None, threads: int = 1) -> ExperimentResult:
    """Run every (combo, seed) pair and write the artifact set."""
    out = Path(output_dir) if output_dir is not None else config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "catalogs").mkdir(exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)

    build_graphs(config)  # validate graphs and cross-heterogeneity before any compute

    jobs = [(n, k, seed) for (n, k) in config.combos for seed in config.seeds]
    rows = []

    def consume(job, result):
        # write artifacts as each job lands so a later failure preserves them
        n, k, seed = job
        rows.append({key: result[key] for key in ("seed", "n_way", "k_shot", "accuracy", "macro_f1")})
        log_path = out / "logs" / f"n{n}_k{k}_seed{seed}.jsonl"
        with log_path.open("w", encoding="utf-8") as fh:
            for entry in result["log"]:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
        if seed == config.seeds[0] and (n, k) == config.combos[0]:
            for name, catalog in result["catalogs"].items():
                write_catalog(catalog, result["graphs"][name], out / "catalogs" / f"{name}.json")

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_one_seed, config, n, k, s) for n, k, s in jobs]
            for job, future in zip(jobs, futures):
                consume(job, future.result())
    else:
        for job in jobs:
            consume(job, run_one_seed(config, *job))

    metrics = {"name": config.name, "seeds": config.seeds, "results": {}}
    for n, k in config.combos:
        combo_rows = [r for r in rows if r["n_way"] == n and r["k_shot"] == k]
        metrics["results"][_combo_key(n, k)] = {
            metric: _summary([r[metric] for r in combo_rows])
            for metric in ("accuracy", "macro_f1")
        }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with (out / "results.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["seed", "n_way", "k_shot", "accuracy", "macro_f1"])
        writer.writeheader()
        writer.writerows(rows)
    return ExperimentResult(config=config, rows=rows, metrics=metrics, output_dir=out)


def _summary(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "per_seed": [float(v) for v in arr]}


def run_ablation_suite(config: ExperimentConfig, output_dir: Path | None = None, threads: int = 1) -> list[dict]:
    """Base plus the ten variants; a failing variant marks its row and moves on."""
    out = Path(output_dir) if output_dir is not None else config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in ABLATION_VARIANTS:
        try:
            result = run_experiment(apply_variant(config, variant), out / variant, threads=threads)
            combo = _combo_key(*config.combos[0])
            summary = result.metrics["results"][combo]
            rows.append(
                {
                    "variant": variant,
                    "status": "ok",
                    "accuracy": summary["accuracy"]["mean"],
                    "macro_f1": summary["macro_f1"]["mean"],
                }
            )
        except Exception as e:  # keep the suite alive past one bad variant
            rows.append({"variant": variant, "status": f"failed: {e}", "accuracy": "", "macro_f1": ""})
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "status", "accuracy", "macro_f1"])
        writer.writeheader()
        writer.writerows(rows)
    return rows


def run_param_sweep(
    config: ExperimentConfig, param: str, values: list, output_dir: Path | None = None, threads: int = 1
) -> list[dict]:
    """One run per parameter value, identical seeds across rows."""
    if param not in SWEEPABLE:
        raise ConfigError(f"unknown sweep parameter '{param}' (choose from {sorted(SWEEPABLE)})")
    section, field_name, caster = SWEEPABLE[param]
    out = Path(output_dir) if output_dir is not None else config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        value = caster(value)
        try:
            if section == "miner":
                cfg = replace(config, miner=replace(config.miner, **{field_name: value}))
            else:
                cfg = replace(config, encoder=replace(config.encoder, **{field_name: value}))
        except ValueError as e:
            raise ConfigError(f"invalid value {value!r} for parameter '{param}': {e}") from e
        result = run_experiment(cfg, out / f"{param}_{value}", threads=threads)
        combo = _combo_key(*config.combos[0])
        summary = result.metrics["results"][combo]
        rows.append(
            {
                "param": param,
                "value": value,
                "accuracy": summary["accuracy"]["mean"],
                "macro_f1": summary["macro_f1"]["mean"],
            }
        )
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["param", "value", "accuracy", "macro_f1"])
        writer.writeheader()
        writer.writerows(rows)
    return rows


def mine_only(config: ExperimentConfig, output_dir: Path | None = None) -> Path:
    """Mine and export catalogs for every graph in the config."""
    out = Path(output_dir) if output_dir is not None else config.output_dir
    (out / "catalogs").mkdir(parents=True, exist_ok=True)
    sources, target = build_graphs(config)
    for g in sources + [target]:
        catalog = mine_catalog(g, config.miner)
        write_catalog(catalog, g, out / "catalogs" / f"{g.name}.json")
    return out / "catalogs"


def synth_to_files(spec_path: Path, out_dir: Path) -> Path:
    """Materialize a synthetic spec JSON into manifest + TSV files."""
    if not spec_path.exists():
        raise ConfigError(f"spec file not found: {spec_path}")
    try:
        data = json.loads(spec_path.read_text(encoding="utf-8"))
        spec = SyntheticSpec(**data)
    except (json.JSONDecodeError, TypeError, SyntheticSpecError) as e:
        raise ConfigError(f"invalid synthetic spec {spec_path}: {e}") from e
    graph = generate_synthetic(spec)
    return save_graph(graph, out_dir)


# -- CLI ---------------------------------------------------------------------------


def _resolve_out(args_out: str | None, config: ExperimentConfig | None) -> Path | None:
    if args_out:
        return Path(args_out)
    env_root = os.environ.get("CGFL_OUT")
    if env_root and config is not None:
        return Path(env_root) / config.output_dir
    return None


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from e


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cgfl", description="Cross-heterogeneity few-shot experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seed-override", default=None, help="comma-separated seed list")
        p.add_argument("--threads", type=int, default=1, help="parallel seed jobs")

    common(sub.add_parser("run", help="full experiment: mine, train, test"))
    common(sub.add_parser("ablate", help="base plus the ten ablation variants"))
    sweep = sub.add_parser("sweep", help="sweep one miner/encoder parameter")
    common(sweep)
    sweep.add_argument("--param", required=True, choices=sorted(SWEEPABLE))
    sweep.add_argument("--values", required=True, help="comma-separated values")
    mine = sub.add_parser("mine", help="mine and export pattern catalogs only")
    mine.add_argument("--config", required=True)
    mine.add_argument("--out", default=None)
    synth = sub.add_parser("synth", help="write a synthetic graph to TSV files")
    synth.add_argument("--spec", required=True, help="synthetic spec JSON")
    synth.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            manifest = synth_to_files(Path(args.spec), Path(args.out))
            print(f"wrote {manifest}")
            return 0
        config = load_config(args.config)
        if getattr(args, "seed_override", None):
            config = replace(config, seeds=_parse_int_list(args.seed_override))
        out = _resolve_out(args.out, config)
        if args.command == "run":
            result = run_experiment(config, out, threads=args.threads)
            print(f"wrote {result.output_dir / 'metrics.json'}")
        elif args.command == "ablate":
            rows = run_ablation_suite(config, out, threads=args.threads)
            done = sum(1 for r in rows if r["status"] == "ok")
            print(f"{done}/{len(rows)} variants completed")
        elif args.command == "sweep":
            values = [v for v in args.values.split(",") if v.strip() != ""]
            rows = run_param_sweep(config, args.param, values, out, threads=args.threads)
            print(f"{len(rows)} sweep rows written")
        elif args.command == "mine":
            path = mine_only(config, Path(args.out) if args.out else None)
            print(f"wrote catalogs to {path}")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (GraphFormatError, SyntheticSpecError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure: artifacts so far are preserved
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
