"""Command-line pipeline: data generation, training, explanation, evaluation,
ensemble-size planning, flip testing, and the ablation sweeps.

Every command resolves its configuration (JSON config file plus flag
overrides), writes a ``run-manifest.json`` with the resolved values into its
output directory, and produces byte-identical outputs when re-run from that
manifest. Timestamps go to a sidecar ``run.log`` only.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .circuit import EDUQGCModel, load_checkpoint, model_from_dict, model_to_dict, save_checkpoint
from .ensemble import (
    EnsembleConfig,
    EnsembleExplanation,
    explain_detailed,
    fit_surrogate,
    flip_probability,
    make_plan,
    summarize_ensemble,
    surrogate_pass,
)
from .errors import ConfigError, DataError, NumericalError, QGLimeError
from .graphs import Dataset, Graph, generate_dataset, graph_from_dict, graph_to_dict, load_dataset, save_dataset
from .metrics import evaluate_explanations, random_explanations
from .perturb import PerturbConfig, perturbation_dump
from .seeds import TAG_EXPLAIN, TAG_FLIP, spawn_seed
from .training import TrainConfig, train

JOBS_ENV = "QGLIME_JOBS"

SURROGATE_FLAG = {"hsic-l1": "hsic_l1", "hsic-group": "hsic_group", "logistic": "logistic"}
PERTURB_FLAG = {"random-node": "random_node", "random-walk": "random_walk"}


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def _load_config_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed config JSON: {exc}") from exc
    if isinstance(payload, dict) and "config" in payload and "command" in payload:
        payload = payload["config"]  # a run manifest doubles as a config file
    if not isinstance(payload, dict):
        raise DataError("config file must hold a JSON object")
    return payload


def resolve_config(defaults: dict, config_path: str | None, overrides: dict) -> dict:
    cfg = dict(defaults)
    if config_path:
        loaded = _load_config_file(config_path)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def write_manifest(out_dir: Path, command: str, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": command, "config": cfg}
    (out_dir / "run-manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    with (out_dir / "run.log").open("a") as log:
        log.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {command}\n")


def _shots_or_none(shots: int) -> int | None:
    return None if shots == 0 else shots


def _ensemble_config(cfg: dict) -> EnsembleConfig:
    return EnsembleConfig(
        num_surrogates=cfg["num_surrogates"],
        surrogate_kind=cfg["surrogate"],
        perturb=PerturbConfig(
            strategy=cfg["perturbation"],
            num_perturbations=cfg["num_perturbations"],
            removal_count=cfg["removal_count"],
            walk_length=cfg["walk_length"],
            element_kind=cfg["element_kind"],
            shots=_shots_or_none(cfg["shots"]),
        ),
        lam=cfg["lam"],
        shots=_shots_or_none(cfg["shots"]),
        master_seed=cfg["seed"],
        indecision_eps=cfg["indecision_eps"],
        tip_ks=tuple(cfg["tip_ks"]),
        flip_trials=cfg["flip_trials"],
        compute_flips=cfg.get("compute_flips", True),
    )


EXPLAIN_DEFAULTS = {
    "dataset": None,
    "checkpoint": None,
    "split": "test",
    "surrogate": "hsic_l1",
    "perturbation": "random_node",
    "num_surrogates": 30,
    "num_perturbations": 64,
    "removal_count": 2,
    "walk_length": 4,
    "element_kind": "nodes",
    "shots": 2000,
    "lam": 1e-2,
    "seed": 0,
    "indecision_eps": 0.1,
    "tip_ks": [1, 3],
    "flip_trials": 20,
    "compute_flips": True,
    "dump_perturbations": False,
    "jobs": None,
}


def _select_split(dataset: Dataset, split: str) -> list[Graph]:
    if split == "train":
        return dataset.train
    if split == "test":
        return dataset.test
    raise ConfigError(f"unknown split {split!r}")


# ---------------------------------------------------------------------------
# Explanation workers (process-pool friendly)
# ---------------------------------------------------------------------------


def _explain_one(args: tuple) -> tuple[dict, dict | None]:
    graph_dict, model_dict, cfg, graph_seed = args
    graph = graph_from_dict(graph_dict)
    model = model_from_dict(model_dict)
    config = _ensemble_config({**cfg, "seed": graph_seed})
    explanation, psets = explain_detailed(graph, model, config)
    dump = perturbation_dump(psets) if cfg["dump_perturbations"] else None
    return explanation.to_dict(), dump


def _run_explanations(graphs: list[Graph], model: EDUQGCModel, cfg: dict) -> list[tuple[dict, dict | None]]:
    jobs = cfg.get("jobs") or int(os.environ.get(JOBS_ENV, "1"))
    tasks = [
        (
            graph_to_dict(g, "test"),
            model_to_dict(model),
            cfg,
            spawn_seed(cfg["seed"], TAG_EXPLAIN, g.id),
        )
        for g in graphs
    ]
    if jobs <= 1:
        return [_explain_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_explain_one, tasks))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args: argparse.Namespace) -> int:
    defaults = {"case": None, "seed": 7}
    cfg = resolve_config(defaults, args.config, {"case": args.case, "seed": args.seed})
    if cfg["case"] not in (1, 2):
        raise ConfigError(f"case must be 1 or 2, got {cfg['case']}")
    out = Path(args.out)
    dataset = generate_dataset(f"Case{cfg['case']}", cfg["seed"])
    write_manifest(out, "gen-data", cfg)
    save_dataset(dataset, out / "dataset.json")
    print(f"wrote {out / 'dataset.json'} ({len(dataset.graphs)} graphs)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    defaults = {
        "dataset": None,
        "epochs": 50,
        "learning_rate": 0.01,
        "batch_size": 16,
        "shots": 0,
        "seed": 0,
        "gradient_method": "analytic",
    }
    cfg = resolve_config(
        defaults,
        args.config,
        {
            "dataset": args.dataset,
            "epochs": args.epochs,
            "learning_rate": args.learning_rate,
            "batch_size": args.batch_size,
            "shots": args.shots,
            "seed": args.seed,
            "gradient_method": args.gradient_method,
        },
    )
    if not cfg["dataset"]:
        raise ConfigError("a dataset path is required")
    dataset = load_dataset(cfg["dataset"])
    out = Path(args.out)
    config = TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        shots=_shots_or_none(cfg["shots"]),
        seed=cfg["seed"],
        gradient_method=cfg["gradient_method"],
    )
    model, report = train(dataset, config)
    write_manifest(out, "train", cfg)
    save_checkpoint(model, out / "checkpoint.json")
    report.save_csv(out / "train_log.csv")
    final = report.final_test_accuracy
    print(f"wrote {out / 'checkpoint.json'} (final test acc {final})")
    return 0


def cmd_explain(args: argparse.Namespace) -> int:
    overrides = {
        "dataset": args.dataset,
        "checkpoint": args.checkpoint,
        "split": args.split,
        "surrogate": SURROGATE_FLAG.get(args.surrogate, args.surrogate),
        "perturbation": PERTURB_FLAG.get(args.perturb, args.perturb),
        "num_surrogates": args.num_surrogates,
        "num_perturbations": args.num_perturbations,
        "removal_count": args.removal_count,
        "walk_length": args.walk_length,
        "element_kind": args.element_kind,
        "shots": args.shots,
        "lam": args.lam,
        "seed": args.seed,
        "flip_trials": args.flip_trials,
        "dump_perturbations": True if args.dump_perturbations else None,
        "jobs": args.jobs,
    }
    cfg = resolve_config(EXPLAIN_DEFAULTS, args.config, overrides)
    if not cfg["dataset"] or not cfg["checkpoint"]:
        raise ConfigError("dataset and checkpoint paths are required")
    dataset = load_dataset(cfg["dataset"])
    model = load_checkpoint(cfg["checkpoint"])
    graphs = _select_split(dataset, cfg["split"])
    out = Path(args.out)
    results = _run_explanations(graphs, model, cfg)
    manifest_cfg = {k: v for k, v in cfg.items() if k != "jobs"}
    write_manifest(out, "explain", manifest_cfg)
    for graph, (explanation, dump) in zip(graphs, results):
        path = out / f"explanation_{graph.id:04d}.json"
        path.write_text(json.dumps(explanation, indent=2) + "\n")
        if dump is not None:
            dump_path = out / f"perturbations_{graph.id:04d}.json"
            dump_path.write_text(json.dumps(dump, indent=2) + "\n")
    print(f"wrote {len(results)} explanation files to {out}")
    return 0


def _load_explanations(directory: Path, graphs: list[Graph]) -> tuple[list[EnsembleExplanation], str]:
    files = sorted(directory.glob("explanation_*.json"))
    if not files:
        raise DataError(f"no explanation files in {directory}")
    by_id = {}
    kinds = set()
    for f in files:
        payload = json.loads(f.read_text())
        exp = EnsembleExplanation.from_dict(payload)
        by_id[exp.graph_id] = exp
        kinds.add(exp.surrogate_kind)
    missing = [g.id for g in graphs if g.id not in by_id]
    if missing:
        raise DataError(f"missing explanations for graph ids {missing}")
    method = kinds.pop() if len(kinds) == 1 else "mixed"
    return [by_id[g.id] for g in graphs], method


def cmd_evaluate(args: argparse.Namespace) -> int:
    defaults = {
        "explanations": None,
        "dataset": None,
        "checkpoint": None,
        "split": "test",
        "k": None,
        "shots": 2000,
        "seed": 0,
        "fidelity_trials": 20,
        "random_baseline": False,
    }
    cfg = resolve_config(
        defaults,
        args.config,
        {
            "explanations": args.explanations,
            "dataset": args.dataset,
            "checkpoint": args.checkpoint,
            "split": args.split,
            "k": args.k,
            "shots": args.shots,
            "seed": args.seed,
            "fidelity_trials": args.fidelity_trials,
            "random_baseline": True if args.random_baseline else None,
        },
    )
    for key in ("explanations", "dataset", "checkpoint"):
        if not cfg[key]:
            raise ConfigError(f"{key} path is required")
    dataset = load_dataset(cfg["dataset"])
    model = load_checkpoint(cfg["checkpoint"])
    graphs = _select_split(dataset, cfg["split"])
    explanations, method = _load_explanations(Path(cfg["explanations"]), graphs)
    out = Path(args.out)
    reports = [
        evaluate_explanations(
            explanations,
            graphs,
            model,
            dataset.case_id,
            method,
            k=cfg["k"],
            shots=_shots_or_none(cfg["shots"]),
            seed=cfg["seed"],
            fidelity_trials=cfg["fidelity_trials"],
        )
    ]
    if cfg["random_baseline"]:
        baseline = random_explanations(graphs, cfg["seed"])
        reports.append(
            evaluate_explanations(
                baseline,
                graphs,
                model,
                dataset.case_id,
                "random",
                k=cfg["k"],
                shots=_shots_or_none(cfg["shots"]),
                seed=cfg["seed"],
                fidelity_trials=cfg["fidelity_trials"],
            )
        )
    write_manifest(out, "evaluate", cfg)
    csv_lines = ["method,metric,mean,std"]
    for rep in reports:
        csv_lines += rep.to_csv().splitlines()[1:]
    (out / "report.csv").write_text("\n".join(csv_lines) + "\n")
    (out / "report.json").write_text(
        json.dumps([rep.to_dict() for rep in reports], indent=2) + "\n"
    )
    print(f"wrote {out / 'report.csv'}")
    return 0


def cmd_plan(args: argparse.Namespace) -> int:
    defaults = {"eps": None, "delta": None, "graphs": 1, "stats": 1}
    cfg = resolve_config(
        defaults,
        args.config,
        {"eps": args.eps, "delta": args.delta, "graphs": args.graphs, "stats": args.stats},
    )
    if cfg["eps"] is None or cfg["delta"] is None:
        raise ConfigError("eps and delta are required")
    plan = make_plan(cfg["eps"], cfg["delta"], cfg["graphs"], cfg["stats"])
    text = json.dumps(plan.to_dict(), indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        write_manifest(out, "plan", cfg)
        (out / "plan.json").write_text(text + "\n")
    return 0


def cmd_flip_test(args: argparse.Namespace) -> int:
    defaults = {
        "dataset": None,
        "checkpoint": None,
        "split": "test",
        "trials": 50,
        "shots": 2000,
        "seed": 0,
    }
    cfg = resolve_config(
        defaults,
        args.config,
        {
            "dataset": args.dataset,
            "checkpoint": args.checkpoint,
            "split": args.split,
            "trials": args.trials,
            "shots": args.shots,
            "seed": args.seed,
        },
    )
    if not cfg["dataset"] or not cfg["checkpoint"]:
        raise ConfigError("dataset and checkpoint paths are required")
    dataset = load_dataset(cfg["dataset"])
    model = load_checkpoint(cfg["checkpoint"])
    graphs = _select_split(dataset, cfg["split"])
    out = Path(args.out)
    rows = []
    payload = []
    for g in graphs:
        flips = [
            flip_probability(
                g,
                model,
                node,
                trials=cfg["trials"],
                shots=_shots_or_none(cfg["shots"]),
                seed=spawn_seed(cfg["seed"], TAG_FLIP, g.id, node),
            )
            for node in range(g.num_nodes)
        ]
        payload.append(
            {"graph_id": g.id, "targets": sorted(g.targets), "flip": flips}
        )
        rows += [f"{g.id},{node},{flips[node]!r}" for node in range(g.num_nodes)]
    write_manifest(out, "flip-test", cfg)
    (out / "flips.json").write_text(json.dumps(payload, indent=2) + "\n")
    (out / "flips.csv").write_text("graph_id,node,flip\n" + "\n".join(rows) + "\n")
    print(f"wrote {out / 'flips.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Ablation sweep
# ---------------------------------------------------------------------------

ABLATE_AXES = ("perturbation", "surrogate", "measurement", "lam")


def _ablate_cells(axes: dict) -> list[dict]:
    names = [a for a in ABLATE_AXES if a in axes]
    cells = []
    for combo in itertools.product(*(axes[a] for a in names)):
        cells.append(dict(zip(names, combo)))
    return cells


def cmd_ablate(args: argparse.Namespace) -> int:
    if not args.config:
        raise ConfigError("ablate requires --config with the sweep matrix")
    matrix = _load_config_file(args.config)
    for key in ("dataset", "checkpoint"):
        if key not in matrix:
            raise DataError(f"ablation config is missing {key!r}")
    dataset = load_dataset(matrix["dataset"])
    model = load_checkpoint(matrix["checkpoint"])
    graphs = dataset.test
    seed = int(matrix.get("seed", 0))
    base = dict(EXPLAIN_DEFAULTS)
    base.update({"seed": seed, "compute_flips": False})
    base.update(matrix.get("base", {}))
    axes = matrix.get("axes", {})
    unknown = set(axes) - set(ABLATE_AXES)
    if unknown:
        raise ConfigError(f"unknown ablation axes: {sorted(unknown)}")
    out = Path(args.out)
    # the manifest stores the matrix itself, so it doubles as an ablate config
    write_manifest(out, "ablate", matrix)

    # The evaluation passes (perturb + model queries) do not depend on the
    # surrogate or on lam, so cells sharing the remaining knobs reuse them.
    pass_cache: dict[tuple, list] = {}

    def cell_config(cell: dict) -> dict:
        cfg = dict(base)
        cfg.update({k: v for k, v in cell.items() if k != "measurement"})
        if cell.get("measurement") == "single_shot":
            cfg["num_surrogates"] = 1
            cfg["shots"] = 1
        return cfg

    def passes_for(graph: Graph, cfg: dict) -> list:
        graph_seed = spawn_seed(seed, TAG_EXPLAIN, graph.id)
        key = (
            graph.id,
            cfg["perturbation"],
            cfg["num_perturbations"],
            cfg["removal_count"],
            cfg["walk_length"],
            cfg["element_kind"],
            cfg["shots"],
            cfg["num_surrogates"],
        )
        if key not in pass_cache:
            config = _ensemble_config({**cfg, "seed": graph_seed})
            pass_cache[key] = [
                surrogate_pass(graph, model, config, i)
                for i in range(config.num_surrogates)
            ]
        return pass_cache[key]

    rows = ["perturbation,surrogate,measurement,lam,status,metric,mean,std"]
    results = []
    for cell in _ablate_cells(axes):
        label = {a: cell.get(a, "-") for a in ABLATE_AXES}
        try:
            cfg = cell_config(cell)
            explanations = []
            for g in graphs:
                graph_seed = spawn_seed(seed, TAG_EXPLAIN, g.id)
                config = _ensemble_config({**cfg, "seed": graph_seed})
                passes = passes_for(g, cfg)
                score_rows, bases, nonconv = [], [], []
                for i, (pset, b) in enumerate(passes):
                    fit = fit_surrogate(config, g, pset.masks, pset.outputs)
                    score_rows.append(fit.scores)
                    bases.append(b)
                    if not fit.converged:
                        nonconv.append(i)
                explanations.append(
                    summarize_ensemble(
                        g, model, config, np.vstack(score_rows), np.array(bases), nonconv
                    )
                )
            report = evaluate_explanations(
                explanations,
                graphs,
                model,
                dataset.case_id,
                cfg["surrogate"],
                shots=_shots_or_none(base["shots"]),
                seed=seed,
            )
            results.append({"cell": label, "status": "ok", "report": report.to_dict()})
            for name, v in report.values.items():
                rows.append(
                    f"{label['perturbation']},{label['surrogate']},{label['measurement']},"
                    f"{label['lam']},ok,{name},{v.mean!r},{v.std!r}"
                )
        except QGLimeError as exc:
            results.append({"cell": label, "status": f"failed: {exc}"})
            rows.append(
                f"{label['perturbation']},{label['surrogate']},{label['measurement']},"
                f"{label['lam']},failed,,,"
            )
    (out / "ablation_summary.csv").write_text("\n".join(rows) + "\n")
    (out / "ablation_results.json").write_text(json.dumps(results, indent=2) + "\n")
    print(f"wrote {out / 'ablation_summary.csv'} ({len(results)} cells)")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qglime",
        description="Train and explain a statevector-simulated quantum graph classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a benchmark dataset")
    p.add_argument("--case", type=int, choices=(1, 2))
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the classifier")
    p.add_argument("--dataset")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--shots", type=int, help="0 trains on exact marginals")
    p.add_argument("--seed", type=int)
    p.add_argument("--gradient-method", choices=("analytic", "shift"), dest="gradient_method")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("explain", help="explain model predictions on a dataset split")
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--surrogate", choices=tuple(SURROGATE_FLAG) + tuple(SURROGATE_FLAG.values()))
    p.add_argument("--perturb", choices=tuple(PERTURB_FLAG) + tuple(PERTURB_FLAG.values()))
    p.add_argument("--num-surrogates", "-m", type=int, dest="num_surrogates")
    p.add_argument("--num-perturbations", "-p", type=int, dest="num_perturbations")
    p.add_argument("--removal-count", "-r", type=int, dest="removal_count")
    p.add_argument("--walk-length", type=int, dest="walk_length")
    p.add_argument("--element-kind", choices=("nodes", "edges"), dest="element_kind")
    p.add_argument("--shots", type=int, help="0 evaluates exact probabilities")
    p.add_argument("--lam", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--flip-trials", type=int, dest="flip_trials")
    p.add_argument("--dump-perturbations", action="store_true")
    p.add_argument("--jobs", type=int, help=f"parallel workers (default ${JOBS_ENV} or 1)")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", help="score explanations against ground truth")
    p.add_argument("--explanations")
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--k", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fidelity-trials", type=int, dest="fidelity_trials")
    p.add_argument("--random-baseline", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plan", help="DKW minimum ensemble size")
    p.add_argument("--eps", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--graphs", type=int)
    p.add_argument("--stats", type=int)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("ablate", help="run the component ablation sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("flip-test", help="per-node removal flip probabilities")
    p.add_argument("--dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--trials", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flip_test)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except QGLimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
