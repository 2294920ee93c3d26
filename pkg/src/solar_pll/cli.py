"""Command-line entry point: ``solar {gen-data,train,eval,solve,report}``.

Every option can also be given in a JSON ``--config`` file, grouped by
section (``gen``, ``sinkhorn``, ``selection``, ``train``, ``prior``) plus a
top-level ``seed``. Command-line flags override the file.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .core import DatasetError, PLLDataset, load_dataset, save_dataset
from .datagen import GenConfig, make_dataset
from .evaluation import ShotGroups, evaluate, read_metrics, report
from .model import ClassifierModel, TrainingDiverged
from .prior import PriorConfig
from .selection import SelectionConfig
from .sinkhorn import InfeasiblePriorError, SinkhornConfig, refine_labels
from .trainer import SolarConfig, TrainConfig, train

EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 2, 3, 4

SECTIONS = {
    "gen": GenConfig,
    "sinkhorn": SinkhornConfig,
    "selection": SelectionConfig,
    "train": TrainConfig,
    "prior": PriorConfig,
}

# flag dest -> (config section, field)
GEN_FLAGS = {
    "classes": ("gen", "num_classes"),
    "dim": ("gen", "dim"),
    "n_head": ("gen", "n_head"),
    "gamma": ("gen", "imbalance_ratio"),
    "phi": ("gen", "phi"),
    "separation": ("gen", "separation"),
    "n_test_per_class": ("gen", "n_test_per_class"),
}
TRAIN_FLAGS = {
    "lam": ("sinkhorn", "lam"),
    "sinkhorn_iters": ("sinkhorn", "max_iters"),
    "sinkhorn_tol": ("sinkhorn", "tol"),
    "relax_epsilon": ("sinkhorn", "relax_epsilon"),
    "rho_start": ("selection", "rho_start"),
    "rho_end": ("selection", "rho_end"),
    "rho_ramp_epochs": ("selection", "ramp_epochs"),
    "tau": ("selection", "tau"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "learning_rate"),
    "momentum": ("train", "momentum"),
    "eta_max": ("train", "eta_max"),
    "eta_ramp_epochs": ("train", "eta_ramp_epochs"),
    "mixup_concentration": ("train", "mixup_concentration"),
    "sigma_weak": ("train", "sigma_weak"),
    "sigma_strong": ("train", "sigma_strong"),
    "queue_multiplier": ("train", "queue_multiplier"),
    "arch": ("train", "arch"),
    "hidden": ("train", "hidden"),
    "baseline": ("train", "baseline"),
    "ce_view": ("train", "ce_view"),
    "prior_init": ("prior", "init"),
    "pre_estimate_epochs": ("prior", "pre_estimate_epochs"),
    "mu_pre": ("prior", "pre_stage_mu"),
    "mu": ("prior", "main_stage_mu"),
    "prior_counting": ("prior", "counting"),
}


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    return f"{x:.6g}"


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    unknown = set(doc) - set(SECTIONS) - {"seed"}
    if unknown:
        raise UsageError(f"unknown config sections: {sorted(unknown)}")
    return doc


def _merge(doc: dict, args, flag_map: dict) -> dict:
    merged = {name: dict(doc.get(name, {})) for name in SECTIONS}
    for dest, (section, key) in flag_map.items():
        value = getattr(args, dest, None)
        if value is not None:
            merged[section][key] = value
    return merged


def _build(section: str, values: dict):
    cls = SECTIONS[section]
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown {section} options: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {section} config: {exc}") from exc


def _resolve_seed(args, doc: dict) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    if "seed" in doc:
        return int(doc["seed"])
    env = os.environ.get("SOLAR_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"SOLAR_SEED is not an integer: {env!r}") from exc
    raise UsageError("a seed is required (--seed, config 'seed' or SOLAR_SEED)")


def _jsonable(obj):
    if isinstance(obj, tuple):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=1) + "\n")


def _parse_flip(spec: str):
    if spec is None:
        return {}
    if spec == "banded":
        return {"flip": "banded"}
    if spec.startswith("uniform:"):
        try:
            return {"flip": "uniform", "phi": float(spec.split(":", 1)[1])}
        except ValueError as exc:
            raise UsageError(f"bad --flip value {spec!r}") from exc
    if spec.startswith("matrix:"):
        path = spec.split(":", 1)[1]
        try:
            matrix = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read flip matrix {path}: {exc}") from exc
        return {"flip": "matrix", "flip_matrix": tuple(tuple(row) for row in matrix)}
    raise UsageError(f"bad --flip value {spec!r} (uniform:<phi>, banded or matrix:<file>)")


def cmd_gen_data(args) -> int:
    doc = _load_config(args.config)
    sections = _merge(doc, args, GEN_FLAGS)
    sections["gen"].update(_parse_flip(args.flip))
    if "num_classes" not in sections["gen"]:
        raise UsageError("--classes is required")
    sections["gen"]["seed"] = _resolve_seed(args, doc)
    if isinstance(sections["gen"].get("flip_matrix"), list):
        sections["gen"]["flip_matrix"] = tuple(tuple(r) for r in sections["gen"]["flip_matrix"])
    gen = _build("gen", sections["gen"])
    try:
        train_ds, test_ds = make_dataset(gen)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train_ds, out / "train.json")
    save_dataset(test_ds, out / "test.json")
    _write_json(out / "effective_config.json", {"seed": gen.seed, "gen": asdict(gen)})
    counts = train_ds.class_counts
    print(f"n={train_ds.n} L={train_ds.num_classes} gamma={_fmt(counts[0] / counts[-1])} "
          f"mean_candidates={_fmt(train_ds.mean_candidates())}")
    return 0


def _solar_config(sections: dict) -> SolarConfig:
    return SolarConfig(**{name: _build(name, sections[name]) for name in ("sinkhorn", "selection", "train", "prior")})


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    sections = _merge(doc, args, TRAIN_FLAGS)
    t = sections["train"]
    if args.no_cr:
        t["use_cr"] = False
    if args.no_mixup:
        t["use_mixup"] = False
    if args.no_selection:
        t["selection"] = "none"
    if args.global_selection:
        t["selection"] = "global"
    seed = _resolve_seed(args, doc)
    config = _solar_config(sections)

    ds = load_dataset(args.data)
    eval_set, groups = None, None
    if args.test is not None:
        test = load_dataset(args.test)
        if test.true_labels is None:
            raise DatasetError("test set needs true labels")
        eval_set = (test.features, test.true_labels)
    if ds.class_counts is not None:
        groups = ShotGroups.thirds(ds.num_classes, ds.class_counts)

    out = Path(args.out_dir)
    (out / "priors").mkdir(parents=True, exist_ok=True)
    effective = {"seed": seed, **{k: asdict(v) for k, v in asdict_shallow(config).items()}}
    _write_json(out / "effective_config.json", effective)

    metrics_path = out / "metrics.jsonl"
    with metrics_path.open("w") as stream:
        def on_epoch(record):
            stream.write(json.dumps(record) + "\n")
            stream.flush()
            _write_json(out / "priors" / f"epoch_{record['epoch']:04d}.json", record["prior"])
            if not args.quiet:
                acc = record.get("acc_overall")
                extra = "" if acc is None else f" acc={_fmt(acc)}"
                print(f"epoch {record['epoch']} loss={_fmt(record['loss'])} "
                      f"reliable={_fmt(record['reliable_fraction'])}{extra}")

        result = train(ds, config, seed=seed, eval_set=eval_set, groups=groups,
                       true_prior=ds.true_prior(), on_epoch=on_epoch)
    result.model.save(out / "model.json")
    _write_json(out / "prior.json", result.prior.tolist())
    return 0


def asdict_shallow(config: SolarConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}


def cmd_eval(args) -> int:
    model = ClassifierModel.load(args.model)
    ds = load_dataset(args.data)
    if ds.true_labels is None:
        raise DatasetError("evaluation needs true labels")
    prior = None
    if args.logit_adjust:
        if args.prior is None:
            raise UsageError("--logit-adjust needs --prior")
        prior = np.array(json.loads(Path(args.prior).read_text()), dtype=np.float64)
    groups = ShotGroups.thirds(ds.num_classes)
    metrics = evaluate(model, ds.features, ds.true_labels, groups, prior=prior, zeta=args.logit_adjust or 0.0)
    metrics["zeta"] = args.logit_adjust or 0.0
    text = json.dumps(metrics, indent=1)
    if args.output:
        Path(args.output).write_text(text + "\n")
    print(" ".join(f"{k}={'absent' if v is None else _fmt(v)}" for k, v in metrics.items()))
    return 0


def _read_solver_input(spec: str) -> str:
    if spec.startswith("fixture:"):
        name = spec.split(":", 1)[1]
        res = resources.files("solar_pll") / "fixtures" / f"{name}.json"
        if not res.is_file():
            raise UsageError(f"no packaged fixture named {name!r}")
        return res.read_text()
    return Path(spec).read_text()


def cmd_solve(args) -> int:
    try:
        doc = json.loads(_read_solver_input(args.input))
        P = np.array(doc["P"], dtype=np.float64)
        cand = doc["candidates"]
        r = np.array(doc["r"], dtype=np.float64)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise DatasetError(f"cannot read solver input: {exc}") from exc
    from .core import masks_from_indices

    masks = masks_from_indices(cand, P.shape[1])
    cfg = _build("sinkhorn", doc.get("config") or {})
    try:
        res = refine_labels(P, masks, r, cfg)
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    out = {
        "Q": res.pseudo_labels.tolist(),
        "diagnostics": {
            "column_marginal_error": res.column_marginal_error,
            "row_marginal_error": res.row_marginal_error,
            "iterations_used": res.iterations_used,
            "relaxed": res.relaxed,
            "status": res.status,
        },
    }
    text = json.dumps(out, indent=1)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_report(args) -> int:
    history = read_metrics(args.metrics)
    if not history:
        raise DatasetError("metrics stream is empty")
    report(history, args.output, args.format)
    print(f"wrote {len(history)} rows to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic long-tailed partial-label dataset")
    g.add_argument("--config")
    g.add_argument("--classes", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--n-head", type=int)
    g.add_argument("--gamma", type=float)
    g.add_argument("--phi", type=float)
    g.add_argument("--flip", help="uniform:<phi>, banded or matrix:<json file>")
    g.add_argument("--separation", type=float)
    g.add_argument("--n-test-per-class", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a classifier with the Sinkhorn label refinery")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--test")
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir", default=".")
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--lambda", type=float, dest="lam")
    for flag, kind in [
        ("--sinkhorn-iters", int), ("--sinkhorn-tol", float), ("--relax-epsilon", float),
        ("--rho-start", float), ("--rho-end", float), ("--rho-ramp-epochs", int), ("--tau", float),
        ("--epochs", int), ("--batch-size", int), ("--lr", float), ("--momentum", float),
        ("--eta-max", float), ("--eta-ramp-epochs", int), ("--mixup-concentration", float),
        ("--sigma-weak", float), ("--sigma-strong", float), ("--queue-multiplier", int), ("--hidden", int),
        ("--pre-estimate-epochs", int), ("--mu-pre", float), ("--mu", float),
    ]:
        t.add_argument(flag, type=kind)
    t.add_argument("--arch", choices=ClassifierModel.KINDS)
    t.add_argument("--baseline", choices=("solar", "proden"))
    t.add_argument("--ce-view", choices=("weak", "clean"))
    t.add_argument("--prior-init", choices=("uniform", "candidate_count"))
    t.add_argument("--prior-counting", choices=("full", "online"))
    t.add_argument("--no-cr", action="store_true")
    t.add_argument("--no-mixup", action="store_true")
    t.add_argument("--no-selection", action="store_true")
    t.add_argument("--global-selection", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a saved model on a labelled dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--prior")
    e.add_argument("--logit-adjust", type=float, metavar="ZETA")
    e.add_argument("--output")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("solve", help="run the label refinery on a JSON problem")
    s.add_argument("--input", required=True, help="JSON file, or fixture:<name> for a packaged example")
    s.add_argument("--output")
    s.set_defaults(func=cmd_solve)

    r = sub.add_parser("report", help="turn a metrics stream into a table")
    r.add_argument("--metrics", required=True)
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--output", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "no_selection", False) and getattr(args, "global_selection", False):
        parser.error("--no-selection and --global-selection are mutually exclusive")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"solar: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, FileNotFoundError) as exc:
        print(f"solar: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, InfeasiblePriorError) as exc:
        print(f"solar: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
