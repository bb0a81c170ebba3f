"""Command line front end.

Subcommands: encode, train, attack, defend <name>, table. Every command
reads a JSON config file; a few common settings can be overridden with
flags. Artifacts land under <output root>/<experiment_id>/, where the
output root comes from --out, the TABPOISON_OUT environment variable, or
defaults to ./runs. Each JSON artifact carries a provenance block
(experiment id, config digest, seed), and with "deterministic": true
(the default) a re-run writes byte-identical files.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import csv as csvmod
import json
import os
import sys
from pathlib import Path

import numpy as np

from .attack import AttackConfig, PoisonPlan, Trigger
from .data import Dataset, Schema, SplitSpec, load_csv, split, write_csv
from .datagen import census_surrogate_dataset, gaussian_blob_dataset
from .defenses import (
    IsolationForestConfig,
    NeuralCleanseConfig,
    beatrix,
    dbscan,
    fine_pruning_eval,
    isolation_forest,
    neural_cleanse,
    spectral_signatures,
)
from .encoding import conv, fit, load_book, save_book
from .errors import ConfigError, DataError, NumericalError, TabpoisonError
from .metrics import confusion, flags_from_indices
from .models import Forest, Mlp, build_vocabulary, ordinal_encode
from .pipeline import (
    ExperimentSpec,
    ForestParams,
    MlpParams,
    carve_defense_split,
    config_digest,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

GENERATORS = {
    "blob": gaussian_blob_dataset,
    "census": census_surrogate_dataset,
}


# --- config handling --------------------------------------------------------

def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return cfg


def apply_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = json.loads(json.dumps(cfg))  # deep copy
    if getattr(args, "dataset", None):
        name = args.dataset
        if name in GENERATORS:
            cfg["dataset"] = {"generator": name, **{
                k: v for k, v in cfg.get("dataset", {}).items() if k in ("n", "seed")
            }}
        else:
            cfg.setdefault("dataset", {})
            cfg["dataset"].pop("generator", None)
            cfg["dataset"]["path"] = name
    if getattr(args, "model", None):
        cfg.setdefault("victim", {})["kind"] = args.model
    if getattr(args, "target_label", None) is not None:
        cfg.setdefault("attack", {})["target_label"] = args.target_label
    if getattr(args, "epsilon", None) is not None:
        cfg.setdefault("attack", {})["epsilon"] = args.epsilon
    if getattr(args, "mu", None) is not None:
        cfg.setdefault("attack", {})["mu"] = args.mu
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def resolve_dataset(cfg: dict) -> tuple[Dataset, str]:
    dcfg = cfg.get("dataset")
    if not dcfg:
        raise ConfigError("config is missing a 'dataset' section")
    if "generator" in dcfg:
        name = dcfg["generator"]
        if name not in GENERATORS:
            raise ConfigError(f"unknown generator {name!r}; choices: {sorted(GENERATORS)}")
        n = int(dcfg.get("n", 2000 if name == "blob" else 32561))
        seed = int(dcfg.get("seed", cfg.get("seed", 0)))
        return GENERATORS[name](n=n, seed=seed), name
    if "path" in dcfg:
        if "schema" not in dcfg:
            raise ConfigError("a csv dataset needs a 'schema' in the dataset section")
        schema = Schema.from_dict(dcfg["schema"])
        ds = load_csv(dcfg["path"], schema)
        return ds, Path(dcfg["path"]).stem
    raise ConfigError("dataset section needs either 'generator' or 'path'")


def resolve_split(cfg: dict, ds: Dataset) -> tuple[Dataset, Dataset]:
    scfg = cfg.get("split", {})
    spec = SplitSpec(
        test_fraction=float(scfg.get("test_fraction", 0.2)),
        seed=int(scfg.get("seed", cfg.get("seed", 0))),
        stratified=bool(scfg.get("stratified", True)),
    )
    return split(ds, spec)


def _target_index(schema: Schema, raw) -> int:
    return schema.class_index(str(raw))


def build_spec(cfg: dict, schema: Schema, experiment_id: str) -> ExperimentSpec:
    acfg = dict(cfg.get("attack", {}))
    if "target_label" not in acfg:
        raise ConfigError("attack section needs 'target_label'")
    target = _target_index(schema, acfg.pop("target_label"))
    acfg.setdefault("seed", int(cfg.get("seed", 0)))
    try:
        attack_cfg = AttackConfig(target_label=target, **acfg)
    except TypeError as exc:
        raise ConfigError(f"bad attack settings: {exc}") from None

    def mlp_params(d: dict) -> MlpParams:
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(int(h) for h in d["hidden"])
        try:
            return MlpParams(**d)
        except TypeError as exc:
            raise ConfigError(f"bad mlp settings: {exc}") from None

    vcfg = cfg.get("victim", {})
    try:
        forest_params = ForestParams(**vcfg.get("forest", {}))
    except TypeError as exc:
        raise ConfigError(f"bad forest settings: {exc}") from None
    return ExperimentSpec(
        attack=attack_cfg,
        surrogate=mlp_params(cfg.get("surrogate", {})),
        victim_kind=vcfg.get("kind", "mlp"),
        victim_mlp=mlp_params(vcfg.get("mlp", cfg.get("surrogate", {}))),
        victim_forest=forest_params,
        defense_val_fraction=float(cfg.get("defense", {}).get("val_fraction", 0.25)),
        experiment_id=experiment_id,
        deterministic=bool(cfg.get("deterministic", True)),
    )


# --- output helpers ---------------------------------------------------------

def out_root(args: argparse.Namespace) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("TABPOISON_OUT", "runs"))


def run_dir(args: argparse.Namespace, experiment_id: str) -> Path:
    d = out_root(args) / experiment_id
    d.mkdir(parents=True, exist_ok=True)
    return d


def provenance(cfg: dict) -> dict:
    return {
        "experiment_id": cfg.get("experiment_id", "exp"),
        "config_digest": config_digest(cfg),
        "seed": int(cfg.get("seed", 0)),
    }


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- commands ---------------------------------------------------------------

def cmd_encode(args: argparse.Namespace) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    ds, name = resolve_dataset(cfg)
    train_raw, _ = resolve_split(cfg, ds)
    book = fit(train_raw)
    encoded = conv(train_raw, book)
    exp_id = cfg.get("experiment_id", f"encode-{name}")
    d = run_dir(args, exp_id)
    save_book(book, str(d / "book.json"))
    _append_provenance(d / "book.json", cfg)
    write_csv(encoded, str(d / "train_encoded.csv"))
    print(f"book: {d / 'book.json'}")
    print(f"encoded train split: {d / 'train_encoded.csv'} ({encoded.n_rows} rows)")
    return EXIT_OK


def _append_provenance(path: Path, cfg: dict) -> None:
    with open(path) as fh:
        payload = json.load(fh)
    payload["provenance"] = provenance(cfg)
    write_json(path, payload)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    ds, name = resolve_dataset(cfg)
    train_raw, test_raw = resolve_split(cfg, ds)
    exp_id = cfg.get("experiment_id", f"train-{name}")
    spec = _spec_for_train(cfg, ds.schema, exp_id)
    d = run_dir(args, exp_id)

    vocab = build_vocabulary(train_raw)
    X = ordinal_encode(train_raw, vocab).matrix()
    y = train_raw.labels
    seed = int(cfg.get("seed", 0)) * 1000003 + 3
    n_classes = ds.schema.n_classes
    if spec.victim_kind == "mlp":
        model = Mlp(spec.victim_mlp.to_config(X.shape[1], n_classes, seed)).fit(X, y)
        model.save(str(d / "model.json"))
    else:
        model = Forest(spec.victim_forest.to_config(seed), n_classes).fit(X, y)
        model.save(str(d / "model.json"))
    _, eval_raw = carve_defense_split(test_raw, int(cfg.get("seed", 0)), spec.defense_val_fraction)
    X_eval = ordinal_encode(eval_raw, vocab).matrix()
    acc = float(np.mean(model.predict(X_eval) == eval_raw.labels))
    report = {
        "command": "train",
        "dataset": name,
        "model": spec.victim_kind,
        "n_train": train_raw.n_rows,
        "n_eval": len(eval_raw.labels),
        "accuracy": acc,
        "provenance": provenance(cfg),
    }
    write_json(d / "train_report.json", report)
    write_json(d / "vocab.json", {"vocabulary": vocab, "provenance": provenance(cfg)})
    print(f"model: {d / 'model.json'}")
    print(f"accuracy: {acc:.4f} on {len(eval_raw.labels)} rows")
    return EXIT_OK


def _spec_for_train(cfg: dict, schema: Schema, exp_id: str) -> ExperimentSpec:
    # training needs no attack settings; fill a placeholder target
    cfg = dict(cfg)
    cfg.setdefault("attack", {})
    cfg["attack"].setdefault("target_label", schema.classes[0])
    return build_spec(cfg, schema, exp_id)


def cmd_attack(args: argparse.Namespace) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    ds, name = resolve_dataset(cfg)
    train_raw, test_raw = resolve_split(cfg, ds)
    exp_id = cfg.get("experiment_id", f"attack-{name}")
    cfg.setdefault("experiment_id", exp_id)
    spec = build_spec(cfg, ds.schema, exp_id)
    d = run_dir(args, exp_id)

    result = run_experiment(train_raw, test_raw, spec)

    prov = provenance(cfg)
    write_json(d / "config.json", {**cfg, "dataset_name": name})
    save_book(result.book, str(d / "book.json"))
    _append_provenance(d / "book.json", cfg)
    trigger_payload = result.trigger.to_dict()
    trigger_payload["provenance"] = prov
    write_json(d / "trigger.json", trigger_payload)
    plan_payload = result.plan.to_dict()
    plan_payload["provenance"] = prov
    write_json(d / "plan.json", plan_payload)
    write_csv(result.released, str(d / "released.csv"))
    result.victim.save(str(d / "victim.json"))
    result.clean_model.save(str(d / "clean_model.json"))
    result.surrogate.save(str(d / "surrogate.json"))
    write_json(d / "vocab.json", {
        "released": result.vocab_released,
        "clean": result.vocab_clean,
        "provenance": prov,
    })
    report = result.report_dict()
    report["dataset"] = name
    report["provenance"] = prov
    write_json(d / "report.json", report)

    print(f"run dir: {d}")
    print(f"BA  {result.ba.value:.4f}  ({result.ba.numerator}/{result.ba.denominator})")
    print(f"CDA {result.cda.value:.4f}  ({result.cda.numerator}/{result.cda.denominator})")
    print(f"ASR {result.asr.value:.4f}  ({result.asr.numerator}/{result.asr.denominator})")
    print(f"ASR(all rows) {result.asr_all.value:.4f}")
    return EXIT_OK


def _load_run(args: argparse.Namespace) -> dict:
    d = Path(args.run)
    if not (d / "config.json").exists():
        raise ConfigError(f"{d} does not look like an attack run (no config.json)")
    with open(d / "config.json") as fh:
        cfg = json.load(fh)
    return {"dir": d, "cfg": cfg}


def cmd_defend(args: argparse.Namespace) -> int:
    run = _load_run(args)
    d: Path = run["dir"]
    cfg: dict = run["cfg"]
    name = args.name

    ds, _ = resolve_dataset(cfg)
    train_raw, test_raw = resolve_split(cfg, ds)
    spec = build_spec(cfg, ds.schema, cfg.get("experiment_id", "exp"))
    target = spec.attack.target_label

    with open(d / "vocab.json") as fh:
        vocab_released = json.load(fh)["released"]
    book = load_book(str(d / "book.json"))
    trigger = Trigger.load(str(d / "trigger.json"))
    plan = PoisonPlan.load(str(d / "plan.json"))
    released = load_csv(str(d / "released.csv"), ds.schema)
    victim_payload = json.loads((d / "victim.json").read_text())
    if victim_payload.get("format", "").endswith("mlp/1"):
        victim = Mlp.from_dict(victim_payload)
        victim_is_mlp = True
    else:
        victim = Forest.from_dict(victim_payload)
        victim_is_mlp = False

    X_train = ordinal_encode(released, vocab_released).matrix()
    y_train = released.labels
    val_raw, eval_raw = carve_defense_split(test_raw, spec.attack.seed, spec.defense_val_fraction)
    X_val = ordinal_encode(val_raw, vocab_released).matrix()
    y_val = val_raw.labels

    dcfg = cfg.get("defense", {})
    model_free = name in ("iforest", "dbscan")
    if not victim_is_mlp and not model_free:
        raise ConfigError(f"defense {name!r} needs an MLP victim")

    if name == "spectral":
        params = dcfg.get("spectral", {})
        report = spectral_signatures(
            victim, X_train, y_train,
            expected_poison_fraction=float(params.get("expected_poison_fraction",
                                                      spec.attack.epsilon)),
            per_class_removal=bool(params.get("per_class_removal", False)),
        )
        det = report.score_against(plan.indices)
        payload = report.to_dict()
        payload["poison_recall"] = det.recall
    elif name == "cleanse":
        params = dcfg.get("cleanse", {})
        nc_cfg = NeuralCleanseConfig(
            learning_rate=float(params.get("learning_rate", 0.1)),
            max_iters=int(params.get("max_iters", 300)),
            l1_weight=float(params.get("l1_weight", 0.01)),
        )
        report = neural_cleanse(victim, X_val, X_train.min(axis=0), X_train.max(axis=0), nc_cfg)
        payload = report.to_dict()
        payload["target_flagged"] = bool(report.flagged[target])
    elif name == "beatrix":
        params = dcfg.get("beatrix", {})
        clean_by_class = {c: X_val[y_val == c] for c in np.unique(y_val)}
        suspect_by_class = {c: X_train[y_train == c] for c in np.unique(y_train)}
        report = beatrix(
            victim, clean_by_class, suspect_by_class,
            n_bootstrap=int(params.get("n_bootstrap", 200)),
            seed=int(params.get("seed", spec.attack.seed)),
        )
        payload = report.to_dict()
        payload["target_flagged"] = target in report.flagged
    elif name == "fine-prune":
        params = dcfg.get("fine_prune", {})
        eval_enc = ordinal_encode(eval_raw, vocab_released).matrix()
        trig_raw = _triggered_copy(eval_raw, trigger, book)
        trig_enc = ordinal_encode(trig_raw, vocab_released).matrix()
        _, report = fine_pruning_eval(
            victim, X_val, y_val, eval_enc, eval_raw.labels, trig_enc, target,
            rate=float(params.get("rate", 0.9)),
            epochs=int(params.get("epochs", 5)),
        )
        payload = report.to_dict()
    elif name == "iforest":
        params = dcfg.get("iforest", {})
        if_cfg = IsolationForestConfig(
            n_trees=int(params.get("n_trees", 100)),
            subsample=int(params.get("subsample", 256)),
            contamination=float(params.get("contamination", spec.attack.epsilon)),
            seed=int(params.get("seed", spec.attack.seed)),
        )
        report = isolation_forest(X_train, if_cfg)
        det = confusion(
            flags_from_indices(report.flagged_indices, len(y_train)),
            flags_from_indices(plan.indices, len(y_train)),
        )
        payload = report.to_dict()
        payload["detection"] = det.to_dict()
    elif name == "dbscan":
        params = dcfg.get("dbscan", {})
        result = dbscan(
            X_train,
            eps=float(params.get("eps", 0.5)),
            min_pts=int(params.get("min_pts", 5)),
        )
        det = confusion(
            flags_from_indices(result.noise_indices, len(y_train)),
            flags_from_indices(plan.indices, len(y_train)),
        )
        payload = result.to_dict()
        payload["detection"] = det.to_dict()
    else:
        raise ConfigError(f"unknown defense {name!r}")

    payload["provenance"] = provenance(cfg)
    out_path = d / f"defense_{name}.json"
    write_json(out_path, payload)
    print(f"defense report: {out_path}")
    return EXIT_OK


def _triggered_copy(ds_raw: Dataset, trigger: Trigger, book) -> Dataset:
    from .attack import apply_trigger_released

    return apply_trigger_released(ds_raw, trigger, book)


def cmd_table(args: argparse.Namespace) -> int:
    root = Path(args.runs)
    reports = sorted(root.glob("*/report.json"))
    if not reports:
        raise DataError(f"no report.json files under {root}")
    rows = []
    for path in reports:
        with open(path) as fh:
            rep = json.load(fh)
        rows.append(rep)
    epsilons = sorted({r["epsilon"] for r in rows})
    groups: dict[tuple, dict] = {}
    for r in rows:
        key = (r.get("dataset", "?"), r["victim_kind"], r["target_label"], r["mu"])
        groups.setdefault(key, {})[r["epsilon"]] = r
    out_path = Path(args.table_out) if args.table_out else root / "table.csv"
    with open(out_path, "w", newline="") as fh:
        writer = csvmod.writer(fh)
        writer.writerow(
            ["dataset", "victim", "target", "mu"]
            + [f"cda@eps={e}" for e in epsilons]
            + [f"asr@eps={e}" for e in epsilons]
        )
        for key in sorted(groups):
            dataset, victim, tgt, mu = key
            row = [dataset, victim, tgt, mu]
            for e in epsilons:
                r = groups[key].get(e)
                row.append(f"{r['cda']['value']:.4f}" if r else "")
            for e in epsilons:
                r = groups[key].get(e)
                row.append(f"{r['asr']['value']:.4f}" if r else "")
            writer.writerow(row)
    print(f"table: {out_path}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabpoison",
        description="Backdoor poisoning experiments on tabular data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output root (default $TABPOISON_OUT or ./runs)")
        p.add_argument("--dataset", help="generator name (blob, census) or csv path")
        p.add_argument("--model", choices=["mlp", "forest"], help="victim model kind")
        p.add_argument("--target-label", help="target class value")
        p.add_argument("--epsilon", type=float, help="poison fraction")
        p.add_argument("--mu", type=float, help="candidate fraction")
        p.add_argument("--seed", type=int, help="base seed")

    p = sub.add_parser("encode", help="fit the frequency encoding and dump the book")
    common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train a clean model on the dataset")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run the full poisoning pipeline")
    common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="run a defense against a stored attack run")
    p.add_argument("name", choices=["spectral", "cleanse", "beatrix",
                                    "fine-prune", "iforest", "dbscan"])
    p.add_argument("--run", required=True, help="attack run directory")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("table", help="collate run reports into a csv grid")
    p.add_argument("--runs", required=True, help="directory containing run subdirectories")
    p.add_argument("--table-out", help="output csv path")
    p.set_defaults(func=cmd_table)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TabpoisonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
