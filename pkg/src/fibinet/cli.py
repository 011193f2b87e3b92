"""Command surface: train, eval, gradcheck, ablate, synth.

One JSON config file drives everything; --set patches any field by dotted
path, --seed replaces the top-level seed. Exit codes: 0 success, 1 runtime
failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .data import (
    FieldSchema,
    SyntheticSpec,
    generate_synthetic,
    load_tsv,
    split_train_test,
    write_tsv,
)
from .errors import CheckpointError, ConfigError, FibinetError
from .model import FiBiNet, ModelConfig, load_checkpoint
from .numeric import Rng
from .train import (
    TrainConfig,
    evaluate,
    grad_check,
    run_ablation,
    train,
    write_ablation_csv,
    write_log,
)

DEFAULT_CHECKPOINT = "model.fibn"
DEFAULT_LOG = "train_log.csv"
DEFAULT_ABLATION = "ablation.csv"

_TOP_KEYS = {"seed", "schema", "model", "train", "paths", "synth"}


def _parse_set_value(raw: str):
    # JSON when it parses, raw string otherwise; quote strings that look
    # numeric, e.g. --set model.combination_code='"10"'
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(config: dict, dotted: str, raw_value: str):
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigError(f"--set {'.'.join(keys)}: {key} is not a section")
        node = child
    node[keys[-1]] = _parse_set_value(raw_value)


def load_run_config(args) -> dict:
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                config = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config}: invalid JSON ({exc})") from exc
        if not isinstance(config, dict):
            raise ConfigError(f"config {args.config}: top level must be a JSON object")
    else:
        config = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set {item!r}: expected dotted.key=value")
        apply_override(config, key, value)
    if args.seed is not None:
        config["seed"] = args.seed
    unknown = set(config) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"config: unknown top-level keys {sorted(unknown)}")
    config.setdefault("seed", 0)
    return config


def _require(config: dict, section: str, key: str):
    value = config.get(section, {}).get(key)
    if value is None:
        raise ConfigError(f"{section}.{key}: required but missing")
    return value


def build_schema(config: dict) -> FieldSchema:
    if "schema" not in config:
        raise ConfigError("schema: required but missing")
    return FieldSchema.from_dict(config["schema"])


def build_model_config(config: dict, schema: FieldSchema) -> ModelConfig:
    model_dict = dict(config.get("model", {}))
    if "model" not in config or "k" not in model_dict:
        raise ConfigError("model.k: required but missing")
    model_dict.setdefault("f", schema.f)
    if "hidden_units" in model_dict:
        model_dict["hidden_units"] = tuple(model_dict["hidden_units"])
    return ModelConfig.from_dict(model_dict)


def build_train_config(config: dict) -> TrainConfig:
    train_dict = dict(config.get("train", {}))
    train_dict.setdefault("seed", config["seed"])
    return TrainConfig.from_dict(train_dict)


def _load_split(config: dict) -> tuple:
    """Training file minus a carved-out validation slice."""
    schema = build_schema(config)
    train_path = _require(config, "paths", "train")
    full, _ = load_tsv(train_path, schema)
    if full.size == 0:
        raise ConfigError(f"paths.train: {train_path} holds no usable rows")
    tcfg = build_train_config(config)
    split_seed = Rng(config["seed"]).child("valid_split").next_u64()
    train_set, valid_set = split_train_test(full, tcfg.valid_fraction, split_seed)
    if valid_set.size == 0 or train_set.size == 0:
        raise ConfigError("train.valid_fraction: split left an empty train or valid set")
    return schema, train_set, valid_set, tcfg


def cmd_train(args) -> int:
    config = load_run_config(args)
    schema, train_set, valid_set, tcfg = _load_split(config)
    model_config = build_model_config(config, schema)
    paths = config.get("paths", {})
    model, log = train(schema, model_config, train_set, valid_set, tcfg)
    model.save(paths.get("checkpoint", DEFAULT_CHECKPOINT))
    write_log(paths.get("log", DEFAULT_LOG), log)
    valid_rows = [row for row in log if row[1] == "valid"]
    if valid_rows:
        _, _, v_auc, v_loss, _ = valid_rows[-1]
        print(f"valid auc={v_auc:.6f} logloss={v_loss:.6f}")
    else:
        print("no validation rows (zero-epoch run)")
    return 0


def cmd_eval(args) -> int:
    config = load_run_config(args)
    paths = config.get("paths", {})
    ckpt_path = args.checkpoint or paths.get("checkpoint")
    data_path = args.data or paths.get("test")
    if ckpt_path is None:
        raise ConfigError("paths.checkpoint: required but missing")
    if data_path is None:
        raise ConfigError("paths.test: required but missing")
    schema, model_config, params = load_checkpoint(ckpt_path)
    _check_column_count(data_path, schema)
    dataset, _ = load_tsv(data_path, schema)
    if dataset.size == 0:
        raise ConfigError(f"paths.test: {data_path} holds no usable rows")
    model = FiBiNet(schema, model_config, params)
    auc_v, loss_v = evaluate(model, dataset)
    print(f"auc={auc_v:.6f} logloss={loss_v:.6f}")
    return 0


def _check_column_count(path, schema: FieldSchema):
    """A whole-file column mismatch is a schema problem, not dirty rows."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
    except OSError as exc:
        raise ConfigError(f"paths.test: {exc}") from exc
    if first:
        got = len(first.rstrip("\n").split("\t")) - 1
        if got != schema.f:
            raise ConfigError(
                f"data file has {got} feature columns but the checkpoint schema has {schema.f} fields"
            )


def _default_gradcheck_config(config: dict) -> tuple:
    if "schema" in config:
        schema = build_schema(config)
    else:
        schema = FieldSchema.from_dict(
            {"fields": [{"name": f"g{i}", "kind": "categorical", "buckets": 7} for i in range(4)]}
        )
    model_dict = dict(config.get("model", {}))
    model_dict.setdefault("f", schema.f)
    model_dict.setdefault("k", 3)
    model_dict.setdefault("hidden_units", (8, 8))
    return schema, ModelConfig.from_dict(model_dict)


def cmd_gradcheck(args) -> int:
    config = load_run_config(args)
    schema, model_config = _default_gradcheck_config(config)
    report = grad_check(schema, model_config, seed=config["seed"])
    print(f"{'block':<14} {'status':<8} rel_error")
    failures = 0
    for row in report:
        err = "-" if row["rel_error"] is None else f"{row['rel_error']:.3e}"
        print(f"{row['block']:<14} {row['status']:<8} {err}")
        failures += row["status"] == "fail"
    print(f"{len(report)} blocks, {failures} failed")
    return 1 if failures else 0


def cmd_ablate(args) -> int:
    config = load_run_config(args)
    schema, train_set, valid_set, tcfg = _load_split(config)
    model_config = build_model_config(config, schema)
    test_path = _require(config, "paths", "test")
    test_set, _ = load_tsv(test_path, schema)
    if test_set.size == 0:
        raise ConfigError(f"paths.test: {test_path} holds no usable rows")
    rows = run_ablation(schema, model_config, train_set, valid_set, test_set, tcfg)
    out_path = config.get("paths", {}).get("ablation", DEFAULT_ABLATION)
    write_ablation_csv(out_path, rows)
    print(f"{'variant':<8} {'auc':>9} {'logloss':>9}")
    for row in rows:
        print(f"{row['variant']:<8} {row['auc']:>9.6f} {row['logloss']:>9.6f}")
    return 0


def cmd_synth(args) -> int:
    config = load_run_config(args)
    if "synth" not in config:
        raise ConfigError("synth: section required for the synth command")
    synth_dict = dict(config["synth"])
    synth_dict.setdefault("seed", config["seed"])
    spec = SyntheticSpec.from_dict(synth_dict)
    train_set, test_set, bayes_auc = generate_synthetic(spec)
    prefix = args.out_prefix
    schema = spec.schema()
    train_path = f"{prefix}_train.tsv"
    test_path = f"{prefix}_test.tsv"
    write_tsv(train_set, schema, train_path)
    write_tsv(test_set, schema, test_path)
    sidecar = {
        "bayes_auc": bayes_auc,
        "train_path": train_path,
        "test_path": test_path,
        "train_rows": train_set.size,
        "test_rows": test_set.size,
        "schema": schema.to_dict(),
        "spec": spec.to_dict(),
    }
    with open(f"{prefix}.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"bayes_auc={bayes_auc:.6f} train={train_path} test={test_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fibinet",
        description="Train and probe a FiBiNET click-through-rate model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run config path")
        sp.add_argument("--set", action="append", metavar="dotted.key=value",
                        help="override one config field (repeatable)")
        sp.add_argument("--seed", type=int, help="replace the top-level seed")

    common(sub.add_parser("train", help="fit a model, write checkpoint + metric CSV"))
    sp_eval = sub.add_parser("eval", help="score a dataset with a saved checkpoint")
    common(sp_eval)
    sp_eval.add_argument("checkpoint", nargs="?", help="checkpoint path (default: paths.checkpoint)")
    sp_eval.add_argument("data", nargs="?", help="TSV path (default: paths.test)")
    common(sub.add_parser("gradcheck", help="analytic vs finite-difference gradients"))
    common(sub.add_parser("ablate", help="train BASE/NO-SE/NO-BI/FM/FNN, write CSV"))
    sp_synth = sub.add_parser("synth", help="generate a planted-interaction dataset")
    common(sp_synth)
    sp_synth.add_argument("out_prefix", nargs="?", default="synthetic",
                          help="output prefix for <prefix>_train.tsv etc.")
    return parser


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FibinetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
