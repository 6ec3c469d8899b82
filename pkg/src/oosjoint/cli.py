"""Command-line surface: train, eval, sweep, classify, export, validate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.  Every failure prints exactly one JSON line on stderr with the
shape {"error": <kind>, "message": <text>}.  Structured results go to
stdout as JSON (or TSV files where noted).
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources as importlib_resources

import numpy as np

from .data import (
    DataFormatError,
    Dataset,
    LabelSpace,
    OOS_LABEL,
    load_oos_dataset,
    validate_counts,
)
from .diffcore import LabelError, NumericInstabilityError
from .encoder import (
    CoverageError,
    EmbeddingFormatError,
    EmbeddingStore,
    EmptyUtteranceError,
    load_embedding_store,
)
from .evaluation import (
    ThresholdConfig,
    best_row,
    evaluate_split,
    export_representations,
    make_hbar_fn,
    predict,
    threshold_sweep,
    write_sweep_tsv,
)
from .model import CheckpointFormatError, StructureTag, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _config_error(message: str) -> CliError:
    return CliError(EXIT_CONFIG, "config", message)


def _data_error(message: str) -> CliError:
    return CliError(EXIT_DATA, "data", message)


# RunConfig schema: key -> (json types accepted, notes). Unknown keys are
# rejected so typos fail loudly instead of silently using defaults.
_CONFIG_SCHEMA: dict[str, tuple] = {
    "data": (str,),
    "domain_map": (str,),
    "embedding_store": (str, type(None)),
    "checkpoint_out": (str,),
    "history_out": (str, type(None)),
    "summary_out": (str, type(None)),
    "mode": (str,),
    "structure": (str,),
    "model_kind": (str,),
    "dim": (int,),
    "buckets": (int,),
    "ngram_orders": (list,),
    "learning_rate": (int, float, type(None)),
    "warmup_proportion": (int, float),
    "max_epochs": (int,),
    "early_stop_patience": (int,),
    "batch_size": (int,),
    "weight_decay": (int, float),
    "seed": (int,),
}


def _read_run_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise _config_error(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _config_error(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise _config_error("run config must be a JSON object")
    for key, value in raw.items():
        if key not in _CONFIG_SCHEMA:
            raise _config_error(f"unknown config key {key!r}")
        if isinstance(value, bool) or not isinstance(value, _CONFIG_SCHEMA[key]):
            raise _config_error(f"config key {key!r} has wrong type {type(value).__name__}")
    return raw


def _load_dataset(data_path: str, map_path: str) -> tuple[Dataset, LabelSpace]:
    try:
        return load_oos_dataset(data_path, map_path)
    except (OSError, json.JSONDecodeError, DataFormatError) as exc:
        raise _data_error(str(exc)) from exc


def _load_store(path: str) -> EmbeddingStore:
    try:
        return load_embedding_store(path)
    except (OSError, EmbeddingFormatError) as exc:
        raise _data_error(str(exc)) from exc


def _load_model(path: str):
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointFormatError, DataFormatError, KeyError) as exc:
        raise _data_error(f"cannot load checkpoint {path}: {exc}") from exc


def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _read_run_config(args.config)
    overrides = {
        "data": args.data, "domain_map": args.domain_map,
        "embedding_store": args.store, "checkpoint_out": args.checkpoint_out,
        "history_out": args.history_out, "summary_out": args.summary_out,
        "mode": args.mode, "structure": args.structure, "model_kind": args.model_kind,
        "dim": args.dim, "buckets": args.buckets,
        "learning_rate": args.learning_rate, "warmup_proportion": args.warmup_proportion,
        "max_epochs": args.max_epochs, "early_stop_patience": args.patience,
        "batch_size": args.batch_size, "weight_decay": args.weight_decay,
        "seed": args.seed,
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    for key in ("data", "domain_map", "checkpoint_out"):
        if key not in cfg:
            raise _config_error(f"missing required config key {key!r}")

    dataset, labels = _load_dataset(cfg["data"], cfg["domain_map"])
    try:
        structure = StructureTag.parse(cfg.get("structure", "hier_domain_first"))
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    # The OOS+ variant trains for 5 epochs unless the config pins a value.
    max_epochs = cfg.get("max_epochs", 5 if dataset.variant == "oos+" else 10)
    config = TrainConfig(
        structure=structure,
        model_kind=cfg.get("model_kind", "joint"),
        mode=cfg.get("mode", "builtin"),
        dim=cfg.get("dim", 256),
        buckets=cfg.get("buckets", 1 << 18),
        ngram_orders=tuple(cfg.get("ngram_orders", (1, 2))),
        learning_rate=cfg.get("learning_rate"),
        warmup_proportion=cfg.get("warmup_proportion", 0.1),
        max_epochs=max_epochs,
        early_stop_patience=cfg.get("early_stop_patience", 3),
        batch_size=cfg.get("batch_size", 32),
        weight_decay=cfg.get("weight_decay", 0.01),
        seed=cfg.get("seed", 42),
    )
    try:
        config.validate()
    except ValueError as exc:
        raise _config_error(str(exc)) from exc

    store = None
    if config.mode == "external":
        if not cfg.get("embedding_store"):
            raise _config_error("external mode requires embedding_store")
        store = _load_store(cfg["embedding_store"])

    try:
        model, history = train(dataset, labels, config, store=store)
    except CoverageError as exc:
        raise _data_error(str(exc)) from exc
    except LabelError as exc:
        raise _data_error(str(exc)) from exc

    save_checkpoint(cfg["checkpoint_out"], model, labels)
    if cfg.get("history_out"):
        with open(cfg["history_out"], "w", encoding="utf-8") as fh:
            for rec in history.records:
                fh.write(json.dumps({
                    "epoch": rec.epoch,
                    "train_loss": rec.train_loss,
                    "lambda": rec.lambda_value,
                    "valid_intent_accuracy": rec.valid_intent_accuracy,
                    "valid_domain_accuracy": rec.valid_domain_accuracy,
                }) + "\n")
    summary = {
        "config": config.to_json_dict(),
        "variant": dataset.variant,
        "epochs_ran": len(history.records),
        "stopped_reason": history.stopped_reason,
        "best_epoch": history.best_epoch,
        "best_valid_intent_accuracy": history.best_valid_intent_accuracy,
        "checkpoint": cfg["checkpoint_out"],
    }
    if cfg.get("summary_out"):
        with open(cfg["summary_out"], "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1)
            fh.write("\n")
    _emit(summary)
    return EXIT_OK


def _check_label_spaces(ckpt_labels: LabelSpace, data_labels: LabelSpace) -> None:
    if (ckpt_labels.domains != data_labels.domains
            or ckpt_labels.intents != data_labels.intents
            or ckpt_labels.intent_to_domain != data_labels.intent_to_domain):
        raise _data_error("checkpoint label space does not match the dataset")


def _threshold(args: argparse.Namespace) -> ThresholdConfig:
    try:
        return ThresholdConfig(tau=args.tau, apply_to_domain=getattr(args, "apply_to_domain", False))
    except ValueError as exc:
        raise _config_error(str(exc)) from exc


def cmd_eval(args: argparse.Namespace) -> int:
    model, ckpt_labels = _load_model(args.checkpoint)
    dataset, labels = _load_dataset(args.data, args.domain_map)
    _check_label_spaces(ckpt_labels, labels)
    store = _load_store(args.store) if args.store else None
    try:
        hbar_fn = make_hbar_fn(model, store)
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    report = evaluate_split(model, dataset.split(args.split), labels, _threshold(args), hbar_fn)
    payload = {"split": args.split, "tau": args.tau, "report": report.to_json_dict()}
    if args.report_out:
        with open(args.report_out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    _emit(payload)
    return EXIT_OK


def parse_grid(spec: str) -> list[float]:
    """Parse "start:stop:step" into an ascending threshold list."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be start:stop:step, got {spec!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise ValueError(f"grid has non-numeric parts: {spec!r}") from None
    if step <= 0:
        raise ValueError("grid step must be positive")
    if stop < start:
        raise ValueError("grid stop must be >= start (ascending grids only)")
    if start < 0 or stop > 1:
        raise ValueError("grid must lie inside [0, 1]")
    taus = []
    k = 0
    while True:
        tau = start + k * step
        if tau > stop + 1e-9:
            break
        taus.append(round(tau, 12))
        k += 1
    return taus


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    model, ckpt_labels = _load_model(args.checkpoint)
    dataset, labels = _load_dataset(args.data, args.domain_map)
    _check_label_spaces(ckpt_labels, labels)
    store = _load_store(args.store) if args.store else None
    try:
        hbar_fn = make_hbar_fn(model, store)
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    rows = threshold_sweep(model, dataset.split(args.split), labels, grid, hbar_fn)
    if args.out:
        write_sweep_tsv(rows, args.out)
    tau, rep = best_row(rows)
    _emit({"split": args.split, "rows": len(rows), "out": args.out,
           "best": {"tau": tau, "report": rep.to_json_dict()}})
    return EXIT_OK


def _top(probs, names: list[str], k: int = 3) -> list[list]:
    order = np.argsort(-probs, kind="stable")[:k]
    return [[names[i], float(probs[i])] for i in order]


def cmd_classify(args: argparse.Namespace) -> int:
    model, labels = _load_model(args.checkpoint)
    store = _load_store(args.store) if args.store else None
    try:
        hbar_fn = make_hbar_fn(model, store)
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    threshold = _threshold(args)
    for line in sys.stdin:
        text = line.rstrip("\n")
        if not text.strip():
            _emit({"error": "empty line"})
            sys.stdout.flush()
            continue
        try:
            pred = predict(model, hbar_fn(text), labels, threshold)
        except (EmptyUtteranceError, CoverageError) as exc:
            _emit({"error": str(exc), "text": text})
            sys.stdout.flush()
            continue
        out = {
            "text": text,
            "domain": pred.domain,
            "intent": pred.intent,
            "oos": pred.intent == OOS_LABEL,
            "top_intents": _top(pred.p_intent, labels.intents),
        }
        if pred.p_domain is not None:
            out["top_domains"] = _top(pred.p_domain, labels.domains)
        _emit(out)
        sys.stdout.flush()
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    model, ckpt_labels = _load_model(args.checkpoint)
    dataset, labels = _load_dataset(args.data, args.domain_map)
    _check_label_spaces(ckpt_labels, labels)
    store = _load_store(args.store) if args.store else None
    try:
        hbar_fn = make_hbar_fn(model, store)
        rows = export_representations(model, dataset.split(args.split), labels, args.out, hbar_fn)
    except ValueError as exc:
        raise _config_error(str(exc)) from exc
    _emit({"split": args.split, "rows": rows, "out": args.out})
    return EXIT_OK


def _packaged_expectations() -> dict:
    text = importlib_resources.files("oosjoint").joinpath(
        "resources/table1_expectations.json").read_text("utf-8")
    return json.loads(text)


def cmd_validate(args: argparse.Namespace) -> int:
    dataset, labels = _load_dataset(args.data, args.domain_map)
    if args.expected:
        try:
            with open(args.expected, "r", encoding="utf-8") as fh:
                expected = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise _config_error(f"cannot read expectations: {exc}") from exc
    else:
        table = _packaged_expectations()
        if dataset.variant not in table:
            raise _config_error(
                f"no packaged count expectations for variant {dataset.variant!r}; pass --expected"
            )
        expected = table[dataset.variant]
    report = validate_counts(dataset, labels, expected)
    _emit({"variant": dataset.variant, "ok": report.ok,
           "mismatches": report.mismatches, "observed": report.observed})
    return EXIT_OK if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oosjoint",
        description="Joint domain/intent classifier with out-of-scope detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="fit a model and write a checkpoint")
    p_train.add_argument("--config", help="run config JSON; flags override its values")
    p_train.add_argument("--data")
    p_train.add_argument("--domain-map", dest="domain_map")
    p_train.add_argument("--store", help="EMB1 embedding store (external mode)")
    p_train.add_argument("--checkpoint-out", dest="checkpoint_out")
    p_train.add_argument("--history-out", dest="history_out")
    p_train.add_argument("--summary-out", dest="summary_out")
    p_train.add_argument("--mode", choices=["builtin", "external"])
    p_train.add_argument("--structure")
    p_train.add_argument("--model-kind", dest="model_kind", choices=["joint", "baseline"])
    p_train.add_argument("--dim", type=int)
    p_train.add_argument("--buckets", type=int)
    p_train.add_argument("--learning-rate", dest="learning_rate", type=float)
    p_train.add_argument("--warmup-proportion", dest="warmup_proportion", type=float)
    p_train.add_argument("--max-epochs", dest="max_epochs", type=int)
    p_train.add_argument("--patience", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--weight-decay", dest="weight_decay", type=float)
    p_train.add_argument("--seed", type=int)
    p_train.set_defaults(func=cmd_train)

    def eval_like(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--domain-map", dest="domain_map", required=True)
        p.add_argument("--store")
        p.add_argument("--split", choices=["train", "valid", "test"], default="test")

    p_eval = sub.add_parser("eval", help="metrics for one split at one threshold")
    eval_like(p_eval)
    p_eval.add_argument("--tau", type=float, default=0.0)
    p_eval.add_argument("--apply-to-domain", dest="apply_to_domain", action="store_true")
    p_eval.add_argument("--report-out", dest="report_out")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="metrics across a threshold grid")
    eval_like(p_sweep)
    p_sweep.set_defaults(split="valid")
    p_sweep.add_argument("--grid", default="0.1:0.9:0.1", help="start:stop:step")
    p_sweep.add_argument("--out", help="TSV output path")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cls = sub.add_parser("classify", help="read utterances on stdin, one JSON per line")
    p_cls.add_argument("--checkpoint", required=True)
    p_cls.add_argument("--store")
    p_cls.add_argument("--tau", type=float, default=0.0)
    p_cls.add_argument("--apply-to-domain", dest="apply_to_domain", action="store_true")
    p_cls.set_defaults(func=cmd_classify)

    p_exp = sub.add_parser("export", help="write domain/intent representation TSV")
    eval_like(p_exp)
    p_exp.add_argument("--out", required=True)
    p_exp.set_defaults(func=cmd_export)

    p_val = sub.add_parser("validate", help="check dataset counts against expectations")
    p_val.add_argument("--data", required=True)
    p_val.add_argument("--domain-map", dest="domain_map", required=True)
    p_val.add_argument("--expected", help="expectations JSON; defaults to the packaged table")
    p_val.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc)}) + "\n")
        return exc.code
    except NumericInstabilityError as exc:
        sys.stderr.write(json.dumps({"error": "numeric", "message": str(exc)}) + "\n")
        return EXIT_NUMERIC
    except (CoverageError, EmbeddingFormatError, CheckpointFormatError,
            DataFormatError, LabelError, FileNotFoundError) as exc:
        sys.stderr.write(json.dumps({"error": "data", "message": str(exc)}) + "\n")
        return EXIT_DATA
    except ValueError as exc:
        sys.stderr.write(json.dumps({"error": "config", "message": str(exc)}) + "\n")
        return EXIT_CONFIG


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
