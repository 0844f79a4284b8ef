"""Command line entry point: train, predict, eval, synth.

Exit codes: 2 for configuration errors, 3 for data errors, 4 for numeric
aborts. Corpora are given either as a root directory holding train/ dev/
test/ splits (--data) or as explicit --schemas / --dialogues paths.
Flags override config-file values.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import Corpus, load_split, parse_dialogue_file, parse_schema_file, write_split
from .errors import ConfigError, DataError, NumericError
from .evaluation import emit_report, gold_frames, predicted_frames, seen_unseen_report
from .heads import DOMAIN_AND_SLOT, DOMAIN_ONLY
from .nn import add_linear
from .schema_embed import load_external_embeddings, read_portable_embeddings
from .synth import SynthSpec, corpus_statistics, format_statistics, generate_synthetic_corpus
from .tracker import Tracker, read_predictions, write_predictions
from .training import LossWeights, TrainConfig, load_checkpoint, save_checkpoint, train

_MODE_FLAGS = {"d": DOMAIN_ONLY, "d+s": DOMAIN_AND_SLOT}


def _corpus_from_paths(schemas_path: str, dialogues_path: str, split: str) -> Corpus:
    schemas_path = Path(schemas_path)
    if schemas_path.is_dir():
        schemas_path = schemas_path / "schema.json"
    schemas = {s.service_name: s for s in parse_schema_file(schemas_path)}
    dialogues_path = Path(dialogues_path)
    if dialogues_path.is_dir():
        files = sorted(dialogues_path.glob("dialogues_*.json")) or sorted(
            dialogues_path.glob("*.json")
        )
        if not files:
            raise ConfigError(f"no dialogue files found under {dialogues_path}")
    else:
        files = [dialogues_path]
    dialogues = []
    for path in files:
        dialogues.extend(parse_dialogue_file(path, schemas))
    return Corpus(schemas=schemas, dialogues=dialogues, split=split)


def _resolve_corpus(args, split: str) -> Corpus:
    if getattr(args, "data", None):
        root = Path(args.data)
        split_dir = root / split if (root / split).is_dir() else root
        return load_split(split_dir, split)
    if not (args.schemas and args.dialogues):
        raise ConfigError("provide either --data or both --schemas and --dialogues")
    return _corpus_from_paths(args.schemas, args.dialogues, split)


def _read_config_file(path: str | None) -> dict:
    """Config files are JSON objects or key=value lines; flags win over both."""
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text(encoding="utf-8").strip()
    if text.startswith("{"):
        return json.loads(text)
    values: dict = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{p}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        raw = raw.strip()
        try:
            values[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            values[key.strip()] = raw
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schema-dst",
                                     description="schema-guided dialogue state tracker")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a tracker")
    p_train.add_argument("--data", help="corpus root containing train/ and dev/ splits")
    p_train.add_argument("--schemas", help="schema.json (or its directory) for training")
    p_train.add_argument("--dialogues", help="dialogue file or directory for training")
    p_train.add_argument("--out", required=True, help="checkpoint directory")
    p_train.add_argument("--config", help="JSON or key=value config file")
    p_train.add_argument("--mode", choices=sorted(_MODE_FLAGS), default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--hidden-dim", type=int, default=None)
    p_train.add_argument("--layers", type=int, default=None)
    p_train.add_argument("--heads", type=int, default=None)
    p_train.add_argument("--strict-schema-freeze", action="store_true")
    p_train.add_argument("--quiet", action="store_true")

    p_pred = sub.add_parser("predict", help="dump per-turn states")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--data", help="split directory with schema.json + dialogues")
    p_pred.add_argument("--schemas", help="schema.json (or its directory)")
    p_pred.add_argument("--dialogues", help="dialogue file or directory")
    p_pred.add_argument("--out", required=True, help="JSON-lines output path")
    p_pred.add_argument("--external-embeddings", help="portable embedding manifest")

    p_eval = sub.add_parser("eval", help="score a prediction dump against gold")
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--data", help="gold split directory")
    p_eval.add_argument("--schemas", help="gold schema.json (or its directory)")
    p_eval.add_argument("--dialogues", help="gold dialogue file or directory")
    p_eval.add_argument("--out", required=True, help="report path prefix")
    p_eval.add_argument("--train-services", help="file listing seen services, one per line")

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--out", required=True, help="corpus root directory")
    p_synth.add_argument("--seed", type=int, default=7)
    p_synth.add_argument("--dialogues", type=int, default=200)
    p_synth.add_argument("--services", type=int, default=4)
    return parser


def _train_config(args) -> TrainConfig:
    values = _read_config_file(args.config)
    overrides = {
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "seed": args.seed,
        "hidden_dim": args.hidden_dim,
        "n_layers": args.layers,
        "n_heads": args.heads,
        "mode": _MODE_FLAGS[args.mode] if args.mode else None,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.strict_schema_freeze:
        values["strict_schema_freeze"] = True
    values.setdefault("learning_rate", 1e-3)  # desk-scale default for the small encoder
    if isinstance(values.get("loss_weights"), dict):
        values["loss_weights"] = LossWeights(**values["loss_weights"])
    unknown = set(values) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**values)


def cmd_train(args) -> int:
    train_corpus = _resolve_corpus(args, "train")
    dev_corpus = None
    if args.data and (Path(args.data) / "dev").is_dir():
        dev_corpus = load_split(Path(args.data) / "dev", "dev")
    config = _train_config(args)

    model, history = train(train_corpus, dev_corpus, config, progress=not args.quiet)
    out = Path(args.out)
    save_checkpoint(out, model, step=len(history), extra={
        "mode": model.mode,
        "train_services": sorted(train_corpus.schemas),
        "config": {"learning_rate": config.learning_rate, "epochs": config.epochs,
                   "batch_size": config.batch_size, "seed": config.seed,
                   "strict_schema_freeze": config.strict_schema_freeze},
    })
    (out / "history.json").write_text(json.dumps(history, indent=1) + "\n", encoding="utf-8")
    (out / "train_services.txt").write_text(
        "\n".join(sorted(train_corpus.schemas)) + "\n", encoding="utf-8"
    )
    if history and "dev" in history[-1]:
        print(f"final dev joint GA {history[-1]['dev']['joint_goal_accuracy']:.3f}")
    return 0


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    corpus = _resolve_corpus(args, "test")

    embeddings = None
    if args.external_embeddings:
        _, width = read_portable_embeddings(args.external_embeddings)
        if width != model.head_cfg.hidden_dim:
            if "schema_projection.weight" not in model.params:
                # a projection into the model width is inserted at load
                add_linear(model.params, np.random.default_rng(0), "schema_projection",
                           width, model.head_cfg.hidden_dim)
            model.head_cfg = replace(model.head_cfg, schema_width=width)
        embeddings = {
            name: load_external_embeddings(args.external_embeddings, schema)
            for name, schema in corpus.schemas.items()
        }

    tracker = Tracker(model, embeddings=embeddings,
                      cache_dir=os.environ.get("SCHEMA_DST_CACHE"))
    records = []
    for dialogue in corpus.dialogues:
        records.extend(tracker.track_dialogue(dialogue, corpus.schemas))
    write_predictions(records, args.out)
    print(f"wrote {len(records)} turn records to {args.out}")
    return 0


def cmd_eval(args) -> int:
    corpus = _resolve_corpus(args, "test")
    rows = read_predictions(args.predictions)
    golds = gold_frames(corpus)
    gold_keys = {g.key for g in golds}
    # the dump may track services beyond the annotated ones; score gold keys only
    preds = [p for p in predicted_frames(rows) if p.key in gold_keys]

    train_services = None
    if args.train_services:
        listing = Path(args.train_services)
        if not listing.exists():
            raise ConfigError(f"train services file not found: {listing}")
        train_services = {
            line.strip() for line in listing.read_text(encoding="utf-8").splitlines()
            if line.strip()
        }

    report = seen_unseen_report(preds, golds, train_services)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    for fmt, suffix in (("text", ".txt"), ("csv", ".csv"), ("json", ".json")):
        emit_report(report, fmt, out.with_suffix(suffix))
    print(f"joint goal accuracy {report.overall.joint_goal_accuracy:.3f} "
          f"over {report.overall.n_frames} frames")
    return 0


def cmd_synth(args) -> int:
    spec = SynthSpec(n_dialogues=args.dialogues, n_services=args.services)
    splits = generate_synthetic_corpus(spec, seed=args.seed)
    root = Path(args.out)
    for name, corpus in splits.items():
        write_split(corpus, root / name)
    stats = corpus_statistics(splits)
    print(format_statistics(stats))
    (root / "statistics.json").write_text(json.dumps(stats, indent=1) + "\n", encoding="utf-8")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": cmd_train,
        "predict": cmd_predict,
        "eval": cmd_eval,
        "synth": cmd_synth,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
