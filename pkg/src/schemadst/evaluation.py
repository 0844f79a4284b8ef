"""The four tracking metrics, seen/unseen breakdowns, and report emission.

All metrics are computed over frames: one (dialogue, turn, service) unit
per annotated service. Predictions and golds are aligned by that key;
any mismatch in the key sets is a data error rather than a silent drop.
Value comparison is string equality after lowercasing and whitespace
collapse, against any gold alias.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .data import USER, Corpus, normalize_value
from .errors import ConfigError, DataError
from .tracker import TurnStateRecord, record_to_json


@dataclass(frozen=True)
class EvalFrame:
    """One (dialogue, turn, service) unit: intent, requests, slot values."""

    dialogue_id: str
    turn_index: int
    service: str
    active_intent: str
    requested: frozenset[str]
    values: tuple[tuple[str, tuple[str, ...]], ...]  # sorted (slot, aliases)

    @property
    def key(self) -> tuple[str, int, str]:
        return (self.dialogue_id, self.turn_index, self.service)

    def value_map(self) -> dict[str, tuple[str, ...]]:
        return dict(self.values)


def make_frame(
    dialogue_id: str,
    turn_index: int,
    service: str,
    active_intent: str,
    requested: Iterable[str],
    slot_values: Mapping[str, Sequence[str] | str],
) -> EvalFrame:
    values = []
    for slot, aliases in slot_values.items():
        if isinstance(aliases, str):
            aliases = (aliases,)
        values.append((slot, tuple(aliases)))
    return EvalFrame(
        dialogue_id=dialogue_id,
        turn_index=turn_index,
        service=service,
        active_intent=active_intent,
        requested=frozenset(requested),
        values=tuple(sorted(values)),
    )


def gold_frames(corpus: Corpus) -> list[EvalFrame]:
    frames = []
    for dialogue in corpus.dialogues:
        for index, turn in enumerate(dialogue.turns):
            if turn.speaker != USER:
                continue
            for frame in turn.frames:
                frames.append(make_frame(
                    dialogue.dialogue_id, index, frame.service,
                    frame.state.active_intent, frame.state.requested_slots,
                    frame.state.slot_values,
                ))
    return frames


def predicted_frames(rows: Iterable[dict | TurnStateRecord]) -> list[EvalFrame]:
    frames = []
    for row in rows:
        if isinstance(row, TurnStateRecord):
            row = record_to_json(row)
        try:
            frames.append(make_frame(
                str(row["dialogue_id"]), int(row["turn_index"]), str(row["service"]),
                str(row["active_intent"]), row.get("requested_slots", ()),
                row.get("slot_values", {}),
            ))
        except KeyError as exc:
            raise DataError(f"prediction row missing field {exc}") from exc
    return frames


def _aligned(preds: Sequence[EvalFrame], golds: Sequence[EvalFrame]) -> list[tuple[EvalFrame, EvalFrame]]:
    if not golds:
        raise DataError("cannot evaluate over an empty turn set")
    by_key = {p.key: p for p in preds}
    if len(by_key) != len(preds):
        raise DataError("duplicate (dialogue, turn, service) keys among predictions")
    missing = [g.key for g in golds if g.key not in by_key]
    if missing:
        raise DataError(f"predictions missing for {len(missing)} frame(s), e.g. {missing[0]}")
    extra = set(by_key) - {g.key for g in golds}
    if extra:
        raise DataError(f"predictions for {len(extra)} unknown frame(s), e.g. {sorted(extra)[0]}")
    return [(by_key[g.key], g) for g in golds]


def _value_matches(pred_aliases: tuple[str, ...], gold_aliases: tuple[str, ...]) -> bool:
    gold = {normalize_value(a) for a in gold_aliases}
    return any(normalize_value(p) in gold for p in pred_aliases)


def _frame_joint(pred: EvalFrame, gold: EvalFrame) -> bool:
    pred_map, gold_map = pred.value_map(), gold.value_map()
    if set(pred_map) != set(gold_map):
        return False  # a missing or extra predicted slot breaks the frame
    return all(_value_matches(pred_map[s], gold_map[s]) for s in gold_map)


def intent_accuracy(preds: Sequence[EvalFrame], golds: Sequence[EvalFrame]) -> float:
    pairs = _aligned(preds, golds)
    return sum(p.active_intent == g.active_intent for p, g in pairs) / len(pairs)


def requested_slots_f1(preds: Sequence[EvalFrame], golds: Sequence[EvalFrame]) -> float:
    """Per-frame F1 of the requested set, macro-averaged; both empty scores 1."""
    pairs = _aligned(preds, golds)
    total = 0.0
    for p, g in pairs:
        if not p.requested and not g.requested:
            total += 1.0
            continue
        tp = len(p.requested & g.requested)
        denominator = len(p.requested) + len(g.requested)
        total += 2.0 * tp / denominator if denominator else 0.0
    return total / len(pairs)


def average_goal_accuracy(preds: Sequence[EvalFrame], golds: Sequence[EvalFrame]) -> float:
    """Mean per-frame accuracy over gold-assigned slots (dontcare included).

    Frames without gold assignments contribute nothing; if no frame has
    any, the accuracy is vacuously 1.
    """
    pairs = _aligned(preds, golds)
    total, frames_with_gold = 0.0, 0
    for p, g in pairs:
        gold_map = g.value_map()
        if not gold_map:
            continue
        frames_with_gold += 1
        pred_map = p.value_map()
        matched = sum(
            1 for slot, aliases in gold_map.items()
            if slot in pred_map and _value_matches(pred_map[slot], aliases)
        )
        total += matched / len(gold_map)
    return total / frames_with_gold if frames_with_gold else 1.0


def joint_goal_accuracy(preds: Sequence[EvalFrame], golds: Sequence[EvalFrame]) -> float:
    """Fraction of frames whose full predicted state equals gold exactly."""
    pairs = _aligned(preds, golds)
    return sum(_frame_joint(p, g) for p, g in pairs) / len(pairs)


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class MetricBlock:
    intent_accuracy: float
    requested_f1: float
    average_goal_accuracy: float
    joint_goal_accuracy: float
    n_frames: int
    n_turns: int


@dataclass(frozen=True)
class ServiceRow:
    service: str
    metrics: MetricBlock
    seen: bool | None


@dataclass(frozen=True)
class EvalReport:
    overall: MetricBlock
    per_service: tuple[ServiceRow, ...]
    seen: MetricBlock | None
    unseen: MetricBlock | None
    n_dialogues: int


def _block(preds: Sequence[EvalFrame], golds: Sequence[EvalFrame]) -> MetricBlock:
    return MetricBlock(
        intent_accuracy=intent_accuracy(preds, golds),
        requested_f1=requested_slots_f1(preds, golds),
        average_goal_accuracy=average_goal_accuracy(preds, golds),
        joint_goal_accuracy=joint_goal_accuracy(preds, golds),
        n_frames=len(golds),
        n_turns=len({(g.dialogue_id, g.turn_index) for g in golds}),
    )


def seen_unseen_report(
    preds: Sequence[EvalFrame],
    golds: Sequence[EvalFrame],
    train_services: set[str] | None = None,
) -> EvalReport:
    """Every metric overall, per service, and (if known) split seen/unseen.

    An empty partition is reported as absent rather than zero.
    """
    pairs = _aligned(preds, golds)
    overall = _block(preds, golds)

    services = sorted({g.service for g in golds})
    rows = []
    for service in services:
        sub = [(p, g) for p, g in pairs if g.service == service]
        seen_flag = (service in train_services) if train_services is not None else None
        rows.append(ServiceRow(
            service=service,
            metrics=_block([p for p, _ in sub], [g for _, g in sub]),
            seen=seen_flag,
        ))

    seen_block = unseen_block = None
    if train_services is not None:
        seen_pairs = [(p, g) for p, g in pairs if g.service in train_services]
        unseen_pairs = [(p, g) for p, g in pairs if g.service not in train_services]
        if seen_pairs:
            seen_block = _block([p for p, _ in seen_pairs], [g for _, g in seen_pairs])
        if unseen_pairs:
            unseen_block = _block([p for p, _ in unseen_pairs], [g for _, g in unseen_pairs])

    return EvalReport(
        overall=overall,
        per_service=tuple(rows),
        seen=seen_block,
        unseen=unseen_block,
        n_dialogues=len({g.dialogue_id for g in golds}),
    )


def evaluate_tracker(tracker, corpus: Corpus) -> EvalReport:
    """Track every dialogue of a corpus and score against its gold frames."""
    records: list[TurnStateRecord] = []
    for dialogue in corpus.dialogues:
        records.extend(tracker.track_dialogue(dialogue, corpus.schemas))
    golds = gold_frames(corpus)
    gold_keys = {g.key for g in golds}
    preds = [r for r in predicted_frames(records) if r.key in gold_keys]
    return seen_unseen_report(preds, golds)


# ---------------------------------------------------------------------------
# emission


def _block_json(block: MetricBlock | None) -> dict | None:
    if block is None:
        return None
    return {
        "intent_accuracy": block.intent_accuracy,
        "requested_f1": block.requested_f1,
        "average_goal_accuracy": block.average_goal_accuracy,
        "joint_goal_accuracy": block.joint_goal_accuracy,
        "n_frames": block.n_frames,
        "n_turns": block.n_turns,
    }


def report_to_json(report: EvalReport) -> dict:
    return {
        "overall": _block_json(report.overall),
        "per_service": [
            {"service": r.service, "seen": r.seen, "metrics": _block_json(r.metrics)}
            for r in report.per_service
        ],
        "seen": _block_json(report.seen),
        "unseen": _block_json(report.unseen),
        "n_dialogues": report.n_dialogues,
    }


def report_from_json(payload: dict) -> EvalReport:
    def block(obj):
        return None if obj is None else MetricBlock(**obj)

    return EvalReport(
        overall=block(payload["overall"]),
        per_service=tuple(
            ServiceRow(service=r["service"], seen=r["seen"], metrics=block(r["metrics"]))
            for r in payload["per_service"]
        ),
        seen=block(payload["seen"]),
        unseen=block(payload["unseen"]),
        n_dialogues=payload["n_dialogues"],
    )


_CSV_COLUMNS = ("service", "intent_acc", "req_f1", "avg_ga", "joint_ga", "n_turns", "seen_flag")


def _csv_row(name: str, block: MetricBlock | None, seen) -> list:
    if block is None:
        return [name, "", "", "", "", "", "" if seen is None else seen]
    return [
        name,
        f"{block.intent_accuracy:.6f}",
        f"{block.requested_f1:.6f}",
        f"{block.average_goal_accuracy:.6f}",
        f"{block.joint_goal_accuracy:.6f}",
        block.n_turns,
        "" if seen is None else seen,
    ]


def render_csv(report: EvalReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for row in report.per_service:
        writer.writerow(_csv_row(row.service, row.metrics, row.seen))
    writer.writerow(_csv_row("__all__", report.overall, None))
    writer.writerow(_csv_row("__seen__", report.seen, True))
    writer.writerow(_csv_row("__unseen__", report.unseen, False))
    return out.getvalue()


def render_text(report: EvalReport) -> str:
    width = max([len("__unseen__")] + [len(r.service) for r in report.per_service]) + 2
    header = (f"{'service':<{width}}{'int_acc':>9}{'req_f1':>9}{'avg_ga':>9}"
              f"{'joint_ga':>10}{'turns':>7}")
    lines = [header, "-" * len(header)]

    def fmt(name: str, block: MetricBlock | None) -> str:
        if block is None:
            return f"{name:<{width}}{'absent':>9}"
        return (f"{name:<{width}}{block.intent_accuracy:>9.3f}{block.requested_f1:>9.3f}"
                f"{block.average_goal_accuracy:>9.3f}{block.joint_goal_accuracy:>10.3f}"
                f"{block.n_turns:>7}")

    for row in report.per_service:
        lines.append(fmt(row.service, row.metrics))
    lines.append("-" * len(header))
    lines.append(fmt("__all__", report.overall))
    lines.append(fmt("__seen__", report.seen))
    lines.append(fmt("__unseen__", report.unseen))
    return "\n".join(lines) + "\n"


def render_json(report: EvalReport) -> str:
    return json.dumps(report_to_json(report), indent=1, sort_keys=True) + "\n"


def emit_report(report: EvalReport, fmt: str, path: str | Path) -> None:
    renderers = {"text": render_text, "csv": render_csv, "json": render_json}
    if fmt not in renderers:
        raise ConfigError(f"unknown report format {fmt!r}; expected one of {sorted(renderers)}")
    try:
        Path(path).write_text(renderers[fmt](report), encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write report to {path}: {exc}") from exc
