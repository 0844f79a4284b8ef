"""Service schemas, dialogue corpora, and their JSON file formats.

Files follow the common schema-guided layout: a split directory holds one
`schema.json` (array of service objects) and any number of
`dialogues_*.json` files. All parsed structures are plain dataclasses,
immutable by convention, and validated eagerly so downstream code can rely
on the invariants (unique names, resolvable references, spans that slice
to their annotated values).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError, DataError, SchemaError

log = logging.getLogger(__name__)

NONE_INTENT = "NONE"
DONTCARE = "dontcare"

USER = "USER"
SYSTEM = "SYSTEM"


def normalize_value(value: str) -> str:
    """Canonical form for value comparison: lowercase, collapsed whitespace."""
    return " ".join(value.lower().split())


@dataclass(frozen=True)
class Intent:
    name: str
    description: str
    required_slots: tuple[str, ...] = ()
    optional_slots: tuple[str, ...] = ()


@dataclass(frozen=True)
class Slot:
    name: str
    description: str
    is_categorical: bool
    possible_values: tuple[str, ...] = ()


@dataclass(frozen=True)
class Schema:
    service_name: str
    description: str
    intents: tuple[Intent, ...]
    slots: tuple[Slot, ...]

    def __post_init__(self):
        slot_names = [s.name for s in self.slots]
        if len(set(slot_names)) != len(slot_names):
            dup = next(n for n in slot_names if slot_names.count(n) > 1)
            raise SchemaError(f"service {self.service_name!r}: duplicate slot {dup!r}")
        intent_names = [i.name for i in self.intents]
        if len(set(intent_names)) != len(intent_names):
            dup = next(n for n in intent_names if intent_names.count(n) > 1)
            raise SchemaError(f"service {self.service_name!r}: duplicate intent {dup!r}")
        known = set(slot_names)
        for intent in self.intents:
            for ref in (*intent.required_slots, *intent.optional_slots):
                if ref not in known:
                    raise SchemaError(
                        f"service {self.service_name!r}: intent {intent.name!r} "
                        f"references unknown slot {ref!r}"
                    )
        for slot in self.slots:
            if slot.is_categorical and len(slot.possible_values) < 2:
                raise SchemaError(
                    f"service {self.service_name!r}: categorical slot {slot.name!r} "
                    f"needs at least 2 possible values"
                )
            if not slot.is_categorical and slot.possible_values:
                raise SchemaError(
                    f"service {self.service_name!r}: non-categorical slot {slot.name!r} "
                    f"must not list possible values"
                )

    def slot_by_name(self, name: str) -> Slot:
        for slot in self.slots:
            if slot.name == name:
                return slot
        raise DataError(f"service {self.service_name!r} has no slot {name!r}")

    @property
    def categorical_slots(self) -> tuple[Slot, ...]:
        return tuple(s for s in self.slots if s.is_categorical)

    @property
    def noncategorical_slots(self) -> tuple[Slot, ...]:
        return tuple(s for s in self.slots if not s.is_categorical)


@dataclass(frozen=True)
class SpanAnnotation:
    slot: str
    start: int
    exclusive_end: int


@dataclass
class FrameState:
    active_intent: str = NONE_INTENT
    requested_slots: tuple[str, ...] = ()
    slot_values: dict[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass
class Frame:
    service: str
    state: FrameState
    spans: tuple[SpanAnnotation, ...] = ()


@dataclass
class Turn:
    speaker: str
    utterance: str
    frames: list[Frame] = field(default_factory=list)


@dataclass
class Dialogue:
    dialogue_id: str
    services: tuple[str, ...]
    turns: list[Turn]

    def user_turns(self) -> list[tuple[int, Turn]]:
        return [(i, t) for i, t in enumerate(self.turns) if t.speaker == USER]


@dataclass
class Corpus:
    schemas: dict[str, Schema]
    dialogues: list[Dialogue]
    split: str = ""


# ---------------------------------------------------------------------------
# schema files

_SCHEMA_FIELDS = {"service_name", "description", "slots", "intents"}
_SLOT_FIELDS = {"name", "description", "is_categorical", "possible_values"}
_INTENT_FIELDS = {"name", "description", "required_slots", "optional_slots"}


def _require(obj: dict, key: str, where: str) -> object:
    if key not in obj:
        raise SchemaError(f"{where}: missing {key!r}")
    return obj[key]


def _warn_unknown(obj: dict, known: set[str], where: str) -> None:
    for key in obj:
        if key not in known:
            log.warning("%s: ignoring unknown field %r", where, key)


def _slot_list(raw, where: str) -> tuple[str, ...]:
    # SGD-style files sometimes carry optional_slots as a mapping to defaults
    if isinstance(raw, dict):
        return tuple(raw)
    return tuple(raw or ())


def schema_from_json(obj: dict, where: str = "$") -> Schema:
    _warn_unknown(obj, _SCHEMA_FIELDS, where)
    name = str(_require(obj, "service_name", where))
    description = str(_require(obj, "description", where))
    slots = []
    for i, raw in enumerate(obj.get("slots", ())):
        w = f"{where}.slots[{i}]"
        _warn_unknown(raw, _SLOT_FIELDS, w)
        slots.append(
            Slot(
                name=str(_require(raw, "name", w)),
                description=str(_require(raw, "description", w)),
                is_categorical=bool(raw.get("is_categorical", False)),
                possible_values=tuple(str(v) for v in raw.get("possible_values", ())),
            )
        )
    intents = []
    for i, raw in enumerate(obj.get("intents", ())):
        w = f"{where}.intents[{i}]"
        _warn_unknown(raw, _INTENT_FIELDS, w)
        intents.append(
            Intent(
                name=str(_require(raw, "name", w)),
                description=str(_require(raw, "description", w)),
                required_slots=_slot_list(raw.get("required_slots"), w),
                optional_slots=_slot_list(raw.get("optional_slots"), w),
            )
        )
    return Schema(service_name=name, description=description,
                  intents=tuple(intents), slots=tuple(slots))


def schema_to_json(schema: Schema) -> dict:
    return {
        "service_name": schema.service_name,
        "description": schema.description,
        "slots": [
            {
                "name": s.name,
                "description": s.description,
                "is_categorical": s.is_categorical,
                "possible_values": list(s.possible_values),
            }
            for s in schema.slots
        ],
        "intents": [
            {
                "name": i.name,
                "description": i.description,
                "required_slots": list(i.required_slots),
                "optional_slots": list(i.optional_slots),
            }
            for i in schema.intents
        ],
    }


def parse_schema_file(path: str | Path) -> list[Schema]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"schema file not found: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: expected a JSON array of services")
    return [schema_from_json(obj, where=f"$[{i}]") for i, obj in enumerate(raw)]


def write_schema_file(schemas: Iterable[Schema], path: str | Path) -> None:
    payload = [schema_to_json(s) for s in schemas]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# dialogue files


def _frame_from_json(raw: dict, where: str) -> Frame:
    service = str(_require(raw, "service", where))
    state_raw = raw.get("state", {})
    state = FrameState(
        active_intent=str(state_raw.get("active_intent", NONE_INTENT)),
        requested_slots=tuple(str(s) for s in state_raw.get("requested_slots", ())),
        slot_values={
            str(slot): tuple(str(v) for v in values)
            for slot, values in state_raw.get("slot_values", {}).items()
        },
    )
    spans = tuple(
        SpanAnnotation(
            slot=str(_require(s, "slot", f"{where}.slots[{j}]")),
            start=int(_require(s, "start", f"{where}.slots[{j}]")),
            exclusive_end=int(_require(s, "exclusive_end", f"{where}.slots[{j}]")),
        )
        for j, s in enumerate(raw.get("slots", ()))
    )
    return Frame(service=service, state=state, spans=spans)


def _validate_frame(frame: Frame, utterance: str, schemas: Mapping[str, Schema], where: str) -> None:
    if frame.service not in schemas:
        raise DataError(f"{where}: unknown service {frame.service!r}")
    schema = schemas[frame.service]
    slot_names = {s.name for s in schema.slots}
    intent_names = {i.name for i in schema.intents} | {NONE_INTENT}
    if frame.state.active_intent not in intent_names:
        raise DataError(f"{where}: unknown intent {frame.state.active_intent!r}")
    for slot in (*frame.state.requested_slots, *frame.state.slot_values):
        if slot not in slot_names:
            raise DataError(f"{where}: unknown slot {slot!r} for service {frame.service!r}")
    for span in frame.spans:
        if span.slot not in slot_names:
            raise DataError(f"{where}: span for unknown slot {span.slot!r}")
        if not (0 <= span.start < span.exclusive_end <= len(utterance)):
            raise DataError(
                f"{where}: span ({span.start}, {span.exclusive_end}) outside utterance "
                f"of length {len(utterance)}"
            )
        sliced = normalize_value(utterance[span.start : span.exclusive_end])
        aliases = frame.state.slot_values.get(span.slot, ())
        if aliases and sliced not in {normalize_value(a) for a in aliases}:
            raise DataError(
                f"{where}: span for {span.slot!r} slices to {sliced!r}, "
                f"not one of the annotated values {list(aliases)}"
            )


def dialogue_from_json(raw: dict, schemas: Mapping[str, Schema], where: str = "$") -> Dialogue:
    dialogue_id = str(_require(raw, "dialogue_id", where))
    services = tuple(str(s) for s in _require(raw, "services", where))
    for service in services:
        if service not in schemas:
            raise DataError(f"{where}: dialogue {dialogue_id!r} references unknown "
                            f"service {service!r}")
    turns: list[Turn] = []
    for i, t in enumerate(raw.get("turns", ())):
        w = f"{where}.turns[{i}]"
        speaker = str(_require(t, "speaker", w))
        if speaker not in (USER, SYSTEM):
            raise DataError(f"{w}: speaker must be USER or SYSTEM, got {speaker!r}")
        utterance = str(_require(t, "utterance", w))
        frames = [
            _frame_from_json(f, f"{w}.frames[{j}]") for j, f in enumerate(t.get("frames", ()))
        ]
        turns.append(Turn(speaker=speaker, utterance=utterance, frames=frames))

    dialogue = Dialogue(dialogue_id=dialogue_id, services=services, turns=turns)
    _validate_dialogue(dialogue, schemas, where)
    return dialogue


def _validate_dialogue(dialogue: Dialogue, schemas: Mapping[str, Schema], where: str) -> None:
    if not dialogue.turns:
        raise DataError(f"{where}: dialogue {dialogue.dialogue_id!r} has no turns")
    for i, turn in enumerate(dialogue.turns):
        expected = USER if i % 2 == 0 else SYSTEM
        if turn.speaker != expected:
            raise DataError(
                f"{where}.turns[{i}]: expected {expected} (speakers must alternate "
                f"starting with USER), got {turn.speaker}"
            )
    if dialogue.turns[-1].speaker != USER:
        raise DataError(f"{where}: dialogue {dialogue.dialogue_id!r} must end with a USER turn")
    for i, turn in enumerate(dialogue.turns):
        if turn.speaker == USER:
            if not turn.frames:
                raise DataError(f"{where}.turns[{i}]: USER turn carries no frames")
            for j, frame in enumerate(turn.frames):
                if frame.service not in dialogue.services:
                    raise DataError(
                        f"{where}.turns[{i}].frames[{j}]: service {frame.service!r} "
                        f"not listed by the dialogue"
                    )
                _validate_frame(frame, turn.utterance, schemas, f"{where}.turns[{i}].frames[{j}]")


def dialogue_to_json(dialogue: Dialogue) -> dict:
    return {
        "dialogue_id": dialogue.dialogue_id,
        "services": list(dialogue.services),
        "turns": [
            {
                "speaker": t.speaker,
                "utterance": t.utterance,
                "frames": [
                    {
                        "service": f.service,
                        "state": {
                            "active_intent": f.state.active_intent,
                            "requested_slots": list(f.state.requested_slots),
                            "slot_values": {k: list(v) for k, v in f.state.slot_values.items()},
                        },
                        "slots": [
                            {"slot": s.slot, "start": s.start, "exclusive_end": s.exclusive_end}
                            for s in f.spans
                        ],
                    }
                    for f in t.frames
                ],
            }
            for t in dialogue.turns
        ],
    }


def parse_dialogue_file(path: str | Path, schemas: Mapping[str, Schema]) -> list[Dialogue]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dialogue file not found: {path}")
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise DataError(f"{path}: expected a JSON array of dialogues")
    return [dialogue_from_json(obj, schemas, where=f"$[{i}]") for i, obj in enumerate(raw)]


def write_dialogue_file(dialogues: Iterable[Dialogue], path: str | Path) -> None:
    payload = [dialogue_to_json(d) for d in dialogues]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def load_split(split_dir: str | Path, split: str = "") -> Corpus:
    """Read schema.json plus every dialogues_*.json in a split directory."""
    split_dir = Path(split_dir)
    if not split_dir.is_dir():
        raise ConfigError(f"split directory not found: {split_dir}")
    schemas = {s.service_name: s for s in parse_schema_file(split_dir / "schema.json")}
    dialogues: list[Dialogue] = []
    for path in sorted(split_dir.glob("dialogues_*.json")):
        dialogues.extend(parse_dialogue_file(path, schemas))
    return Corpus(schemas=schemas, dialogues=dialogues, split=split or split_dir.name)


def write_split(corpus: Corpus, split_dir: str | Path) -> None:
    split_dir = Path(split_dir)
    split_dir.mkdir(parents=True, exist_ok=True)
    write_schema_file(corpus.schemas.values(), split_dir / "schema.json")
    write_dialogue_file(corpus.dialogues, split_dir / "dialogues_001.json")


# ---------------------------------------------------------------------------
# ontology conversion


def woz_to_schema(
    ontology: Mapping[str, Iterable[str]],
    categorical: bool = True,
    service_name: str = "restaurant",
    description: str = "restaurant reservation service",
) -> Schema:
    """Single-service schema from a slot -> values ontology.

    In categorical mode every slot keeps the ontology's value list; in
    non-categorical mode values are dropped and slots become span-typed.
    Slot descriptions default to the slot name.
    """
    if not ontology:
        raise SchemaError("empty ontology")
    slots = []
    for name, values in ontology.items():
        values = tuple(str(v) for v in values)
        if categorical:
            if not values:
                raise SchemaError(f"slot {name!r} has no values; cannot be categorical")
            slots.append(Slot(name=name, description=name, is_categorical=True,
                              possible_values=values))
        else:
            slots.append(Slot(name=name, description=name, is_categorical=False))
    return Schema(service_name=service_name, description=description,
                  intents=(), slots=tuple(slots))
