"""Deterministic synthetic dialogue corpora in the schema-guided layout.

A small world of slot concepts (each with a paraphrase twin) is assembled
into services; dialogues are scripted turn by turn from a template bank
with slot values inlined, so gold frames and character spans are correct
by construction. One service is reserved as unseen: its slots, intents and
descriptions paraphrase the first seen service using only words that also
occur in the seen services' text, and its dialogues appear only in the
test split.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Mapping

from .data import (
    DONTCARE,
    NONE_INTENT,
    SYSTEM,
    USER,
    Corpus,
    Dialogue,
    Frame,
    FrameState,
    Intent,
    Schema,
    Slot,
    SpanAnnotation,
    Turn,
)
from .errors import ConfigError


@dataclass(frozen=True)
class _Concept:
    """One slot archetype: seen and paraphrased (name, description) plus values."""

    seen: tuple[str, str]
    twin: tuple[str, str]
    values: tuple[str, ...]
    categorical: bool


# Twin names and descriptions use only words from their seen counterpart
# (plus the service-level glue words), so the unseen service's schema text
# always tokenizes into words present in the training vocabulary.
_CONCEPTS = (
    _Concept(("cuisine", "the type of food you want to eat"),
             ("food_type", "the type of food to eat"),
             ("italian", "thai", "mexican", "sushi", "vegan", "korean"), True),
    _Concept(("area", "the part of town you want to be in"),
             ("town_part", "the part of town to be in"),
             ("north", "south", "east", "west", "centre", "riverside"), True),
    _Concept(("price_range", "how much money you want to spend"),
             ("money_range", "how much money you spend"),
             ("cheap", "moderate", "expensive", "premium"), True),
    _Concept(("seating", "the place where you want to sit"),
             ("sit_place", "the place where you sit"),
             ("indoor", "outdoor", "booth", "window", "patio"), True),
    _Concept(("day", "the day you want to go there"),
             ("go_day", "the day to go there"),
             ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday"), True),
    _Concept(("party_size", "how many people will go with you"),
             ("people_size", "how many people go with you"),
             ("two", "three", "four", "five", "six"), True),
    _Concept(("music_genre", "the style of music you want to hear"),
             ("music_style", "the music style you hear"),
             ("jazz", "rock", "classical", "folk", "blues"), True),
    _Concept(("room_type", "the kind of room you want to stay in"),
             ("room_kind", "the kind of room to stay in"),
             ("single", "double", "twin", "family", "studio"), True),
    _Concept(("rating", "the star level you want the spot to have"),
             ("star_level", "the star level you want"),
             ("excellent", "decent", "average", "superb"), True),
    _Concept(("venue_name", "the name of the place you want to visit"),
             ("place_name", "the name of the place to visit"),
             ("golden palace", "sea breeze", "urban garden", "blue lotus",
              "royal kitchen", "sunset terrace", "silver spoon", "lucky dragon"), False),
    _Concept(("pickup_point", "the spot where we pick you up"),
             ("pickup_spot", "the spot where we pick up"),
             ("main station", "city mall", "harbor front", "old bridge",
              "market square", "grand hotel", "north campus", "river dock"), False),
    _Concept(("destination", "the place you want to travel to"),
             ("travel_place", "the place to travel to"),
             ("san jose", "palo alto", "union square", "green hills",
              "ocean beach", "mission bay"), False),
)

_SERVICE_THEMES = ("meal", "ride", "room", "event", "trip", "show", "tour", "visit")

DEFAULT_PARAPHRASE_BANK: dict[str, tuple[str, ...]] = {
    "greeting": ("hello there", "hi , can you help me", "good evening"),
    "find_intent": ("i want to find something", "please find me something good",
                    "can you find an option for me"),
    "book_intent": ("i want to book now", "please book it for me",
                    "i would like to book this"),
    "inform": ("the {slot} should be {value}", "i want {value} for the {slot}",
               "set the {slot} to {value}", "make the {slot} {value}",
               "{value} is my choice for the {slot}"),
    "dontcare": ("any {slot} is fine", "i do not care about the {slot}",
                 "whatever {slot} works for me"),
    "request": ("what is the {slot} ?", "can you tell me the {slot} ?",
                "tell me the {slot} please"),
    "answer": ("{value} please", "{value} sounds good", "make it {value}"),
    "system_ack": ("okay , noted .", "sure thing .", "got it . anything else ?"),
    "system_ask": ("which {slot} would you like ?", "what {slot} do you prefer ?"),
    "system_check": ("let me check the {slot} for you .",),
}


@dataclass(frozen=True)
class SynthSpec:
    n_services: int = 4
    slots_per_service: tuple[int, int] = (4, 6)
    values_per_slot: tuple[int, int] = (4, 6)
    n_dialogues: int = 200
    turn_range: tuple[int, int] = (1, 3)
    paraphrase_bank: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_PARAPHRASE_BANK)
    )

    def __post_init__(self):
        for name in ("n_services", "n_dialogues"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_services < 2:
            raise ConfigError("need at least 2 services (one is reserved as unseen)")
        if self.n_services - 1 > len(_SERVICE_THEMES):
            raise ConfigError(f"at most {len(_SERVICE_THEMES) + 1} services supported")
        for name in ("slots_per_service", "values_per_slot", "turn_range"):
            rng_ = getattr(self, name)
            if len(rng_) != 2 or rng_[0] < 1 or rng_[0] > rng_[1]:
                raise ConfigError(f"{name} must be a (low, high) range with 1 <= low <= high")
        if self.slots_per_service[1] > len(_CONCEPTS):
            raise ConfigError(f"at most {len(_CONCEPTS)} slots per service supported")
        for key in DEFAULT_PARAPHRASE_BANK:
            if not self.paraphrase_bank.get(key):
                raise ConfigError(f"paraphrase bank is missing templates for {key!r}")


def _phrase(name: str) -> str:
    return name.replace("_", " ")


@dataclass
class _Blueprint:
    schema: Schema
    concept_of: dict[str, _Concept]
    values_of: dict[str, tuple[str, ...]]
    find_intent: str
    book_intent: str


def _build_service(
    rng: random.Random,
    theme: str,
    concepts: list[_Concept],
    spec: SynthSpec,
    twin: bool = False,
    name_suffix: str = "",
) -> _Blueprint:
    pick = 1 if twin else 0
    slots = []
    concept_of: dict[str, _Concept] = {}
    values_of: dict[str, tuple[str, ...]] = {}
    for concept in concepts:
        name, description = concept.twin if twin else concept.seen
        if concept.categorical:
            k = min(len(concept.values), rng.randint(*spec.values_per_slot))
            values = tuple(sorted(rng.sample(concept.values, k)))
        else:
            values = ()
        slots.append(Slot(name=name, description=description,
                          is_categorical=concept.categorical, possible_values=values))
        concept_of[name] = concept
        values_of[name] = values if concept.categorical else concept.values
    slot_names = [s.name for s in slots]
    half = max(1, len(slot_names) // 2)

    if twin:
        find_name, find_desc = f"search_{theme}", f"search and find a {theme} you will like"
        book_name, book_desc = f"reserve_{theme}", f"reserve and book a {theme} right away"
        service_name = f"{theme}_search{name_suffix}"
        service_desc = f"search and book a {theme} you will like"
    else:
        find_name, find_desc = f"find_{theme}", f"search for a {theme} you will like"
        book_name, book_desc = f"book_{theme}", f"reserve and book a {theme} right away"
        service_name = f"{theme}_planner{name_suffix}"
        service_desc = f"helps you find and book a {theme}"

    schema = Schema(
        service_name=service_name,
        description=service_desc,
        intents=(
            Intent(find_name, find_desc, tuple(slot_names[:half]), tuple(slot_names[half:])),
            Intent(book_name, book_desc, tuple(slot_names[:half]), tuple(slot_names[half:])),
        ),
        slots=tuple(slots),
    )
    return _Blueprint(schema, concept_of, values_of, find_name, book_name)


def _build_world(rng: random.Random, spec: SynthSpec) -> tuple[list[_Blueprint], _Blueprint]:
    """All seen services plus the unseen paraphrase twin of the first one."""
    themes = list(_SERVICE_THEMES[: spec.n_services - 1])
    seen: list[_Blueprint] = []
    for i, theme in enumerate(themes):
        n_slots = rng.randint(*spec.slots_per_service)
        noncat = [c for c in _CONCEPTS if not c.categorical]
        cat = [c for c in _CONCEPTS if c.categorical]
        chosen = rng.sample(noncat, 1) + rng.sample(cat, n_slots - 1)
        rng.shuffle(chosen)
        seen.append(_build_service(rng, theme, chosen, spec))
    first = seen[0]
    twin_concepts = [first.concept_of[s.name] for s in first.schema.slots]
    unseen = _build_service(rng, themes[0], twin_concepts, spec, twin=True)
    # the twin mirrors the seen service's categorical value subsets exactly
    fixed_slots = []
    for seen_slot, twin_slot in zip(first.schema.slots, unseen.schema.slots):
        fixed_slots.append(Slot(twin_slot.name, twin_slot.description,
                                twin_slot.is_categorical, seen_slot.possible_values))
        unseen.values_of[twin_slot.name] = first.values_of[seen_slot.name]
    unseen.schema = Schema(unseen.schema.service_name, unseen.schema.description,
                           unseen.schema.intents, tuple(fixed_slots))
    return seen, unseen


class _Script:
    """Composable utterance: text plus spans of inlined values."""

    def __init__(self):
        self.text = ""
        self.spans: list[tuple[str, int, int]] = []

    def append(self, clause: str, slot: str | None = None, value: str | None = None,
               joiner: str = " and ") -> None:
        if slot is not None:
            clause = clause.replace("{slot}", _phrase(slot))
        if value is not None:
            at = clause.index("{value}")
            clause = clause.replace("{value}", value)
            span = (slot, at, at + len(value))
        else:
            span = None
        if self.text:
            offset = len(self.text) + len(joiner)
            self.text = self.text + joiner + clause
        else:
            offset = 0
            self.text = clause
        if span is not None and slot is not None:
            self.spans.append((slot, span[1] + offset, span[2] + offset))


def _generate_dialogue(
    rng: random.Random,
    dialogue_id: str,
    blueprint: _Blueprint,
    spec: SynthSpec,
) -> Dialogue:
    bank = spec.paraphrase_bank
    schema = blueprint.schema
    slot_names = [s.name for s in schema.slots]
    n_user_turns = rng.randint(*spec.turn_range)

    cumulative: dict[str, str] = {}
    active_intent = NONE_INTENT
    pending_ask: str | None = None

    turns: list[Turn] = []
    for turn_no in range(n_user_turns):
        script = _Script()
        requested: tuple[str, ...] = ()
        unset = [s for s in slot_names if s not in cumulative]

        if turn_no == 0:
            if rng.random() < 0.1 and n_user_turns > 1:
                script.append(rng.choice(bank["greeting"]))
            else:
                if rng.random() < 0.5:
                    active_intent = blueprint.find_intent
                    script.append(rng.choice(bank["find_intent"]))
                else:
                    active_intent = blueprint.book_intent
                    script.append(rng.choice(bank["book_intent"]))
                for slot in rng.sample(unset, min(len(unset), rng.randint(1, 2))):
                    value = rng.choice(blueprint.values_of[slot])
                    script.append(rng.choice(bank["inform"]), slot=slot, value=value,
                                  joiner=" . ")
                    cumulative[slot] = value
        elif pending_ask is not None:
            slot = pending_ask
            value = rng.choice(blueprint.values_of[slot])
            script.append(rng.choice(bank["answer"]), slot=slot, value=value)
            cumulative[slot] = value
            pending_ask = None
        else:
            choices = ["inform", "dontcare"] if unset else []
            choices.append("request")
            if cumulative:
                choices.append("revise")
            action = rng.choices(
                choices,
                weights=[{"inform": 0.55, "dontcare": 0.15, "request": 0.2,
                          "revise": 0.1}[c] for c in choices],
            )[0]
            if action == "inform":
                for slot in rng.sample(unset, min(len(unset), rng.randint(1, 2))):
                    value = rng.choice(blueprint.values_of[slot])
                    script.append(rng.choice(bank["inform"]), slot=slot, value=value)
                    cumulative[slot] = value
            elif action == "dontcare":
                slot = rng.choice(unset)
                script.append(rng.choice(bank["dontcare"]).replace("{slot}", _phrase(slot)))
                cumulative[slot] = DONTCARE
            elif action == "revise":
                slot = rng.choice(sorted(cumulative))
                fresh = [v for v in blueprint.values_of[slot] if v != cumulative[slot]]
                value = rng.choice(fresh or list(blueprint.values_of[slot]))
                script.append(rng.choice(bank["inform"]), slot=slot, value=value)
                cumulative[slot] = value
            else:
                slot = rng.choice(slot_names)
                script.append(rng.choice(bank["request"]).replace("{slot}", _phrase(slot)))
                requested = (slot,)

        frame = Frame(
            service=schema.service_name,
            state=FrameState(
                active_intent=active_intent,
                requested_slots=requested,
                slot_values={s: (v,) for s, v in cumulative.items()},
            ),
            spans=tuple(SpanAnnotation(slot, start, end) for slot, start, end in script.spans),
        )
        turns.append(Turn(speaker=USER, utterance=script.text, frames=[frame]))

        # system turn between this user turn and the next one
        if turn_no < n_user_turns - 1:
            unset_after = [s for s in slot_names if s not in cumulative]
            if unset_after and rng.random() < 0.3:
                pending_ask = rng.choice(unset_after)
                template = rng.choice(bank["system_ask"])
                system_utterance = template.replace("{slot}", _phrase(pending_ask))
            elif requested:
                template = rng.choice(bank["system_check"])
                system_utterance = template.replace("{slot}", _phrase(requested[0]))
            else:
                system_utterance = rng.choice(bank["system_ack"])
            turns.append(Turn(speaker=SYSTEM, utterance=system_utterance, frames=[]))

    return Dialogue(dialogue_id=dialogue_id, services=(schema.service_name,), turns=turns)


def generate_synthetic_corpus(spec: SynthSpec, seed: int) -> dict[str, Corpus]:
    """Three-way split corpora, byte-deterministic for a given seed.

    The unseen service appears only in test-split dialogues (and in the
    test split's schema file); train and dev cover the seen services.
    """
    rng = random.Random(seed)
    seen, unseen = _build_world(rng, spec)

    n_train = int(spec.n_dialogues * 0.8)
    n_dev = int(spec.n_dialogues * 0.1)
    n_test = spec.n_dialogues - n_train - n_dev

    def make(split: str, count: int, blueprints: list[_Blueprint], start: int,
             unseen_every_other: bool = False) -> list[Dialogue]:
        out = []
        for i in range(count):
            if unseen_every_other and i % 2 == 0:
                bp = unseen
            else:
                bp = rng.choice(blueprints)
            out.append(_generate_dialogue(rng, f"syn_{start + i:05d}", bp, spec))
        return out

    train = make("train", n_train, seen, 0)
    dev = make("dev", n_dev, seen, n_train)
    test = make("test", n_test, seen, n_train + n_dev, unseen_every_other=True)

    seen_schemas = {bp.schema.service_name: bp.schema for bp in seen}
    all_schemas = dict(seen_schemas)
    all_schemas[unseen.schema.service_name] = unseen.schema

    return {
        "train": Corpus(schemas=dict(seen_schemas), dialogues=train, split="train"),
        "dev": Corpus(schemas=dict(seen_schemas), dialogues=dev, split="dev"),
        "test": Corpus(schemas=all_schemas, dialogues=test, split="test"),
    }


def corpus_statistics(splits: Mapping[str, Corpus]) -> dict[str, dict[str, int]]:
    train_services = set(splits["train"].schemas) if "train" in splits else set()
    stats: dict[str, dict[str, int]] = {}
    for name, corpus in splits.items():
        used = {f.service for d in corpus.dialogues for t in d.turns for f in t.frames}
        stats[name] = {
            "dialogues": len(corpus.dialogues),
            "user_turns": sum(len(d.user_turns()) for d in corpus.dialogues),
            "services": len(corpus.schemas),
            "slots": sum(len(s.slots) for s in corpus.schemas.values()),
            "unseen_services": len(used - train_services) if name != "train" else 0,
        }
    return stats


def format_statistics(stats: Mapping[str, Mapping[str, int]]) -> str:
    rows = ["dialogues", "user_turns", "services", "slots", "unseen_services"]
    names = list(stats)
    width = max(len(r) for r in rows) + 2
    head = " " * width + "".join(f"{n:>12}" for n in names)
    lines = [head]
    for row in rows:
        lines.append(f"{row:<{width}}" + "".join(f"{stats[n][row]:>12}" for n in names))
    return "\n".join(lines)
