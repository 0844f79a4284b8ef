"""Synthetic corpus generator: determinism, span integrity, split layout."""

from __future__ import annotations

import pytest

from schemadst.data import DONTCARE, NONE_INTENT, USER, dialogue_to_json, load_split, write_split
from schemadst.errors import ConfigError
from schemadst.synth import (
    SynthSpec,
    corpus_statistics,
    format_statistics,
    generate_synthetic_corpus,
)
from schemadst.text import tokenize
from schemadst.training import vocabulary_corpus


@pytest.fixture(scope="module")
def splits():
    return generate_synthetic_corpus(SynthSpec(n_dialogues=200), seed=7)


def test_same_seed_gives_byte_identical_corpora(splits):
    again = generate_synthetic_corpus(SynthSpec(n_dialogues=200), seed=7)
    for name in ("train", "dev", "test"):
        ours = [dialogue_to_json(d) for d in splits[name].dialogues]
        theirs = [dialogue_to_json(d) for d in again[name].dialogues]
        assert ours == theirs


def test_different_seed_differs():
    a = generate_synthetic_corpus(SynthSpec(n_dialogues=20), seed=1)
    b = generate_synthetic_corpus(SynthSpec(n_dialogues=20), seed=2)
    assert [dialogue_to_json(d) for d in a["train"].dialogues] != [
        dialogue_to_json(d) for d in b["train"].dialogues
    ]


def test_dialogue_count_contract(splits):
    assert len(splits["train"].dialogues) == 160
    assert len(splits["dev"].dialogues) == 20
    assert len(splits["test"].dialogues) == 20


def test_every_span_slices_to_its_value(splits):
    for corpus in splits.values():
        for dialogue in corpus.dialogues:
            for turn in dialogue.turns:
                for frame in turn.frames:
                    for span in frame.spans:
                        sliced = turn.utterance[span.start:span.exclusive_end]
                        assert sliced in frame.state.slot_values[span.slot]


def test_unseen_service_only_in_test(splits):
    train_services = set(splits["train"].schemas)
    test_used = {
        f.service for d in splits["test"].dialogues for t in d.turns for f in t.frames
    }
    unseen = test_used - train_services
    assert len(unseen) == 1
    for name in ("train", "dev"):
        used = {
            f.service for d in splits[name].dialogues for t in d.turns for f in t.frames
        }
        assert used <= train_services


def test_final_state_equals_union_of_updates(splits):
    """Replaying per-turn diffs reproduces the final cumulative state."""
    for dialogue in splits["train"].dialogues:
        replayed: dict[str, tuple[str, ...]] = {}
        final = None
        for _, turn in dialogue.user_turns():
            frame = turn.frames[0]
            for slot, aliases in frame.state.slot_values.items():
                if replayed.get(slot) != aliases:
                    replayed[slot] = aliases
            final = frame.state.slot_values
        assert final == replayed


def test_unseen_schema_words_covered_by_training_vocabulary(splits):
    """Zero-shot transfer needs the twin's text to tokenize into known words."""
    train_words = set()
    for text in vocabulary_corpus(splits["train"]):
        train_words.update(t.text for t in tokenize(text))
    unseen_name = next(iter(set(splits["test"].schemas) - set(splits["train"].schemas)))
    schema = splits["test"].schemas[unseen_name]
    texts = [schema.service_name.replace("_", " "), schema.description]
    for intent in schema.intents:
        texts += [intent.name.replace("_", " "), intent.description]
    for slot in schema.slots:
        texts += [slot.name.replace("_", " "), slot.description]
        texts += list(slot.possible_values)
    for text in texts:
        for token in tokenize(text):
            assert token.text in train_words, f"{token.text!r} from {text!r} not in train vocab"


def test_unseen_slots_paraphrase_a_seen_service(splits):
    unseen_name = next(iter(set(splits["test"].schemas) - set(splits["train"].schemas)))
    unseen = splits["test"].schemas[unseen_name]
    seen_names = {
        name: schema for name, schema in splits["train"].schemas.items()
    }
    # slot value sets of the twin match its seen source exactly, names differ
    source = None
    for schema in seen_names.values():
        if [s.possible_values for s in schema.slots] == [
            s.possible_values for s in unseen.slots
        ]:
            source = schema
    assert source is not None
    assert [s.name for s in source.slots] != [s.name for s in unseen.slots]


def test_turn_counts_respect_range(splits):
    spec = SynthSpec(n_dialogues=30, turn_range=(2, 4))
    out = generate_synthetic_corpus(spec, seed=3)
    for dialogue in out["train"].dialogues:
        n_user = len(dialogue.user_turns())
        assert 2 <= n_user <= 4


def test_greeting_turns_have_none_intent(splits):
    greeting_seen = False
    for dialogue in splits["train"].dialogues:
        first = dialogue.turns[0]
        frame = first.frames[0]
        if not frame.state.slot_values and frame.state.active_intent == NONE_INTENT:
            greeting_seen = True
            assert not frame.spans
    assert greeting_seen


def test_dontcare_assignments_present(splits):
    found = False
    for dialogue in splits["train"].dialogues:
        for _, turn in dialogue.user_turns():
            for aliases in turn.frames[0].state.slot_values.values():
                if aliases[0] == DONTCARE:
                    found = True
    assert found


def test_malformed_turn_range_rejected():
    with pytest.raises(ConfigError):
        SynthSpec(turn_range=(3, 1))
    with pytest.raises(ConfigError):
        SynthSpec(turn_range=(0, 2))
    with pytest.raises(ConfigError):
        SynthSpec(n_dialogues=0)


def test_written_corpus_reloads_and_validates(tmp_path, splits):
    for name, corpus in splits.items():
        write_split(corpus, tmp_path / name)
    train = load_split(tmp_path / "train", "train")
    assert len(train.dialogues) == 160
    test = load_split(tmp_path / "test", "test")
    assert len(test.schemas) == len(splits["test"].schemas)


def test_statistics_match_corpus(splits):
    stats = corpus_statistics(splits)
    assert stats["train"]["dialogues"] == 160
    assert stats["test"]["unseen_services"] == 1
    assert stats["dev"]["user_turns"] == sum(
        len(d.user_turns()) for d in splits["dev"].dialogues
    )
    rendered = format_statistics(stats)
    assert "dialogues" in rendered and "160" in rendered
