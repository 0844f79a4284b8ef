"""Target construction, loss semantics, and the optimization loop."""

from __future__ import annotations

import math

import numpy as np
import pytest

from schemadst.autograd import GradientTape, backward
from schemadst.data import DONTCARE, Frame, FrameState, Intent, Schema, Slot, SpanAnnotation, \
    Dialogue, Turn
from schemadst.encoder import encode_turn
from schemadst.errors import DataError
from schemadst.heads import STATUS_DONTCARE, STATUS_NONE, STATUS_VALUE
from schemadst.schema_embed import embed_schema
from schemadst.synth import SynthSpec, generate_synthetic_corpus
from schemadst.text import build_vocab
from schemadst.tracker import Tracker, forward_turn
from schemadst.training import (
    Adam,
    LossWeights,
    TrainConfig,
    build_model,
    compute_loss,
    load_checkpoint,
    make_targets,
    save_checkpoint,
    train,
    vocabulary_corpus,
)


@pytest.fixture(scope="module")
def schema():
    return Schema(
        service_name="rides",
        description="city rides",
        intents=(Intent("book_ride", "book a ride"),),
        slots=(
            Slot("area", "part of town", True, ("north", "south")),
            Slot("destination", "where to go", False),
        ),
    )


def _dialogue(schema) -> Dialogue:
    u1 = "book me a ride to san jose"
    u2 = "make the area north"
    return Dialogue(
        dialogue_id="d0",
        services=("rides",),
        turns=[
            Turn("USER", u1, [Frame(
                service="rides",
                state=FrameState("book_ride", (), {"destination": ("san jose",)}),
                spans=(SpanAnnotation("destination", u1.index("san"), u1.index("san") + 8),),
            )]),
            Turn("SYSTEM", "which area ?", []),
            Turn("USER", u2, [Frame(
                service="rides",
                state=FrameState("book_ride", ("destination",),
                                 {"destination": ("san jose",), "area": ("north",)}),
            )]),
        ],
    )


@pytest.fixture(scope="module")
def vocab(schema):
    return build_vocab([
        "book me a ride to san jose make the area north which ?",
        "part of town where go city rides",
    ])


def test_targets_diff_consecutive_states(schema, vocab):
    examples = make_targets(_dialogue(schema), {"rides": schema}, vocab)
    assert len(examples) == 2
    first, second = examples
    assert first.targets.intent_index == 1
    assert first.targets.status == {"area": STATUS_NONE, "destination": STATUS_VALUE}
    assert second.targets.status == {"area": STATUS_VALUE, "destination": STATUS_NONE}
    assert second.targets.categorical_value == {"area": 0}
    assert second.targets.requested == {"area": 0, "destination": 1}


def test_span_target_covers_annotation(schema, vocab):
    examples = make_targets(_dialogue(schema), {"rides": schema}, vocab)
    span = examples[0].targets.span["destination"]
    assert span is not None
    start, end = span
    # the user token list for turn 1: book me a ride to san jose
    assert (start, end) == (5, 6)


def test_covering_window_oracle(schema, vocab):
    """Smallest covering window against a brute-force scan."""
    from schemadst.training import _covering_window

    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 10))
        offsets = []
        cursor = 0
        for _ in range(n):
            width = int(rng.integers(1, 6))
            offsets.append((cursor, cursor + width))
            cursor += width + int(rng.integers(0, 2))
        start = int(rng.integers(0, cursor + 1))
        end = int(rng.integers(start + 1, cursor + 2))
        got = _covering_window(offsets, start, end)
        hits = [k for k, (s, e) in enumerate(offsets) if e > start and s < end]
        want = (hits[0], hits[-1]) if hits else None
        assert got == want


def test_dontcare_target_has_no_value(schema, vocab):
    dialogue = _dialogue(schema)
    dialogue.turns[2].frames[0].state.slot_values["area"] = (DONTCARE,)
    examples = make_targets(dialogue, {"rides": schema}, vocab)
    assert examples[1].targets.status["area"] == STATUS_DONTCARE
    assert "area" not in examples[1].targets.categorical_value


def test_categorical_value_missing_from_schema_is_data_error(schema, vocab):
    dialogue = _dialogue(schema)
    dialogue.turns[2].frames[0].state.slot_values["area"] = ("downtown",)
    with pytest.raises(DataError, match="downtown"):
        make_targets(dialogue, {"rides": schema}, vocab)


def test_unalignable_span_is_untrainable(schema, vocab):
    dialogue = _dialogue(schema)
    # value carried from a system turn: mentioned nowhere in the user utterance
    dialogue.turns[0].frames[0].state.slot_values["destination"] = ("palo alto",)
    dialogue.turns[0].frames[0].spans = ()
    dialogue.turns[2].frames[0].state.slot_values["destination"] = ("palo alto",)
    examples = make_targets(dialogue, {"rides": schema}, vocab)
    assert examples[0].targets.span["destination"] is None


@pytest.fixture(scope="module")
def tiny_model(schema, vocab):
    config = TrainConfig(hidden_dim=16, n_layers=1, n_heads=2, epochs=1, seed=3)
    model = build_model(vocab, config)
    emb = embed_schema(schema, vocab, model.params, model.encoder_cfg)
    return model, emb


def test_perfect_predictions_give_near_zero_loss(schema, vocab, tiny_model):
    """Loss at certainty: drive logits to the gold one-hots and check ~0."""
    model, emb = tiny_model
    examples = make_targets(_dialogue(schema), {"rides": schema}, vocab)
    example = examples[1]
    encoded = encode_turn(example.system_text, example.user_text, vocab,
                          model.params, model.encoder_cfg)
    fwd = forward_turn(encoded, emb, model.params, model.head_cfg)

    from schemadst.autograd import Tensor
    from schemadst.tracker import TurnForward

    big = 50.0
    intent = np.full(2, -big)
    intent[example.targets.intent_index] = big
    perfect = TurnForward(
        service=fwd.service,
        intent_logits=Tensor(intent),
        slot_names=fwd.slot_names,
        requested_logits={
            s: Tensor([big if example.targets.requested[s] else -big])
            for s in fwd.slot_names
        },
        status_logits={
            s: Tensor([big if example.targets.status[s] == k else -big for k in range(3)])
            for s in fwd.slot_names
        },
        categorical_logits={
            s: Tensor([big if i == gold else -big
                       for i in range(len(emb.value_names[s]))])
            for s, gold in example.targets.categorical_value.items()
        },
        span_bounds={},
        user_indices=fwd.user_indices,
    )
    loss, breakdown = compute_loss(perfect, example.targets)
    assert loss.item() < 1e-6
    assert all(v < 1e-6 for v in breakdown.values())


def test_uniform_intent_loss_is_log_k():
    from schemadst.autograd import Tensor
    from schemadst.tracker import TurnForward
    from schemadst.training import FrameTargets

    fwd = TurnForward(
        service="rides",
        intent_logits=Tensor(np.zeros(4)),  # J+1 = 4 candidates
        slot_names=(),
        requested_logits={},
        status_logits={},
        categorical_logits={},
        span_bounds={},
        user_indices=np.array([], dtype=int),
    )
    targets = FrameTargets(service="rides", intent_index=2, requested={}, status={},
                           categorical_value={}, span={})
    loss, breakdown = compute_loss(fwd, targets, LossWeights())
    assert abs(breakdown["intent"] - math.log(4.0)) < 1e-9
    assert abs(loss.item() - math.log(4.0)) < 1e-9


def test_zero_weight_disables_head_gradient(schema, vocab):
    config = TrainConfig(hidden_dim=12, n_layers=1, n_heads=2, epochs=1, seed=4)
    model = build_model(vocab, config)
    emb = embed_schema(schema, vocab, model.params, model.encoder_cfg)
    examples = make_targets(_dialogue(schema), {"rides": schema}, vocab)
    example = examples[1]

    def grads_for(weights):
        with GradientTape() as tape:
            encoded = encode_turn(example.system_text, example.user_text, vocab,
                                  model.params, model.encoder_cfg)
            fwd = forward_turn(encoded, emb, model.params, model.head_cfg)
            loss, _ = compute_loss(fwd, example.targets, weights)
        return backward(loss, tape)

    only_status_off = grads_for(LossWeights(intent=0.0, requested=0.0,
                                            categorical=0.0, span=0.0))
    g = only_status_off.get(model.params["intent.join.weight"])
    assert g is None or np.abs(g).max() == 0.0
    g_status = only_status_off.get(model.params["status.join.weight"])
    assert g_status is not None and np.abs(g_status).max() > 0.0


def test_overfit_single_example(schema, vocab):
    """50 steps at lr 1e-3 on one turn drive the loss below 0.01."""
    config = TrainConfig(hidden_dim=64, n_layers=1, n_heads=2, epochs=1, seed=0)
    model = build_model(vocab, config)
    emb = embed_schema(schema, vocab, model.params, model.encoder_cfg)
    example = make_targets(_dialogue(schema), {"rides": schema}, vocab)[0]

    optimizer = Adam(model.params, lr=1e-3)
    last = None
    for _ in range(50):
        with GradientTape() as tape:
            encoded = encode_turn(example.system_text, example.user_text, vocab,
                                  model.params, model.encoder_cfg)
            fwd = forward_turn(encoded, emb, model.params, model.head_cfg)
            loss, _ = compute_loss(fwd, example.targets)
        optimizer.step(backward(loss, tape))
        last = loss.item()
    assert last < 0.01


@pytest.fixture(scope="module")
def small_corpus():
    return generate_synthetic_corpus(SynthSpec(n_dialogues=12), seed=9)


def test_train_smoke_two_epochs(small_corpus):
    config = TrainConfig(hidden_dim=16, n_layers=1, n_heads=2, epochs=2,
                         learning_rate=1e-3, batch_size=8, seed=0)
    model, history = train(small_corpus["train"], small_corpus["dev"], config)
    assert len(history) == 2
    assert all(np.isfinite(h["train_loss"]) for h in history)
    assert "dev" in history[-1]


def test_train_deterministic_given_seed(small_corpus):
    config = TrainConfig(hidden_dim=12, n_layers=1, n_heads=2, epochs=2,
                         learning_rate=1e-3, batch_size=8, seed=11)
    _, h1 = train(small_corpus["train"], small_corpus["dev"], config)
    _, h2 = train(small_corpus["train"], small_corpus["dev"], config)
    assert h1 == h2


def test_training_never_touches_schema_embeddings(small_corpus):
    """Strict mode: embedding bytes identical across the entire run."""
    config = TrainConfig(hidden_dim=12, n_layers=1, n_heads=2, epochs=2,
                         learning_rate=1e-3, batch_size=8, seed=2,
                         strict_schema_freeze=True)
    from schemadst.text import build_vocab as bv

    vocab = bv(vocabulary_corpus(small_corpus["train"]))
    reference = build_model(vocab, config)
    frozen = {
        name: embed_schema(schema, vocab, reference.params, reference.encoder_cfg)
        for name, schema in small_corpus["train"].schemas.items()
    }
    before = {name: emb.fingerprint() for name, emb in frozen.items()}
    model, _ = train(small_corpus["train"], None, config)
    tracker = Tracker(model)
    # recompute from the reference (initial) weights: unchanged by training
    after = {name: emb.fingerprint() for name, emb in frozen.items()}
    assert before == after


def test_checkpoint_round_trip(tmp_path, small_corpus):
    config = TrainConfig(hidden_dim=12, n_layers=1, n_heads=2, epochs=1,
                         learning_rate=1e-3, batch_size=8, seed=6)
    model, _ = train(small_corpus["train"], None, config)
    save_checkpoint(tmp_path / "ckpt", model, step=42, extra={"mode": model.mode})
    loaded, manifest = load_checkpoint(tmp_path / "ckpt")
    assert manifest["step"] == 42
    assert loaded.mode == model.mode
    assert loaded.vocab.tokens() == model.vocab.tokens()
    for name in model.params.names():
        original = model.params[name].data.astype("<f4")
        assert np.array_equal(loaded.params[name].data.astype("<f4"), original)
        assert loaded.params.is_frozen(name) == model.params.is_frozen(name)
