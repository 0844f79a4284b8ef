"""Supervised targets, multi-head loss, and the optimization loop.

Per-turn gold frames become per-slot targets by diffing consecutive
cumulative states: a slot newly assigned (or changed) this turn is a
dontcare or value update; everything else is "none" (keep). Character
spans are aligned to token windows through the same sequence builder the
encoder uses, so span targets index exactly the positions the span head
scores. Schema embeddings are refreshed between epochs but never receive
gradients; strict mode freezes them at initialization for the entire run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .autograd import (
    GradientTape,
    Gradients,
    Tensor,
    add,
    backward,
    binary_cross_entropy_with_logits,
    concat,
    cross_entropy_with_logits,
    mul,
    tmean,
)
from .data import (
    DONTCARE,
    NONE_INTENT,
    SYSTEM,
    USER,
    Corpus,
    Dialogue,
    Schema,
    normalize_value,
)
from .encoder import EncoderConfig, encode_turn, init_encoder_params
from .errors import ConfigError, DataError, NumericError
from .heads import (
    DOMAIN_AND_SLOT,
    MODES,
    STATUS_DONTCARE,
    STATUS_NONE,
    STATUS_VALUE,
    HeadConfig,
    init_head_params,
)
from .nn import ParameterStore
from .text import SRC_SECOND, Vocab, build_sequence, build_vocab
from .tracker import Model, Thresholds, TurnForward, forward_turn

SCHEMA_TEXT_KINDS = ("name", "description")


@dataclass(frozen=True)
class LossWeights:
    intent: float = 1.0
    requested: float = 1.0
    status: float = 1.0
    categorical: float = 1.0
    span: float = 1.0


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    hidden_dim: int = 128
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 128
    mode: str = DOMAIN_AND_SLOT
    loss_weights: LossWeights = field(default_factory=LossWeights)
    thresholds: Thresholds = field(default_factory=Thresholds)
    strict_schema_freeze: bool = False
    vocab_min_count: int = 1
    gelu_approximate: bool = False

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "epochs", "hidden_dim",
                     "n_layers", "n_heads", "max_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class FrameTargets:
    """Gold indices for one (turn, service): the supervision for every head."""

    service: str
    intent_index: int
    requested: dict[str, int]
    status: dict[str, int]
    categorical_value: dict[str, int]
    span: dict[str, tuple[int, int] | None]  # indices into the user token list


@dataclass
class TurnExample:
    dialogue_id: str
    turn_index: int
    service: str
    system_text: str
    user_text: str
    targets: FrameTargets


def _user_token_offsets(
    vocab: Vocab, system_text: str, user_text: str, max_len: int
) -> list[tuple[int, int]]:
    """Character spans of the user tokens exactly as the encoder will see them."""
    seq = build_sequence(vocab, system_text, user_text, max_len, allow_empty_first=True)
    return [off for off, src in zip(seq.token_offsets, seq.sources) if src == SRC_SECOND]


def _covering_window(
    offsets: list[tuple[int, int]], start: int, end: int
) -> tuple[int, int] | None:
    """Smallest token window overlapping [start, end), or None if uncovered."""
    hits = [k for k, (s, e) in enumerate(offsets) if e > start and s < end]
    if not hits:
        return None
    return hits[0], hits[-1]


def make_targets(
    dialogue: Dialogue,
    schemas: dict[str, Schema],
    vocab: Vocab,
    max_len: int = 128,
) -> list[TurnExample]:
    """One training example per (USER turn, annotated service)."""
    examples: list[TurnExample] = []
    previous: dict[str, dict[str, tuple[str, ...]]] = {}
    previous_system = ""
    for index, turn in enumerate(dialogue.turns):
        if turn.speaker == SYSTEM:
            previous_system = turn.utterance
            continue
        for frame in turn.frames:
            schema = schemas[frame.service]
            prev_values = previous.get(frame.service, {})
            state = frame.state
            requested = {s.name: int(s.name in state.requested_slots) for s in schema.slots}
            status: dict[str, int] = {}
            categorical: dict[str, int] = {}
            span: dict[str, tuple[int, int] | None] = {}
            spans_by_slot = {a.slot: a for a in frame.spans}
            user_offsets = None

            for slot in schema.slots:
                aliases = state.slot_values.get(slot.name)
                prev_aliases = prev_values.get(slot.name)
                changed = aliases is not None and (
                    prev_aliases is None
                    or {normalize_value(a) for a in aliases}
                    != {normalize_value(a) for a in prev_aliases}
                )
                if not changed:
                    status[slot.name] = STATUS_NONE
                    continue
                if normalize_value(aliases[0]) == DONTCARE:
                    status[slot.name] = STATUS_DONTCARE
                    continue
                status[slot.name] = STATUS_VALUE
                if slot.is_categorical:
                    wanted = {normalize_value(a) for a in aliases}
                    match = next(
                        (i for i, v in enumerate(slot.possible_values)
                         if normalize_value(v) in wanted),
                        None,
                    )
                    if match is None:
                        raise DataError(
                            f"dialogue {dialogue.dialogue_id!r} turn {index}: categorical "
                            f"value {aliases[0]!r} not among possible values of {slot.name!r}"
                        )
                    categorical[slot.name] = match
                else:
                    annotation = spans_by_slot.get(slot.name)
                    if annotation is None:
                        span[slot.name] = None  # value not expressed in U; untrainable
                        continue
                    if user_offsets is None:
                        user_offsets = _user_token_offsets(
                            vocab, previous_system, turn.utterance, max_len
                        )
                    span[slot.name] = _covering_window(
                        user_offsets, annotation.start, annotation.exclusive_end
                    )

            intent_index = 0
            if state.active_intent != NONE_INTENT:
                names = [i.name for i in schema.intents]
                if state.active_intent not in names:
                    raise DataError(
                        f"dialogue {dialogue.dialogue_id!r}: unknown intent "
                        f"{state.active_intent!r}"
                    )
                intent_index = 1 + names.index(state.active_intent)

            examples.append(TurnExample(
                dialogue_id=dialogue.dialogue_id,
                turn_index=index,
                service=frame.service,
                system_text=previous_system,
                user_text=turn.utterance,
                targets=FrameTargets(
                    service=frame.service,
                    intent_index=intent_index,
                    requested=requested,
                    status=status,
                    categorical_value=categorical,
                    span=span,
                ),
            ))
            previous[frame.service] = dict(state.slot_values)
    return examples


def compute_loss(
    fwd: TurnForward,
    targets: FrameTargets,
    weights: LossWeights = LossWeights(),
) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of per-head losses; weight 0 skips a head entirely."""
    total = Tensor(0.0)
    breakdown: dict[str, float] = {}

    if weights.intent != 0.0:
        part = cross_entropy_with_logits(fwd.intent_logits, targets.intent_index)
        breakdown["intent"] = part.item()
        total = add(total, mul(part, weights.intent))

    if weights.requested != 0.0 and fwd.requested_logits:
        logits = concat([fwd.requested_logits[s] for s in fwd.slot_names], axis=0)
        bits = np.array([targets.requested[s] for s in fwd.slot_names], dtype=np.float64)
        part = tmean(binary_cross_entropy_with_logits(logits, bits))
        breakdown["requested"] = part.item()
        total = add(total, mul(part, weights.requested))

    if weights.status != 0.0 and fwd.status_logits:
        parts = [
            cross_entropy_with_logits(fwd.status_logits[s], targets.status[s])
            for s in fwd.slot_names
        ]
        part = mul(_sum_scalars(parts), 1.0 / len(parts))
        breakdown["status"] = part.item()
        total = add(total, mul(part, weights.status))

    if weights.categorical != 0.0 and targets.categorical_value:
        parts = []
        for slot, gold in targets.categorical_value.items():
            logits = fwd.categorical_logits[slot]
            onehot = np.zeros(logits.shape[0])
            onehot[gold] = 1.0
            parts.append(tmean(binary_cross_entropy_with_logits(logits, onehot)))
        part = mul(_sum_scalars(parts), 1.0 / len(parts))
        breakdown["categorical"] = part.item()
        total = add(total, mul(part, weights.categorical))

    trainable_spans = {s: t for s, t in targets.span.items() if t is not None}
    if weights.span != 0.0 and trainable_spans:
        parts = []
        for slot, (start, end) in trainable_spans.items():
            alpha, beta = fwd.span_bounds[slot]
            parts.append(add(
                cross_entropy_with_logits(alpha, start),
                cross_entropy_with_logits(beta, end),
            ))
        part = mul(_sum_scalars(parts), 1.0 / len(parts))
        breakdown["span"] = part.item()
        total = add(total, mul(part, weights.span))

    return total, breakdown


def _sum_scalars(parts: list[Tensor]) -> Tensor:
    total = parts[0]
    for p in parts[1:]:
        total = add(total, p)
    return total


class Adam:
    """First/second-moment adaptive steps over a ParameterStore."""

    def __init__(self, params: ParameterStore, lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, grads: Gradients) -> None:
        self.step_count += 1
        t = self.step_count
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        for name in self.params.trainable_names():
            tensor = self.params[name]
            g = grads.get_or_zeros(tensor)
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(tensor.data)
                self._v[name] = np.zeros_like(tensor.data)
            v = self._v[name]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self._m[name], self._v[name] = m, v
            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            self.params.set_data(name, tensor.data - self.lr * update)


def vocabulary_corpus(corpus: Corpus) -> Iterable[str]:
    """Utterances plus schema text, so schema tokens are first-class words."""
    for dialogue in corpus.dialogues:
        for turn in dialogue.turns:
            yield turn.utterance
    for schema in corpus.schemas.values():
        yield schema.service_name.replace("_", " ")
        yield schema.description
        for intent in schema.intents:
            yield intent.name.replace("_", " ")
            yield intent.description
        for slot in schema.slots:
            yield slot.name.replace("_", " ")
            yield slot.description
            for value in slot.possible_values:
                yield value


def build_model(vocab: Vocab, config: TrainConfig, schema_width: int | None = None) -> Model:
    params = ParameterStore()
    rng = np.random.default_rng(config.seed)
    encoder_cfg = EncoderConfig(
        vocab_size=len(vocab),
        hidden_dim=config.hidden_dim,
        n_layers=config.n_layers,
        n_heads=config.n_heads,
        max_len=config.max_len,
        gelu_approximate=config.gelu_approximate,
    )
    head_cfg = HeadConfig(
        hidden_dim=config.hidden_dim,
        attention_heads=config.n_heads,
        schema_width=schema_width,
        gelu_approximate=config.gelu_approximate,
    )
    init_encoder_params(params, rng, encoder_cfg)
    init_head_params(params, rng, head_cfg)
    return Model(
        vocab=vocab,
        params=params,
        encoder_cfg=encoder_cfg,
        head_cfg=head_cfg,
        mode=config.mode,
        thresholds=config.thresholds,
    )


def train(
    train_corpus: Corpus,
    dev_corpus: Corpus | None,
    config: TrainConfig,
    progress: bool = False,
) -> tuple[Model, list[dict]]:
    """Mini-batch Adam over shuffled turns; dev metrics once per epoch.

    Deterministic for a fixed seed: initialization, shuffling and every
    forward pass are driven by the same seeded generator, single-threaded.
    """
    from .evaluation import evaluate_tracker  # local import, avoids a cycle

    vocab = build_vocab(vocabulary_corpus(train_corpus), min_count=config.vocab_min_count)
    model = build_model(vocab, config)
    examples: list[TurnExample] = []
    for dialogue in train_corpus.dialogues:
        examples.extend(make_targets(dialogue, train_corpus.schemas, vocab, config.max_len))
    if not examples:
        raise DataError("training corpus has no user turns")

    from .tracker import Tracker

    tracker = Tracker(model)
    tracker.refresh_embeddings(train_corpus.schemas)
    frozen_fingerprints = {
        name: emb.fingerprint() for name, emb in tracker.embeddings.items()
    }

    optimizer = Adam(model.params, lr=config.learning_rate)
    shuffle_rng = np.random.default_rng(config.seed + 1)
    history: list[dict] = []

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(examples))
        epoch_loss = 0.0
        for batch_start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[batch_start : batch_start + config.batch_size]]
            with GradientTape() as tape:
                parts = []
                for example in batch:
                    encoded = encode_turn(
                        example.system_text, example.user_text, vocab,
                        model.params, model.encoder_cfg,
                    )
                    fwd = forward_turn(
                        encoded, tracker.embeddings[example.service],
                        model.params, model.head_cfg, mode=model.mode,
                    )
                    loss, _ = compute_loss(fwd, example.targets, config.loss_weights)
                    parts.append(loss)
                batch_loss = mul(_sum_scalars(parts), 1.0 / len(parts))
            value = batch_loss.item()
            if not np.isfinite(value):
                ids = sorted({(e.dialogue_id, e.turn_index) for e in batch})
                raise NumericError(f"non-finite loss in batch {ids}")
            grads = backward(batch_loss, tape)
            optimizer.step(grads)
            epoch_loss += value * len(batch)
        epoch_loss /= len(examples)

        for name, emb in tracker.embeddings.items():
            if emb.fingerprint() != frozen_fingerprints[name]:
                raise NumericError(
                    f"schema embeddings for {name!r} changed during the epoch"
                )

        entry: dict = {"epoch": epoch, "train_loss": epoch_loss}
        if dev_corpus is not None and dev_corpus.dialogues:
            eval_tracker = Tracker(model, embeddings=dict(tracker.embeddings))
            report = evaluate_tracker(eval_tracker, dev_corpus)
            entry["dev"] = {
                "intent_accuracy": report.overall.intent_accuracy,
                "requested_f1": report.overall.requested_f1,
                "average_goal_accuracy": report.overall.average_goal_accuracy,
                "joint_goal_accuracy": report.overall.joint_goal_accuracy,
            }
        history.append(entry)
        if progress:
            print(f"epoch {epoch}: loss {epoch_loss:.4f}"
                  + (f" dev joint GA {entry['dev']['joint_goal_accuracy']:.3f}"
                     if "dev" in entry else ""))
        if not config.strict_schema_freeze:
            tracker.refresh_embeddings(train_corpus.schemas)
            frozen_fingerprints = {
                name: emb.fingerprint() for name, emb in tracker.embeddings.items()
            }

    return model, history


# ---------------------------------------------------------------------------
# checkpoints: manifest JSON + little-endian float32 blob


CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_BLOB = "params.f32"
CHECKPOINT_VOCAB = "vocab.txt"


def save_checkpoint(directory: str | Path, model: Model, step: int = 0,
                    extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = model.params.names()
    manifest = {
        "version": 1,
        "step": step,
        "mode": model.mode,
        "thresholds": {
            "requested": model.thresholds.requested,
            "value": model.thresholds.value,
            "max_span_tokens": model.thresholds.max_span_tokens,
        },
        "encoder": {
            "vocab_size": model.encoder_cfg.vocab_size,
            "hidden_dim": model.encoder_cfg.hidden_dim,
            "n_layers": model.encoder_cfg.n_layers,
            "n_heads": model.encoder_cfg.n_heads,
            "ffn_dim": model.encoder_cfg.ffn_dim,
            "max_len": model.encoder_cfg.max_len,
            "gelu_approximate": model.encoder_cfg.gelu_approximate,
        },
        "heads": {
            "hidden_dim": model.head_cfg.hidden_dim,
            "attention_heads": model.head_cfg.attention_heads,
            "schema_width": model.head_cfg.schema_width,
            "gelu_approximate": model.head_cfg.gelu_approximate,
        },
        "parameters": [
            {
                "name": name,
                "shape": list(model.params[name].shape),
                "trainable": not model.params.is_frozen(name),
            }
            for name in names
        ],
    }
    if extra:
        manifest["extra"] = extra
    blob = bytearray()
    for name in names:
        blob += np.ascontiguousarray(model.params[name].data, dtype="<f4").tobytes()
    (directory / CHECKPOINT_BLOB).write_bytes(bytes(blob))
    (directory / CHECKPOINT_MANIFEST).write_text(
        json.dumps(manifest, indent=1) + "\n", encoding="utf-8"
    )
    model.vocab.save(directory / CHECKPOINT_VOCAB)


def load_checkpoint(directory: str | Path) -> tuple[Model, dict]:
    directory = Path(directory)
    manifest_path = directory / CHECKPOINT_MANIFEST
    if not manifest_path.exists():
        raise ConfigError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    vocab = Vocab.load(directory / CHECKPOINT_VOCAB)
    encoder_cfg = EncoderConfig(**manifest["encoder"])
    head_cfg = HeadConfig(**manifest["heads"])
    thresholds = Thresholds(**manifest["thresholds"])

    params = ParameterStore()
    raw = np.frombuffer((directory / CHECKPOINT_BLOB).read_bytes(), dtype="<f4")
    cursor = 0
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        chunk = raw[cursor : cursor + size].astype(np.float64).reshape(shape)
        cursor += size
        params.add(entry["name"], chunk, trainable=entry["trainable"])
    if cursor != raw.size:
        raise DataError(f"checkpoint blob has {raw.size - cursor} unexpected trailing floats")

    model = Model(
        vocab=vocab,
        params=params,
        encoder_cfg=encoder_cfg,
        head_cfg=head_cfg,
        mode=manifest["mode"],
        thresholds=thresholds,
    )
    return model, manifest
