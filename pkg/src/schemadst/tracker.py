"""Turn-level prediction and cross-turn dialogue state accumulation.

predict_turn runs every head for one service over one encoded turn;
harden turns the probability bundle into discrete decisions; update_state
folds decisions into the running per-service state. The tracker never
holds service-specific parameters, so any schema - including one never
seen in training - goes through the identical path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .autograd import Tensor, row, sigmoid, softmax
from .data import DONTCARE, NONE_INTENT, SYSTEM, USER, Dialogue, Schema
from .encoder import EncodedTurn, EncoderConfig, encode_turn
from .errors import DataError, DecodeError, NumericError
from .heads import (
    DOMAIN_AND_SLOT,
    DOMAIN_ONLY,
    STATUS_DONTCARE,
    STATUS_NONE,
    STATUS_VALUE,
    HeadConfig,
    SpanScores,
    attend_tokens,
    categorical_logits,
    decode_span,
    intent_logits,
    merge_context,
    project_schema_vector,
    requested_logit,
    span_logits,
    status_logits,
)
from .nn import ParameterStore
from .schema_embed import SchemaEmbeddings, embed_schema
from .text import Vocab


@dataclass(frozen=True)
class Thresholds:
    requested: float = 0.5
    value: float = 0.5
    max_span_tokens: int = 10


@dataclass
class Model:
    """Everything needed to run the tracker: vocabulary, weights, configs."""

    vocab: Vocab
    params: ParameterStore
    encoder_cfg: EncoderConfig
    head_cfg: HeadConfig
    mode: str = DOMAIN_AND_SLOT
    thresholds: Thresholds = field(default_factory=Thresholds)


@dataclass
class TurnForward:
    """Logit tensors for one (turn, service); the training-side view."""

    service: str
    intent_logits: Tensor
    slot_names: tuple[str, ...]
    requested_logits: dict[str, Tensor]
    status_logits: dict[str, Tensor]
    categorical_logits: dict[str, Tensor]
    span_bounds: dict[str, tuple[Tensor, Tensor]]
    user_indices: np.ndarray


@dataclass
class TurnPrediction:
    """Probability view of one (turn, service), plus span decoding context."""

    service: str
    intent_names: tuple[str, ...]
    intent_dist: np.ndarray
    requested_probs: dict[str, float]
    status_dist: dict[str, np.ndarray]
    value_probs: dict[str, np.ndarray]
    value_names: dict[str, tuple[str, ...]]
    spans: dict[str, SpanScores]
    utterance: str
    token_offsets: tuple[tuple[int, int], ...]


@dataclass
class TurnDecision:
    """Hardened prediction: discrete intent, requests and slot actions."""

    service: str
    active_intent: str
    requested: tuple[str, ...]
    actions: dict[str, tuple[str, str | None]]  # slot -> ("keep"|"set", value)


@dataclass
class DialogueState:
    service: str
    active_intent: str = NONE_INTENT
    slot_values: dict[str, str] = field(default_factory=dict)
    requested_slots: tuple[str, ...] = ()


@dataclass
class TurnStateRecord:
    dialogue_id: str
    turn_index: int
    service: str
    state: DialogueState
    error: str | None = None


def forward_turn(
    encoded: EncodedTurn,
    emb: SchemaEmbeddings,
    params: ParameterStore,
    cfg: HeadConfig,
    mode: str = DOMAIN_AND_SLOT,
) -> TurnForward:
    """Run every head once; shapes follow the schema's cardinalities."""
    domain = project_schema_vector(params, cfg, emb.domain)
    intents = project_schema_vector(params, cfg, emb.intent_matrix)
    mask = encoded.attention_mask
    user_indices = np.flatnonzero(encoded.user_token_mask)

    requested: dict[str, Tensor] = {}
    status: dict[str, Tensor] = {}
    categorical: dict[str, Tensor] = {}
    spans: dict[str, tuple[Tensor, Tensor]] = {}

    # the domain-attended summary is slot-independent, so compute it once
    d_prime = attend_tokens(domain, encoded.tokens, params, cfg, key_mask=mask)
    for k, slot_name in enumerate(emb.slot_names):
        slot_vec = project_schema_vector(params, cfg, row(emb.slot_matrix, k))
        if mode == DOMAIN_ONLY:
            bundle = merge_context(d_prime, d_prime, params)
        else:
            s_prime = attend_tokens(slot_vec, encoded.tokens, params, cfg, key_mask=mask)
            bundle = merge_context(d_prime, s_prime, params)
        requested[slot_name] = requested_logit(bundle.ctx, slot_vec, params, cfg)
        status[slot_name] = status_logits(bundle.ctx, slot_vec, params, cfg)
        if slot_name in emb.value_matrices:
            values = project_schema_vector(params, cfg, emb.value_matrices[slot_name])
            categorical[slot_name] = categorical_logits(bundle.ctx, values, params, cfg)
        elif len(user_indices) > 0:
            spans[slot_name] = span_logits(encoded.tokens, slot_vec, user_indices, params, cfg)

    return TurnForward(
        service=emb.service,
        intent_logits=intent_logits(encoded.u, intents, params, cfg),
        slot_names=emb.slot_names,
        requested_logits=requested,
        status_logits=status,
        categorical_logits=categorical,
        span_bounds=spans,
        user_indices=user_indices,
    )


def predict_turn(
    encoded: EncodedTurn,
    emb: SchemaEmbeddings,
    params: ParameterStore,
    cfg: HeadConfig,
    mode: str = DOMAIN_AND_SLOT,
    thresholds: Thresholds = Thresholds(),
) -> TurnPrediction:
    fwd = forward_turn(encoded, emb, params, cfg, mode=mode)
    n_positions = encoded.length

    spans: dict[str, SpanScores] = {}
    for slot_name, (alpha, beta) in fwd.span_bounds.items():
        p_start = np.zeros(n_positions)
        p_end = np.zeros(n_positions)
        p_start[fwd.user_indices] = softmax(alpha).data
        p_end[fwd.user_indices] = softmax(beta).data
        start, end = decode_span(
            p_start, p_end, encoded.user_token_mask, thresholds.max_span_tokens
        )
        spans[slot_name] = SpanScores(p_start=p_start, p_end=p_end, start=start, end=end)

    return TurnPrediction(
        service=fwd.service,
        intent_names=emb.intent_names,
        intent_dist=softmax(fwd.intent_logits).data,
        requested_probs={
            s: float(sigmoid(t).data[0]) for s, t in fwd.requested_logits.items()
        },
        status_dist={s: softmax(t).data for s, t in fwd.status_logits.items()},
        value_probs={s: sigmoid(t).data for s, t in fwd.categorical_logits.items()},
        value_names=dict(emb.value_names),
        spans=spans,
        utterance=encoded.second_text or "",
        token_offsets=encoded.sequence.token_offsets,
    )


def harden(pred: TurnPrediction, thresholds: Thresholds = Thresholds()) -> TurnDecision:
    """Discrete decisions: argmax intent, thresholded requests, gated values."""
    candidates = (NONE_INTENT,) + pred.intent_names
    active_intent = candidates[int(np.argmax(pred.intent_dist))]
    requested = tuple(
        s for s, p in pred.requested_probs.items() if p > thresholds.requested
    )

    actions: dict[str, tuple[str, str | None]] = {}
    for slot, dist in pred.status_dist.items():
        gate = int(np.argmax(dist))
        if gate == STATUS_NONE:
            actions[slot] = ("keep", None)
        elif gate == STATUS_DONTCARE:
            actions[slot] = ("set", DONTCARE)
        elif slot in pred.value_probs:
            probs = pred.value_probs[slot]
            best = int(np.argmax(probs))
            if probs[best] > thresholds.value:
                actions[slot] = ("set", pred.value_names[slot][best])
            else:
                actions[slot] = ("keep", None)  # gate fired but no strong value evidence
        else:
            scores = pred.spans[slot]
            start_char = pred.token_offsets[scores.start][0]
            end_char = pred.token_offsets[scores.end][1]
            if not (0 <= start_char < end_char <= len(pred.utterance)):
                raise DecodeError(
                    f"decoded span ({scores.start}, {scores.end}) slices outside the utterance"
                )
            actions[slot] = ("set", pred.utterance[start_char:end_char])
    return TurnDecision(
        service=pred.service, active_intent=active_intent, requested=requested, actions=actions
    )


def update_state(prev: DialogueState, decision: TurnDecision) -> DialogueState:
    """Latest turn wins: sets overwrite, keeps carry over, requests replace."""
    if prev.service != decision.service:
        raise DataError(
            f"cannot update state of {prev.service!r} with a decision for {decision.service!r}"
        )
    values = dict(prev.slot_values)
    for slot, (action, value) in decision.actions.items():
        if action == "set":
            values[slot] = value if value is not None else ""
    return DialogueState(
        service=prev.service,
        active_intent=decision.active_intent,
        slot_values=values,
        requested_slots=decision.requested,
    )


def assert_schema_agnostic(params: ParameterStore, schemas: Mapping[str, Schema]) -> None:
    """No parameter may be tied to a service: names must not mention one."""
    lowered = [(name, name.lower()) for name in params.names()]
    for service in schemas:
        needle = service.lower()
        for original, low in lowered:
            if needle in low:
                raise DataError(
                    f"parameter {original!r} appears to be specific to service {service!r}"
                )


PredictFn = Callable[[EncodedTurn, SchemaEmbeddings], TurnPrediction]


class Tracker:
    """Folds per-turn predictions into per-service dialogue states."""

    def __init__(
        self,
        model: Model,
        embeddings: dict[str, SchemaEmbeddings] | None = None,
        cache_dir: str | None = None,
    ):
        self.model = model
        self.embeddings = dict(embeddings or {})
        self.cache_dir = cache_dir

    def embeddings_for(self, schema: Schema) -> SchemaEmbeddings:
        if schema.service_name not in self.embeddings:
            self.embeddings[schema.service_name] = embed_schema(
                schema,
                self.model.vocab,
                self.model.params,
                self.model.encoder_cfg,
                cache_dir=self.cache_dir,
            )
        return self.embeddings[schema.service_name]

    def refresh_embeddings(self, schemas: Mapping[str, Schema]) -> None:
        self.embeddings = {}
        for schema in schemas.values():
            self.embeddings_for(schema)

    def predict_turn(self, encoded: EncodedTurn, schema: Schema) -> TurnPrediction:
        m = self.model
        return predict_turn(
            encoded, self.embeddings_for(schema), m.params, m.head_cfg,
            mode=m.mode, thresholds=m.thresholds,
        )

    def track_dialogue(
        self,
        dialogue: Dialogue,
        schemas: Mapping[str, Schema],
        predict_fn: PredictFn | None = None,
    ) -> list[TurnStateRecord]:
        """One DialogueState per (USER turn, service); failures keep prior state."""
        for service in dialogue.services:
            if service not in schemas:
                raise DataError(
                    f"dialogue {dialogue.dialogue_id!r} references unknown service {service!r}"
                )
        assert_schema_agnostic(self.model.params, schemas)

        m = self.model
        states = {s: DialogueState(service=s) for s in dialogue.services}
        records: list[TurnStateRecord] = []
        previous_system = ""
        for index, turn in enumerate(dialogue.turns):
            if turn.speaker == SYSTEM:
                previous_system = turn.utterance
                continue
            try:
                encoded = encode_turn(
                    previous_system, turn.utterance, m.vocab, m.params, m.encoder_cfg
                )
                error = None
            except (DataError, NumericError) as exc:
                encoded, error = None, str(exc)
            for service in dialogue.services:
                schema = schemas[service]
                if encoded is None:
                    records.append(TurnStateRecord(
                        dialogue.dialogue_id, index, service,
                        replace(states[service]), error=error,
                    ))
                    continue
                try:
                    if predict_fn is not None:
                        pred = predict_fn(encoded, self.embeddings_for(schema))
                    else:
                        pred = self.predict_turn(encoded, schema)
                    decision = harden(pred, m.thresholds)
                    states[service] = update_state(states[service], decision)
                    turn_error = None
                except (DataError, DecodeError, NumericError) as exc:
                    turn_error = str(exc)
                records.append(TurnStateRecord(
                    dialogue.dialogue_id, index, service,
                    DialogueState(
                        service=service,
                        active_intent=states[service].active_intent,
                        slot_values=dict(states[service].slot_values),
                        requested_slots=states[service].requested_slots,
                    ),
                    error=turn_error,
                ))
        return records


# ---------------------------------------------------------------------------
# prediction dumps (JSON lines)


def record_to_json(record: TurnStateRecord) -> dict:
    return {
        "dialogue_id": record.dialogue_id,
        "turn_index": record.turn_index,
        "service": record.service,
        "active_intent": record.state.active_intent,
        "requested_slots": sorted(record.state.requested_slots),
        "slot_values": dict(sorted(record.state.slot_values.items())),
    }


def write_predictions(records: list[TurnStateRecord], path: str | Path) -> None:
    lines = [json.dumps(record_to_json(r), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_predictions(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"prediction dump not found: {path}")
    rows = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{i + 1}: invalid JSON line: {exc}") from exc
    return rows
