"""Decoding heads: intent, context extraction, requested slots, slot status,
categorical value scoring and span boundaries.

Every head is a pure function of (inputs, parameters) returning logit
tensors; probability views and hard decisions live in the tracker. The
heads consume frozen schema embeddings and the turn encoding (u, T), so no
parameter is specific to any service.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import (
    Tensor,
    add,
    concat,
    gelu,
    matmul,
    reshape,
    slice_cols,
    softmax,
    take_rows,
    tile_rows,
)
from .errors import ConfigError, DataError, DecodeError
from .nn import ParameterStore, add_attention_params, add_linear, glorot, linear, multi_head_attention

DOMAIN_ONLY = "domain_only"
DOMAIN_AND_SLOT = "domain_and_slot"
MODES = (DOMAIN_ONLY, DOMAIN_AND_SLOT)

STATUS_NONE, STATUS_DONTCARE, STATUS_VALUE = 0, 1, 2

DEFAULT_MAX_SPAN_TOKENS = 10


@dataclass(frozen=True)
class HeadConfig:
    hidden_dim: int = 128
    attention_heads: int = 4
    schema_width: int | None = None  # set when external embeddings differ from hidden_dim
    gelu_approximate: bool = False


def init_head_params(params: ParameterStore, rng: np.random.Generator, cfg: HeadConfig) -> None:
    h = cfg.hidden_dim
    params.add("intent.none_embedding", rng.normal(0.0, 0.02, size=h))
    add_attention_params(params, rng, "context_attention", h)
    add_linear(params, rng, "intent.reduce", h, h)
    add_linear(params, rng, "intent.join", 2 * h, h)
    params.add("intent.score.weight", glorot(rng, h, 1).reshape(h))
    params.add("intent.score.bias", np.zeros(1))
    add_linear(params, rng, "context.merge", 2 * h, h)
    add_linear(params, rng, "requested.reduce", h, h)
    add_linear(params, rng, "requested.join", 2 * h, h)
    params.add("requested.score.weight", glorot(rng, h, 1).reshape(h))
    params.add("requested.score.bias", np.zeros(1))
    add_linear(params, rng, "status.reduce", h, h)
    add_linear(params, rng, "status.join", 2 * h, h)
    add_linear(params, rng, "status.classify", h, 3)
    add_linear(params, rng, "categorical.value_transform", h, h)
    add_linear(params, rng, "categorical.context_transform", h, h)
    add_linear(params, rng, "span.join", 2 * h, h)
    add_linear(params, rng, "span.bounds", h, 2)
    if cfg.schema_width is not None and cfg.schema_width != h:
        add_linear(params, rng, "schema_projection", cfg.schema_width, h)


def project_schema_vector(params: ParameterStore, cfg: HeadConfig, emb: Tensor) -> Tensor:
    """Map a schema embedding into the model width, if widths differ."""
    if cfg.schema_width is None or cfg.schema_width == cfg.hidden_dim:
        if emb.shape[-1] != cfg.hidden_dim:
            raise ConfigError(
                f"schema embedding width {emb.shape[-1]} does not match model width "
                f"{cfg.hidden_dim} and no projection is configured"
            )
        return emb
    return linear(params, "schema_projection", emb)


def _gelu(cfg: HeadConfig, t: Tensor) -> Tensor:
    return gelu(t, approximate=cfg.gelu_approximate)


def intent_logits(u: Tensor, intent_matrix: Tensor, params: ParameterStore,
                  cfg: HeadConfig) -> Tensor:
    """Per-candidate scores over [NONE] + the service's intents."""
    h = cfg.hidden_dim
    j = intent_matrix.shape[0]
    summary = _gelu(cfg, linear(params, "intent.reduce", u))
    none_row = reshape(params["intent.none_embedding"], (1, h))
    candidates = none_row if j == 0 else concat([none_row, intent_matrix], axis=0)
    joined = concat([candidates, tile_rows(summary, j + 1)], axis=1)
    hidden = _gelu(cfg, linear(params, "intent.join", joined))
    return add(matmul(hidden, params["intent.score.weight"]), params["intent.score.bias"])


def predict_intent(u: Tensor, intent_matrix: Tensor, params: ParameterStore,
                   cfg: HeadConfig) -> Tensor:
    return softmax(intent_logits(u, intent_matrix, params, cfg))


@dataclass(frozen=True)
class ContextBundle:
    """Domain- and slot-attended summaries plus their affine merge."""

    d_prime: Tensor
    s_prime: Tensor
    ctx: Tensor


def attend_tokens(
    query: Tensor,
    tokens: Tensor,
    params: ParameterStore,
    cfg: HeadConfig,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    return multi_head_attention(
        query, tokens, tokens, cfg.attention_heads, params, "context_attention",
        key_mask=key_mask,
    )


def merge_context(d_prime: Tensor, s_prime: Tensor, params: ParameterStore) -> ContextBundle:
    ctx = linear(params, "context.merge", concat([d_prime, s_prime], axis=0))
    return ContextBundle(d_prime=d_prime, s_prime=s_prime, ctx=ctx)


def extract_context(
    domain_emb: Tensor,
    slot_emb: Tensor,
    tokens: Tensor,
    params: ParameterStore,
    cfg: HeadConfig,
    mode: str = DOMAIN_AND_SLOT,
    key_mask: np.ndarray | None = None,
) -> ContextBundle:
    """Attend the domain (and, unless ablated, the slot) over the tokens.

    In domain_only mode the slot-attended summary is replaced by the
    domain-attended one, keeping all downstream shapes identical.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown context mode {mode!r}; expected one of {MODES}")
    d_prime = attend_tokens(domain_emb, tokens, params, cfg, key_mask=key_mask)
    if mode == DOMAIN_ONLY:
        s_prime = d_prime
    else:
        s_prime = attend_tokens(slot_emb, tokens, params, cfg, key_mask=key_mask)
    return merge_context(d_prime, s_prime, params)


def requested_logit(ctx: Tensor, slot_emb: Tensor, params: ParameterStore,
                    cfg: HeadConfig) -> Tensor:
    """Scalar request score for one (context, slot) pair."""
    reduced = _gelu(cfg, linear(params, "requested.reduce", ctx))
    joined = concat([slot_emb, reduced], axis=0)
    hidden = _gelu(cfg, linear(params, "requested.join", joined))
    return add(matmul(hidden, params["requested.score.weight"]),
               params["requested.score.bias"])


def status_logits(ctx: Tensor, slot_emb: Tensor, params: ParameterStore,
                  cfg: HeadConfig) -> Tensor:
    """Three-way gate logits: [none, dontcare, value]."""
    reduced = _gelu(cfg, linear(params, "status.reduce", ctx))
    joined = concat([reduced, slot_emb], axis=0)
    hidden = _gelu(cfg, linear(params, "status.join", joined))
    return linear(params, "status.classify", hidden)


def categorical_logits(ctx: Tensor, value_matrix: Tensor, params: ParameterStore,
                       cfg: HeadConfig) -> Tensor:
    """Independent per-value scores: transformed context dotted with each value."""
    values = _gelu(cfg, linear(params, "categorical.value_transform", value_matrix))
    context = _gelu(cfg, linear(params, "categorical.context_transform", ctx))
    return matmul(values, context)


def span_logits(
    tokens: Tensor,
    slot_emb: Tensor,
    user_indices: np.ndarray,
    params: ParameterStore,
    cfg: HeadConfig,
) -> tuple[Tensor, Tensor]:
    """Start/end boundary logits over the user-utterance token positions."""
    if len(user_indices) == 0:
        raise DataError("span head needs at least one user-utterance token")
    m = len(user_indices)
    user_tokens = take_rows(tokens, user_indices)
    joined = concat([user_tokens, tile_rows(slot_emb, m)], axis=1)
    hidden = _gelu(cfg, linear(params, "span.join", joined))
    bounds = add(matmul(hidden, params["span.bounds.weight"]), params["span.bounds.bias"])
    alpha = reshape(slice_cols(bounds, 0, 1), (m,))
    beta = reshape(slice_cols(bounds, 1, 2), (m,))
    return alpha, beta


@dataclass(frozen=True)
class SpanScores:
    """Boundary distributions over the full sequence plus the decoded span.

    Masked (non-user) positions carry exactly zero probability; start/end
    are sequence positions of user-utterance tokens with end >= start.
    """

    p_start: np.ndarray
    p_end: np.ndarray
    start: int
    end: int


def decode_span(
    p_start: np.ndarray,
    p_end: np.ndarray,
    allowed: np.ndarray,
    max_span_tokens: int = DEFAULT_MAX_SPAN_TOKENS,
) -> tuple[int, int]:
    """Constrained argmax over (i, j): i <= j, j - i <= max_span_tokens.

    Maximizes p_start[i] * p_end[j] over allowed positions; ties resolve to
    the smaller i, then the smaller j.
    """
    allowed = np.asarray(allowed, dtype=bool)
    positions = np.flatnonzero(allowed)
    if positions.size == 0:
        raise DecodeError("cannot decode a span: all positions are masked")
    best = (-1.0, -1, -1)
    for i in positions:
        if p_start[i] * p_end[i:].max(initial=0.0) <= best[0]:
            continue  # no j from i can beat the running best
        for j in positions[positions >= i]:
            if j - i > max_span_tokens:
                break
            score = p_start[i] * p_end[j]
            if score > best[0]:
                best = (score, int(i), int(j))
    return best[1], best[2]
