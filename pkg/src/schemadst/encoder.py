"""Compact trainable transformer encoder producing u and T.

A sequence of token+segment+position embeddings runs through a stack of
self-attention blocks (post-norm, GELU feed-forward). Position 0 ([CLS])
yields the sequence vector u; the full output matrix is the token
representation T. Padded positions still produce vectors but are excluded
from attention everywhere, so they cannot influence real positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, add, gelu, layer_norm, row, take_rows
from .errors import DataError
from .nn import ParameterStore, add_attention_params, add_linear, linear, multi_head_attention
from .text import SRC_SECOND, InputSequence, Vocab, build_sequence


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 128
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 0  # 0 means 4 * hidden_dim
    max_len: int = 128
    gelu_approximate: bool = False

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.hidden_dim


@dataclass(frozen=True)
class EncodedTurn:
    """Encoder output for one input sequence.

    u is the [CLS] vector, tokens the per-position matrix T. The masks and
    the sequence's token offsets let downstream heads restrict themselves
    to user-utterance tokens and map token spans back to characters.
    """

    u: Tensor
    tokens: Tensor
    sequence: InputSequence
    user_token_mask: np.ndarray
    attention_mask: np.ndarray
    first_text: str = ""
    second_text: str | None = None

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


def add_norm_params(params: ParameterStore, prefix: str, dim: int) -> None:
    params.add(f"{prefix}.scale", np.ones(dim))
    params.add(f"{prefix}.shift", np.zeros(dim))


def init_encoder_params(
    params: ParameterStore,
    rng: np.random.Generator,
    cfg: EncoderConfig,
    prefix: str = "encoder",
) -> None:
    h = cfg.hidden_dim
    params.add(f"{prefix}.token_embedding", rng.normal(0.0, 0.02, size=(cfg.vocab_size, h)))
    params.add(f"{prefix}.segment_embedding", rng.normal(0.0, 0.02, size=(2, h)))
    params.add(f"{prefix}.position_embedding", rng.normal(0.0, 0.02, size=(cfg.max_len, h)))
    add_norm_params(params, f"{prefix}.embed_norm", h)
    for i in range(cfg.n_layers):
        base = f"{prefix}.layer{i}"
        add_attention_params(params, rng, f"{base}.attention", h)
        add_norm_params(params, f"{base}.attention_norm", h)
        add_linear(params, rng, f"{base}.ffn.inner", h, cfg.ffn)
        add_linear(params, rng, f"{base}.ffn.outer", cfg.ffn, h)
        add_norm_params(params, f"{base}.ffn_norm", h)


def _norm(params: ParameterStore, prefix: str, x: Tensor) -> Tensor:
    return layer_norm(x, params[f"{prefix}.scale"], params[f"{prefix}.shift"])


def encode(
    seq: InputSequence,
    params: ParameterStore,
    cfg: EncoderConfig,
    prefix: str = "encoder",
    first_text: str = "",
    second_text: str | None = None,
) -> EncodedTurn:
    for pos, tok_id in enumerate(seq.token_ids):
        if not 0 <= tok_id < cfg.vocab_size:
            raise DataError(f"token id {tok_id} at position {pos} outside vocabulary")
    if len(seq) > cfg.max_len:
        raise DataError(f"sequence length {len(seq)} exceeds encoder max_len {cfg.max_len}")

    ids = np.asarray(seq.token_ids)
    x = add(
        add(
            take_rows(params[f"{prefix}.token_embedding"], ids),
            take_rows(params[f"{prefix}.segment_embedding"], np.asarray(seq.segment_ids)),
        ),
        take_rows(params[f"{prefix}.position_embedding"], np.asarray(seq.position_ids)),
    )
    x = _norm(params, f"{prefix}.embed_norm", x)

    mask = np.asarray(seq.attention_mask, dtype=bool)
    for i in range(cfg.n_layers):
        base = f"{prefix}.layer{i}"
        attended = multi_head_attention(
            x, x, x, cfg.n_heads, params, f"{base}.attention", key_mask=mask
        )
        x = _norm(params, f"{base}.attention_norm", add(x, attended))
        inner = gelu(linear(params, f"{base}.ffn.inner", x), approximate=cfg.gelu_approximate)
        x = _norm(params, f"{base}.ffn_norm", add(x, linear(params, f"{base}.ffn.outer", inner)))

    user_mask = np.asarray([s == SRC_SECOND for s in seq.sources], dtype=bool) & mask
    return EncodedTurn(
        u=row(x, 0),
        tokens=x,
        sequence=seq,
        user_token_mask=user_mask,
        attention_mask=mask,
        first_text=first_text,
        second_text=second_text,
    )


def encode_turn(
    system_response: str,
    user_utterance: str,
    vocab: Vocab,
    params: ParameterStore,
    cfg: EncoderConfig,
    prefix: str = "encoder",
) -> EncodedTurn:
    """Encode (previous system response, current user utterance) as a pair.

    An empty system response (the first turn) keeps the pair layout with an
    empty first sentence; the user utterance must be non-empty.
    """
    if not user_utterance.strip():
        raise DataError("user utterance is empty")
    seq = build_sequence(
        vocab, system_response, user_utterance, cfg.max_len, allow_empty_first=True
    )
    return encode(
        seq, params, cfg, prefix=prefix, first_text=system_response, second_text=user_utterance
    )
