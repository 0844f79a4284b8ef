"""ParameterStore contracts and the multi-head attention primitive."""

from __future__ import annotations

import numpy as np
import pytest

from helpers import finite_difference_check
from oracles import scalar_mha

from schemadst.autograd import GradientTape, Tensor, backward, tsum
from schemadst.errors import ConfigError, DataError, ShapeError
from schemadst.nn import ParameterStore, add_attention_params, multi_head_attention


def _identity_attention(dim: int) -> ParameterStore:
    params = ParameterStore()
    add_attention_params(params, np.random.default_rng(0), "att", dim)
    for part in ("query", "key", "value", "output"):
        params[f"att.{part}.weight"].data = np.eye(dim)
        params[f"att.{part}.bias"].data = np.zeros(dim)
    return params


def test_store_rejects_duplicate_names():
    params = ParameterStore()
    params.add("w", np.zeros(2))
    with pytest.raises(ConfigError):
        params.add("w", np.zeros(2))


def test_store_frozen_entries_refuse_writes():
    params = ParameterStore()
    params.add("frozen", np.ones(3), trainable=False)
    assert params.is_frozen("frozen")
    assert "frozen" not in params.trainable_names()
    with pytest.raises(ConfigError):
        params.set_data("frozen", np.zeros(3))


def test_store_state_dict_round_trip():
    rng = np.random.default_rng(1)
    params = ParameterStore()
    params.add("a", rng.normal(size=(2, 3)))
    params.add("b", rng.normal(size=4), trainable=False)
    state = params.state_dict()
    params.set_data("a", np.zeros((2, 3)))
    params.load_state_dict(state)
    assert np.array_equal(params["a"].data, state["a"])


def test_uniform_attention_over_identical_keys():
    rng = np.random.default_rng(2)
    params = _identity_attention(4)
    keys = Tensor(np.tile(rng.normal(size=4), (5, 1)))
    values = Tensor(rng.normal(size=(5, 4)))
    query = Tensor(rng.normal(size=4))
    out = multi_head_attention(query, keys, values, 1, params, "att")
    assert np.abs(out.data - values.data.mean(axis=0)).max() < 1e-12


def test_attention_invariant_under_joint_row_permutation():
    rng = np.random.default_rng(3)
    params = ParameterStore()
    add_attention_params(params, rng, "att", 8)
    keys = rng.normal(size=(6, 8))
    values = rng.normal(size=(6, 8))
    query = Tensor(rng.normal(size=8))
    base = multi_head_attention(query, Tensor(keys), Tensor(values), 2, params, "att").data
    perm = rng.permutation(6)
    permuted = multi_head_attention(
        query, Tensor(keys[perm]), Tensor(values[perm]), 2, params, "att"
    ).data
    assert np.abs(base - permuted).max() < 1e-9


def test_attention_matches_scalar_oracle():
    rng = np.random.default_rng(4)
    params = ParameterStore()
    add_attention_params(params, rng, "att", 2)
    keys = rng.normal(size=(2, 2))
    values = rng.normal(size=(2, 2))
    query = rng.normal(size=2)
    got = multi_head_attention(Tensor(query), Tensor(keys), Tensor(values), 1, params, "att")
    expected = scalar_mha(query.tolist(), keys.tolist(), values.tolist(), 1, params, "att")
    assert np.abs(got.data - np.array(expected)).max() < 1e-12


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_attention_matches_scalar_oracle_multihead_masked(heads):
    rng = np.random.default_rng(40 + heads)
    params = ParameterStore()
    add_attention_params(params, rng, "att", 8)
    keys = rng.normal(size=(5, 8))
    values = rng.normal(size=(5, 8))
    query = rng.normal(size=8)
    mask = np.array([True, False, True, True, False])
    got = multi_head_attention(
        Tensor(query), Tensor(keys), Tensor(values), heads, params, "att", key_mask=mask
    )
    expected = scalar_mha(query.tolist(), keys.tolist(), values.tolist(), heads,
                          params, "att", key_mask=mask.tolist())
    assert np.abs(got.data - np.array(expected)).max() < 1e-10


def test_attention_rejects_empty_sequence():
    params = _identity_attention(4)
    with pytest.raises(DataError):
        multi_head_attention(
            Tensor(np.zeros(4)), Tensor(np.zeros((0, 4))), Tensor(np.zeros((0, 4))),
            1, params, "att",
        )


def test_attention_rejects_indivisible_heads():
    params = _identity_attention(4)
    with pytest.raises(ConfigError):
        multi_head_attention(
            Tensor(np.zeros(4)), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))),
            3, params, "att",
        )


def test_attention_matrix_query_shape():
    rng = np.random.default_rng(5)
    params = ParameterStore()
    add_attention_params(params, rng, "att", 4)
    queries = Tensor(rng.normal(size=(3, 4)))
    keys = Tensor(rng.normal(size=(5, 4)))
    out = multi_head_attention(queries, keys, keys, 2, params, "att")
    assert out.shape == (3, 4)


def test_attention_gradients_pass_finite_differences():
    rng = np.random.default_rng(6)
    params = ParameterStore()
    add_attention_params(params, rng, "att", 4)
    keys = Tensor(rng.normal(size=(3, 4)))
    query = Tensor(rng.normal(size=4))

    def build():
        return tsum(multi_head_attention(query, keys, keys, 2, params, "att"))

    finite_difference_check(build, params)


def test_frozen_parameter_untouched_by_training_step():
    from schemadst.training import Adam

    rng = np.random.default_rng(7)
    params = ParameterStore()
    w = params.add("w", rng.normal(size=(2, 2)))
    frozen = params.add("frozen", rng.normal(size=(2, 2)), trainable=False)
    frozen_before = frozen.data.copy()
    w_before = w.data.copy()
    with GradientTape() as tape:
        from schemadst.autograd import matmul

        loss = tsum(matmul(w, frozen))
    Adam(params, lr=0.1).step(backward(loss, tape))
    assert np.array_equal(frozen.data, frozen_before)
    assert not np.array_equal(params["w"].data, w_before)
