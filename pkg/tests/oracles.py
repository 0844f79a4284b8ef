"""Independent straight-line reference implementations used as test oracles.

Everything here is deliberately written with plain Python floats, lists
and explicit loops: no numpy vectorization, no shared code with the
package beyond reading parameter values out of the store. The decoding
heads follow the model's defining equations step by step.
"""

from __future__ import annotations

import math

import numpy as np

from schemadst.nn import ParameterStore


def naive_matmul(a: list[list[float]], b: list[list[float]]) -> list[list[float]]:
    m, k, n = len(a), len(b), len(b[0])
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            total = 0.0
            for t in range(k):
                total += a[i][t] * b[t][j]
            out[i][j] = total
    return out


def scalar_softmax(xs: list[float]) -> list[float]:
    top = max(xs)
    exps = [math.exp(x - top) for x in xs]
    z = sum(exps)
    return [e / z for e in exps]


def scalar_sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def scalar_gelu(x: float) -> float:
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _rows(array: np.ndarray) -> list[list[float]]:
    return [[float(v) for v in row] for row in np.atleast_2d(array)]


def _vec(array: np.ndarray) -> list[float]:
    return [float(v) for v in np.asarray(array).reshape(-1)]


def _affine(x: list[float], weight: np.ndarray, bias: np.ndarray) -> list[float]:
    w = _rows(weight)
    b = _vec(bias)
    return [
        b[j] + sum(x[i] * w[i][j] for i in range(len(x)))
        for j in range(len(b))
    ]


def _gelu_vec(xs: list[float]) -> list[float]:
    return [scalar_gelu(x) for x in xs]


def scalar_mha(
    query: list[float],
    keys: list[list[float]],
    values: list[list[float]],
    heads: int,
    params: ParameterStore,
    prefix: str,
    key_mask: list[bool] | None = None,
) -> list[float]:
    """Single-query multi-head attention, evaluated one scalar at a time."""
    dim = len(query)
    head_dim = dim // heads
    q = _affine(query, params[f"{prefix}.query.weight"].data, params[f"{prefix}.query.bias"].data)
    k = [_affine(row, params[f"{prefix}.key.weight"].data, params[f"{prefix}.key.bias"].data)
         for row in keys]
    v = [_affine(row, params[f"{prefix}.value.weight"].data, params[f"{prefix}.value.bias"].data)
         for row in values]

    mixed: list[float] = []
    for h in range(heads):
        lo = h * head_dim
        scores = []
        for m, k_row in enumerate(k):
            if key_mask is not None and not key_mask[m]:
                continue
            scores.append(sum(q[lo + t] * k_row[lo + t] for t in range(head_dim))
                          / math.sqrt(head_dim))
        weights = scalar_softmax(scores)
        kept = [m for m in range(len(k)) if key_mask is None or key_mask[m]]
        for t in range(head_dim):
            mixed.append(sum(w * v[m][lo + t] for w, m in zip(weights, kept)))
    return _affine(mixed, params[f"{prefix}.output.weight"].data,
                   params[f"{prefix}.output.bias"].data)


# ---------------------------------------------------------------------------
# decoding heads, spelled out step by step


def oracle_intent_probs(u: list[float], intent_rows: list[list[float]],
                        params: ParameterStore) -> list[float]:
    h1 = _gelu_vec(_affine(u, params["intent.reduce.weight"].data,
                           params["intent.reduce.bias"].data))
    candidates = [_vec(params["intent.none_embedding"].data)] + intent_rows
    scores = []
    for candidate in candidates:
        joined = candidate + h1
        h2 = _gelu_vec(_affine(joined, params["intent.join.weight"].data,
                               params["intent.join.bias"].data))
        w3 = _vec(params["intent.score.weight"].data)
        b3 = float(params["intent.score.bias"].data[0])
        scores.append(b3 + sum(h2[i] * w3[i] for i in range(len(h2))))
    return scalar_softmax(scores)


def oracle_context(domain: list[float], slot: list[float], tokens: list[list[float]],
                   heads: int, params: ParameterStore, mode: str,
                   key_mask: list[bool] | None = None) -> list[float]:
    d_prime = scalar_mha(domain, tokens, tokens, heads, params, "context_attention", key_mask)
    if mode == "domain_only":
        s_prime = d_prime
    else:
        s_prime = scalar_mha(slot, tokens, tokens, heads, params, "context_attention", key_mask)
    return _affine(d_prime + s_prime, params["context.merge.weight"].data,
                   params["context.merge.bias"].data)


def oracle_requested_prob(ctx: list[float], slot: list[float],
                          params: ParameterStore) -> float:
    h3 = _gelu_vec(_affine(ctx, params["requested.reduce.weight"].data,
                           params["requested.reduce.bias"].data))
    h4 = _gelu_vec(_affine(slot + h3, params["requested.join.weight"].data,
                           params["requested.join.bias"].data))
    w7 = _vec(params["requested.score.weight"].data)
    b7 = float(params["requested.score.bias"].data[0])
    return scalar_sigmoid(b7 + sum(h4[i] * w7[i] for i in range(len(h4))))


def oracle_status_probs(ctx: list[float], slot: list[float],
                        params: ParameterStore) -> list[float]:
    h5 = _gelu_vec(_affine(ctx, params["status.reduce.weight"].data,
                           params["status.reduce.bias"].data))
    h6 = _gelu_vec(_affine(h5 + slot, params["status.join.weight"].data,
                           params["status.join.bias"].data))
    return scalar_softmax(_affine(h6, params["status.classify.weight"].data,
                                  params["status.classify.bias"].data))


def oracle_categorical_probs(ctx: list[float], value_rows: list[list[float]],
                             params: ParameterStore) -> list[float]:
    ctx2 = _gelu_vec(_affine(ctx, params["categorical.context_transform.weight"].data,
                             params["categorical.context_transform.bias"].data))
    probs = []
    for value in value_rows:
        h7 = _gelu_vec(_affine(value, params["categorical.value_transform.weight"].data,
                               params["categorical.value_transform.bias"].data))
        probs.append(scalar_sigmoid(sum(a * b for a, b in zip(ctx2, h7))))
    return probs


def oracle_span_distributions(tokens: list[list[float]], slot: list[float],
                              user_indices: list[int],
                              params: ParameterStore) -> tuple[list[float], list[float]]:
    alphas, betas = [], []
    for i in user_indices:
        joined = tokens[i] + slot
        h8 = _gelu_vec(_affine(joined, params["span.join.weight"].data,
                               params["span.join.bias"].data))
        bounds = _affine(h8, params["span.bounds.weight"].data,
                         params["span.bounds.bias"].data)
        alphas.append(bounds[0])
        betas.append(bounds[1])
    return scalar_softmax(alphas), scalar_softmax(betas)


def exhaustive_span_search(p_start: np.ndarray, p_end: np.ndarray,
                           allowed: np.ndarray, max_span: int) -> tuple[int, int]:
    """Try every legal (i, j) pair; first maximal pair wins ties."""
    best_score, best = -1.0, (-1, -1)
    positions = [int(i) for i in np.flatnonzero(np.asarray(allowed, dtype=bool))]
    for i in positions:
        for j in positions:
            if j < i or j - i > max_span:
                continue
            score = float(p_start[i]) * float(p_end[j])
            if score > best_score:
                best_score, best = score, (i, j)
    return best


# ---------------------------------------------------------------------------
# brute-force metrics


def _norm(s: str) -> str:
    return " ".join(s.lower().split())


def brute_force_metrics(pred_rows: list[dict], gold_rows: list[dict]) -> dict[str, float]:
    """All four metrics from first principles over aligned frame dicts.

    Each row: {key, intent, requested: set, values: {slot: [aliases]}}.
    """
    gold_by_key = {g["key"]: g for g in gold_rows}
    pred_by_key = {p["key"]: p for p in pred_rows}
    assert set(gold_by_key) == set(pred_by_key)

    intent_hits = 0
    f1_total = 0.0
    ga_total, ga_frames = 0.0, 0
    joint_hits = 0
    for key, gold in gold_by_key.items():
        pred = pred_by_key[key]
        if pred["intent"] == gold["intent"]:
            intent_hits += 1

        p_req, g_req = set(pred["requested"]), set(gold["requested"])
        if not p_req and not g_req:
            f1_total += 1.0
        elif p_req or g_req:
            tp = len(p_req & g_req)
            f1_total += 2.0 * tp / (len(p_req) + len(g_req))

        gold_values = {slot: {_norm(a) for a in aliases}
                       for slot, aliases in gold["values"].items()}
        pred_values = {slot: {_norm(a) for a in aliases}
                       for slot, aliases in pred["values"].items()}
        if gold_values:
            ga_frames += 1
            hit = sum(1 for slot, aliases in gold_values.items()
                      if slot in pred_values and pred_values[slot] & aliases)
            ga_total += hit / len(gold_values)

        joint = set(pred_values) == set(gold_values) and all(
            pred_values[slot] & aliases for slot, aliases in gold_values.items()
        )
        joint_hits += int(joint)

    n = len(gold_by_key)
    return {
        "intent_accuracy": intent_hits / n,
        "requested_f1": f1_total / n,
        "average_goal_accuracy": ga_total / ga_frames if ga_frames else 1.0,
        "joint_goal_accuracy": joint_hits / n,
    }
