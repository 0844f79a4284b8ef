"""Shared test utilities: finite-difference gradient checking and fixtures."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from schemadst.autograd import GradientTape, Tensor, backward
from schemadst.nn import ParameterStore


def finite_difference_check(
    build_loss: Callable[[], Tensor],
    params: ParameterStore,
    names: Sequence[str] | None = None,
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
) -> int:
    """Compare reverse-mode gradients against central differences.

    build_loss must recompute the full forward pass from the current
    parameter values on every call. Every entry of every named parameter
    is perturbed; returns the number of entries checked.
    """
    with GradientTape() as tape:
        loss = build_loss()
    grads = backward(loss, tape)

    checked = 0
    for name in names if names is not None else params.trainable_names():
        tensor = params[name]
        grad = grads.get_or_zeros(tensor).reshape(-1)
        flat = tensor.data.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            plus = build_loss().item()
            flat[idx] = original - h
            minus = build_loss().item()
            flat[idx] = original
            fd = (plus - minus) / (2.0 * h)
            ad = grad[idx]
            err = abs(ad - fd)
            scale = max(abs(ad), abs(fd))
            assert err <= atol or err / scale <= rtol, (
                f"{name}[{idx}]: autodiff {ad:.10g} vs finite difference {fd:.10g} "
                f"(abs err {err:.3g}, rel {err / max(scale, 1e-300):.3g})"
            )
            checked += 1
    return checked


def random_tensor(rng: np.random.Generator, *shape: int, scale: float = 1.0,
                  requires_grad: bool = False) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=requires_grad)
