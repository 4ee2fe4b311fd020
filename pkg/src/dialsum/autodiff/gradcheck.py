from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParameterStore
from .tensor import ContractError, Tensor, no_grad


class NondeterministicLossError(RuntimeError):
    pass


def _value(loss) -> float:
    return float(loss.data) if isinstance(loss, Tensor) else float(loss)


def grad_check(loss_fn: Callable[[ParameterStore], Tensor], params: ParameterStore,
               eps: float = 1e-6, names: list[str] | None = None) -> float:
    """Max relative error between backprop and central differences.

    The error per entry is ``|a - n| / max(|a|, |n|, 1e-8)``; the maximum
    over every entry of every checked parameter is returned. ``loss_fn``
    must be deterministic (dropout off); two evaluations that differ raise
    :class:`NondeterministicLossError`.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ContractError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    names = names if names is not None else [k for k, _ in params.trainable_items()]

    params.zero_grad()
    loss = loss_fn(params)
    again = _value(loss_fn(params))
    if _value(loss) != again:
        raise NondeterministicLossError(f"loss_fn is not deterministic: {_value(loss)} vs {again}")
    if loss.data.size != 1:
        raise ContractError("grad_check needs a scalar loss")
    loss.backward()
    analytic = {k: (params[k].grad.copy() if params[k].grad is not None
                    else np.zeros_like(params[k].data)) for k in names}

    worst = 0.0
    with no_grad():
        for k in names:
            data = params[k].data
            flat = data.reshape(-1)
            ana = analytic[k].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = _value(loss_fn(params))
                flat[i] = orig - eps
                down = _value(loss_fn(params))
                flat[i] = orig
                num = (up - down) / (2.0 * eps)
                err = abs(ana[i] - num) / max(abs(ana[i]), abs(num), 1e-8)
                worst = max(worst, err)
    params.zero_grad()
    return worst
