"""Adam optimizer over :class:`~ufflow.params.ModelParams`."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

STATE_PREFIX = "adam."


@dataclass
class AdamState:
    step: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def to_records(self) -> "OrderedDict[str, np.ndarray]":
        records = OrderedDict()
        records[STATE_PREFIX + "step"] = np.array([self.step], dtype=np.float32)
        for name, arr in self.m.items():
            records[STATE_PREFIX + "m." + name] = arr
        for name, arr in self.v.items():
            records[STATE_PREFIX + "v." + name] = arr
        return records

    @classmethod
    def from_records(cls, records) -> "AdamState":
        state = cls()
        if STATE_PREFIX + "step" not in records:
            return state
        state.step = int(records[STATE_PREFIX + "step"][0])
        for key, arr in records.items():
            if key.startswith(STATE_PREFIX + "m."):
                state.m[key[len(STATE_PREFIX) + 2 :]] = arr.copy()
            elif key.startswith(STATE_PREFIX + "v."):
                state.v[key[len(STATE_PREFIX) + 2 :]] = arr.copy()
        return state


def adam_step(
    params,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Apply one Adam update in place to ``params`` and ``state``."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    names = list(params.tensors)
    missing = [n for n in names if n not in grads]
    if missing:
        raise KeyError(f"no gradient for parameter(s): {', '.join(missing[:5])}")
    extra = [n for n in grads if n not in params.tensors]
    if extra:
        raise KeyError(f"gradient for unknown parameter(s): {', '.join(extra[:5])}")

    state.step += 1
    t = state.step
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for name in names:
        var = params.tensors[name]
        g = np.asarray(grads[name], dtype=var.value.dtype)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(var.value)
            state.v[name] = np.zeros_like(var.value)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / corr1) / (np.sqrt(v / corr2) + eps)
        var.value -= (lr * update).astype(var.value.dtype)
    return state
