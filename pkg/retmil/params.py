"""
Named parameter storage and the Adam optimizer.
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .errors import ConfigError, StateError
from .tensor import Tensor


def xavier_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)), requires_grad=True)


def zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(*shape):
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParamStore:

    """
    Parameters by dotted name, e.g. "local_msr.W_Q". Iteration is always
    in sorted name order, so anything that loops over parameters is
    independent of the order they were added in.

    Optimizer state lives here too, one AdamState per parameter.
    """

    def __init__(self, params: Dict[str, Tensor] = None):
        self._params = {}
        self._adam = {}
        for name, tensor in (params or {}).items():
            self.add(name, tensor)

    def add(self, name, tensor):
        assert name not in self._params, f"Duplicate parameter {name}"
        assert tensor.requires_grad, f"Parameter {name} must require gradients"
        self._params[name] = tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(sorted(self._params))

    def __len__(self):
        return len(self._params)

    def items(self):
        return [(name, self._params[name]) for name in self]

    def num_values(self):
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for tensor in self._params.values():
            tensor.grad = None

    def adam_state(self, name):
        tensor = self._params[name]
        if name not in self._adam:
            self._adam[name] = AdamState(np.zeros_like(tensor.data), np.zeros_like(tensor.data))
        return self._adam[name]

    def snapshot(self):
        "Copy of all parameter values."
        return {name: tensor.data.copy() for name, tensor in self.items()}

    def restore(self, snapshot):
        for name, tensor in self.items():
            value = snapshot[name]
            assert value.shape == tensor.shape, f"Shape mismatch when restoring {name}"
            tensor.data[...] = value


def adam_step(store, lr=1e-4, wd=0.0, betas=(0.9, 0.999), eps=1e-8):
    """
    One Adam update of every parameter in the store, with bias correction.
    Weight decay is classic L2: wd * theta is added to the gradient before
    the moments are updated (not the decoupled AdamW variant).
    """
    beta1, beta2 = betas
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1) or lr < 0 or wd < 0 or eps <= 0:
        raise ConfigError(f"Bad Adam settings: lr={lr}, wd={wd}, betas={betas}, eps={eps}")
    missing = [name for name, tensor in store.items() if tensor.grad is None]
    if missing:
        raise StateError(f"No gradient for parameter(s): {', '.join(missing)}")
    for name, tensor in store.items():
        state = store.adam_state(name)
        grad = tensor.grad + wd * tensor.data if wd else tensor.grad
        state.step += 1
        state.m = beta1 * state.m + (1 - beta1) * grad
        state.v = beta2 * state.v + (1 - beta2) * grad * grad
        m_hat = state.m / (1 - beta1 ** state.step)
        v_hat = state.v / (1 - beta2 ** state.step)
        tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(tensor.dtype)
    return store
