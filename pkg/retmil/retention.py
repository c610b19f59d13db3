"""
Multi-head retention.

For head h, with rotary encoded queries and keys,

    Retention(h, X) = (Q_h K_h^T * D_h) V_h

where D_h is lower triangular with D[n, m] = gamma_h ** (n - m). Because D
is exactly that, the same output can be computed one token at a time with
a d_head x d_head state, S_t = gamma * S_{t-1} + k_t^T v_t, out_t = q_t S_t.
`retention_recurrent` does that and serves as the oracle for
`retention_parallel`.

A full layer concatenates the heads, normalizes with GroupNorm (one group
per head) and applies a swish gate and an output projection:

    out = (swish(X W_G) * GroupNorm(heads)) W_O
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, DimensionError
from .params import ones, xavier_uniform, zeros
from .tensor import Tensor, concat, group_norm, matmul, mul, rope, rotate_pairs, scale, stack, swish


def default_gammas(heads):
    "gamma_h = 1 - 2^(-5-h), longer memory for later heads."
    return tuple(1.0 - 2.0 ** (-5 - h) for h in range(heads))


@dataclass(frozen=True)
class RetentionConfig:

    d: int
    heads: int = 4
    gammas: Optional[Tuple[float, ...]] = None
    rope_base: float = 10000.0
    eps: float = 1e-5
    scale_keys: bool = True
    residual: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"Model dimension {self.d} is not divisible by {self.heads} heads")
        if self.d_head % 2:
            raise ConfigError(f"Rotary encoding needs an even head dimension, got {self.d_head}")
        if self.gammas is None:
            object.__setattr__(self, "gammas", default_gammas(self.heads))
        else:
            object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if len(self.gammas) != self.heads:
            raise ConfigError(f"Need one decay rate per head, got {len(self.gammas)} for {self.heads}")
        for gamma in self.gammas:
            _check_gamma(gamma)
        if not self.rope_base > 1:
            raise ConfigError(f"rope_base must be > 1, got {self.rope_base}")
        if not self.eps > 0:
            raise ConfigError(f"GroupNorm eps must be positive, got {self.eps}")

    @property
    def d_head(self):
        return self.d // self.heads


def _check_gamma(gamma):
    # gamma == 0 is allowed as the degenerate no-history case (D = I).
    if not 0 <= gamma < 1:
        raise ConfigError(f"Decay rate must be in [0, 1), got {gamma}")


def decay_matrix(gamma, n):
    "The n x n matrix with gamma^(i-j) on and below the diagonal, zeros above."
    _check_gamma(gamma)
    if n < 1:
        raise DimensionError(f"Decay matrix needs n >= 1, got {n}")
    i = np.arange(n)
    distance = i[:, np.newaxis] - i[np.newaxis, :]
    return np.where(distance >= 0, np.power(float(gamma), np.maximum(distance, 0)), 0.0)


def rope_angles(positions, d_head, base=10000.0, thetas=None):
    "Angle p * theta_j for every position p and pair j, theta_j = base^(-2j/d_head)."
    if d_head % 2:
        raise ConfigError(f"Rotary encoding needs an even head dimension, got {d_head}")
    if thetas is None:
        thetas = base ** (-2.0 * np.arange(d_head // 2) / d_head)
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.shape != (d_head // 2,):
        raise DimensionError(f"Need {d_head // 2} angles, got {thetas.shape}")
    return np.outer(np.asarray(positions, dtype=np.float64), thetas)


def rope_apply(x, positions, base=10000.0, thetas=None):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"rope_apply expects an n x d_head matrix, got {x.shape}")
    return rope(x, rope_angles(positions, x.shape[1], base, thetas))


class MSRLayer:

    "Parameters of one multi-head retention layer. No bias terms anywhere."

    MATRICES = ("W_Q", "W_K", "W_V", "W_G", "W_O")

    def __init__(self, config, params):
        self.config = config
        self.params = params
        d = config.d
        for name in self.MATRICES:
            if params[name].shape != (d, d):
                raise ConfigError(f"{name} should be {d} x {d}, got {params[name].shape}")
        for name in ("norm_gain", "norm_bias"):
            if params[name].shape != (d,):
                raise ConfigError(f"{name} should have shape ({d},), got {params[name].shape}")

    @classmethod
    def init(cls, config, rng):
        d = config.d
        params = {name: xavier_uniform(rng, d, d) for name in cls.MATRICES}
        params["norm_gain"] = ones(d)
        params["norm_bias"] = zeros(d)
        return cls(config, params)

    def __getattr__(self, name):
        try:
            return self.__dict__["params"][name]
        except KeyError:
            raise AttributeError(name)

    def named_parameters(self, prefix):
        return {f"{prefix}.{name}": tensor for name, tensor in self.params.items()}

    def head_slice(self, h):
        dh = self.config.d_head
        return slice(h * dh, (h + 1) * dh)


def _check_input(layer, X):
    if X.ndim != 2 or X.shape[1] != layer.config.d:
        raise ConfigError(f"Layer expects rows of dimension {layer.config.d}, got shape {X.shape}")
    if X.shape[0] < 1:
        raise DimensionError("Retention needs at least one token")


@dataclass(frozen=True)
class RowConstants:

    """
    What all rows of n tokens share: the rotary angles of every head side by
    side (n x d/2) and one decay matrix per head.
    """

    angles: np.ndarray
    decays: Tuple[Tensor, ...]

    @property
    def n(self):
        return self.angles.shape[0]


def row_constants(config, n, positions=None):
    if positions is None:
        positions = np.arange(n)
    angles = rope_angles(positions, config.d_head, config.rope_base)
    return RowConstants(angles=np.tile(angles, config.heads),
                        decays=tuple(Tensor(decay_matrix(gamma, n)) for gamma in config.gammas))


def _retain(q, k, v, decay):
    "(q k^T * D) v for one head, q and k already rotary encoded."
    return matmul(mul(matmul(q, k.T), decay), v)


def retention_parallel(layer, h, X, positions=None):
    "Parallel form of retention for head h, n x d_head."
    X = X if isinstance(X, Tensor) else Tensor(X)
    _check_input(layer, X)
    config = layer.config
    n = X.shape[0]
    cols = (slice(None), layer.head_slice(h))
    if positions is None:
        positions = np.arange(n)
    q = matmul(X, layer.W_Q[cols])
    k = matmul(X, layer.W_K[cols])
    v = matmul(X, layer.W_V[cols])
    if config.scale_keys:
        k = scale(k, 1.0 / math.sqrt(config.d_head))
    angles = rope_angles(positions, config.d_head, config.rope_base)
    return _retain(rope(q, angles), rope(k, angles), v,
                   Tensor(decay_matrix(config.gammas[h], n)))


def retention_recurrent(layer, h, X, positions=None):
    """
    Recurrent form of the same head, computed in numpy one token at a time.
    Returns an n x d_head array. Used as an oracle, so it doesn't share any
    code with the parallel form beyond the pair rotation.
    """
    X = np.asarray(X.data if isinstance(X, Tensor) else X)
    config = layer.config
    if X.ndim != 2 or X.shape[1] != config.d:
        raise ConfigError(f"Layer expects rows of dimension {config.d}, got shape {X.shape}")
    n = X.shape[0]
    cols = layer.head_slice(h)
    if positions is None:
        positions = np.arange(n)
    q = X @ layer.W_Q.data[:, cols]
    k = X @ layer.W_K.data[:, cols]
    v = X @ layer.W_V.data[:, cols]
    dh = q.shape[1]
    if config.scale_keys:
        k = k * (1.0 / math.sqrt(dh))
    angles = rope_angles(positions, dh, config.rope_base)
    cos, sin = np.cos(angles), np.sin(angles)
    q = rotate_pairs(q, cos, sin)
    k = rotate_pairs(k, cos, sin)

    gamma = config.gammas[h]
    state = np.zeros((dh, dh), dtype=X.dtype)
    out = np.empty((n, dh), dtype=X.dtype)
    for t in range(n):
        state = gamma * state + np.outer(k[t], v[t])
        out[t] = q[t] @ state
    return out


def msr_row(layer, X, constants=None):
    """
    One subsequence (n x d) through the full layer. `constants` from
    `row_constants` can be shared between calls on rows of the same length.
    """
    X = X if isinstance(X, Tensor) else Tensor(X)
    _check_input(layer, X)
    config = layer.config
    if constants is None:
        constants = row_constants(config, X.shape[0])
    elif constants.n != X.shape[0]:
        raise DimensionError(f"Row constants are for {constants.n} tokens, got {X.shape[0]}")
    # Rotating all heads at once equals rotating each head's columns.
    Q = rope(matmul(X, layer.W_Q), constants.angles)
    K = matmul(X, layer.W_K)
    if config.scale_keys:
        K = scale(K, 1.0 / math.sqrt(config.d_head))
    K = rope(K, constants.angles)
    V = matmul(X, layer.W_V)
    heads = []
    for h, decay in enumerate(constants.decays):
        cols = (slice(None), layer.head_slice(h))
        heads.append(_retain(Q[cols], K[cols], V[cols], decay))
    normed = group_norm(concat(heads, axis=1), config.heads, config.eps,
                        affine=(layer.norm_gain, layer.norm_bias))
    out = matmul(mul(swish(matmul(X, layer.W_G)), normed), layer.W_O)
    if config.residual:
        out = out + X
    return out


def msr_forward(batch, layer, workers=None):
    """
    Apply the layer to every row of a B x n x d batch. Rows are independent,
    and are computed by exactly the same code as single rows, so the result
    equals stacking `msr_row` calls bit for bit. With `workers` the rows are
    computed on a thread pool; results are still stacked in row order.
    """
    batch = batch if isinstance(batch, Tensor) else Tensor(batch)
    if batch.ndim != 3:
        raise DimensionError(f"msr_forward expects a B x n x d batch, got shape {batch.shape}")
    if batch.shape[2] != layer.config.d:
        raise ConfigError(f"Layer expects rows of dimension {layer.config.d}, got {batch.shape[2]}")
    rows = [batch[i] for i in range(batch.shape[0])]
    constants = row_constants(layer.config, batch.shape[1])
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outputs = list(executor.map(lambda row: msr_row(layer, row, constants), rows))
    else:
        outputs = [msr_row(layer, row, constants) for row in rows]
    return stack(outputs)
