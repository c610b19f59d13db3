"""
Gated attention pooling.

Each row f of an n x d matrix F gets the score

    Gamma (tanh(W f) * sigmoid(U f))

and the softmax of the scores weighs the rows into one d vector. The same
parameter shapes are used for pooling tokens within a subsequence and for
pooling subsequences into the whole bag, as two independent instances.
"""

from dataclasses import dataclass

from .errors import ConfigError, InputError
from .params import xavier_uniform
from .tensor import Tensor, matmul, mul, reshape, sigmoid, softmax, tanh


DEFAULT_POOL_DIM = 128


@dataclass
class GatedPoolParams:

    Gamma: Tensor  # 1 x M
    W: Tensor      # M x d
    U: Tensor      # M x d

    def __post_init__(self):
        M, d = self.W.shape
        if self.U.shape != (M, d) or self.Gamma.shape != (1, M):
            raise ConfigError(f"Inconsistent pooling parameter shapes: Gamma {self.Gamma.shape}, "
                              f"W {self.W.shape}, U {self.U.shape}")

    @classmethod
    def init(cls, d, M, rng):
        return cls(Gamma=xavier_uniform(rng, M, 1, shape=(1, M)),
                   W=xavier_uniform(rng, d, M, shape=(M, d)),
                   U=xavier_uniform(rng, d, M, shape=(M, d)))

    @property
    def dim(self):
        return self.W.shape[1]

    def named_parameters(self, prefix):
        return {f"{prefix}.Gamma": self.Gamma, f"{prefix}.W": self.W, f"{prefix}.U": self.U}


def gated_attention_weights(F, params):
    "Softmax weights over the n rows of F."
    F = F if isinstance(F, Tensor) else Tensor(F)
    if F.ndim != 2 or F.shape[0] == 0:
        raise InputError(f"Need a non-empty n x d matrix to pool, got shape {F.shape}")
    if F.shape[1] != params.dim:
        raise ConfigError(f"Pooling expects dimension {params.dim}, got {F.shape[1]}")
    gated = mul(tanh(matmul(F, params.W.T)), sigmoid(matmul(F, params.U.T)))
    scores = matmul(gated, params.Gamma.T)
    return softmax(reshape(scores, F.shape[0]))


def pool(F, params):
    "The weighted sum of the rows of F, and the weights."
    F = F if isinstance(F, Tensor) else Tensor(F)
    weights = gated_attention_weights(F, params)
    feature = matmul(reshape(weights, 1, F.shape[0]), F)
    return reshape(feature, F.shape[1]), weights
