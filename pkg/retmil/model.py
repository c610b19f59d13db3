"""
The hierarchical model.

    split -> local MSR over all subsequences -> local pooling per subsequence
          -> global MSR over the pooled subsequence features -> global pooling
          -> linear classifier

The local weights alpha (one row per subsequence) and global weights beta
are kept in the ForwardTrace, and alpha * beta scattered back onto the
tokens gives a score per instance that sums to one over the bag.
"""

from dataclasses import dataclass, asdict
import logging
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError
from .params import ParamStore, xavier_uniform, zeros
from .pooling import DEFAULT_POOL_DIM, GatedPoolParams, pool
from .retention import MSRLayer, RetentionConfig, msr_forward, msr_row, row_constants
from .sequencer import FeatureSequence, gather_row, provenance_scatter, split_and_pad
from .tensor import Tensor, add, cross_entropy_logits, matmul, no_grad, reshape, stack


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:

    d: int = 64
    heads: int = 4
    subseq_len: int = 64
    pool_dim: int = DEFAULT_POOL_DIM
    num_classes: int = 2
    gammas: Optional[Tuple[float, ...]] = None
    rope_base: float = 10000.0
    eps: float = 1e-5
    scale_keys: bool = True
    residual: bool = False

    def __post_init__(self):
        if self.subseq_len < 1:
            raise ConfigError(f"subseq_len must be at least 1, got {self.subseq_len}")
        if self.pool_dim < 1:
            raise ConfigError(f"pool_dim must be at least 1, got {self.pool_dim}")
        if self.num_classes < 2:
            raise ConfigError(f"Need at least 2 classes, got {self.num_classes}")
        if self.gammas is not None:
            object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        self.retention_config()

    @classmethod
    def slide_scale(cls, num_classes=2):
        "ViT-S sized embeddings and 512 token subsequences."
        return cls(d=384, subseq_len=512, num_classes=num_classes)

    def retention_config(self):
        return RetentionConfig(d=self.d, heads=self.heads, gammas=self.gammas,
                               rope_base=self.rope_base, eps=self.eps,
                               scale_keys=self.scale_keys, residual=self.residual)

    def to_dict(self):
        data = asdict(self)
        if data["gammas"] is not None:
            data["gammas"] = list(data["gammas"])
        return data


@dataclass
class ForwardTrace:

    logits: Tensor
    alpha: np.ndarray  # B x l local weights
    beta: np.ndarray   # B global weights
    batch: object      # the SubsequenceBatch, for its provenance

    @property
    def provenance(self):
        return self.batch.provenance


class RetMILModel:

    def __init__(self, config: ModelConfig, rng=None, seed=0):
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.config = config
        retention_config = config.retention_config()
        d, M, C = config.d, config.pool_dim, config.num_classes
        self.local_msr = MSRLayer.init(retention_config, rng)
        self.local_pool = GatedPoolParams.init(d, M, rng)
        self.global_msr = MSRLayer.init(retention_config, rng)
        self.global_pool = GatedPoolParams.init(d, M, rng)
        self.classifier_weight = xavier_uniform(rng, d, C, shape=(C, d))
        self.classifier_bias = zeros(C)
        self.store = ParamStore({
            **self.local_msr.named_parameters("local_msr"),
            **self.local_pool.named_parameters("local_pool"),
            **self.global_msr.named_parameters("global_msr"),
            **self.global_pool.named_parameters("global_pool"),
            "classifier.weight": self.classifier_weight,
            "classifier.bias": self.classifier_bias,
        })

    def _check(self, seq):
        if not isinstance(seq, FeatureSequence):
            seq = FeatureSequence(seq)
        if seq.dim != self.config.d:
            raise ConfigError(f"Model expects {self.config.d} dimensional features, got {seq.dim}")
        return seq

    def _local(self, seq, streaming, workers):
        "Pooled feature per subsequence, plus the local weights."
        if streaming:
            # One subsequence at a time; only the pooled vectors stay alive.
            batch = split_and_pad(seq, self.config.subseq_len, with_stack=False)
            constants = row_constants(self.local_msr.config, self.config.subseq_len)
            pooled, alphas = [], []
            for i in range(batch.n_rows):
                F_i = msr_row(self.local_msr, Tensor(gather_row(seq, batch, i)), constants)
                feature, weights = pool(F_i, self.local_pool)
                pooled.append(feature)
                alphas.append(weights.data)
            return batch, pooled, alphas

        batch = split_and_pad(seq, self.config.subseq_len)
        F = msr_forward(Tensor(batch.stack), self.local_msr, workers=workers)
        pooled, alphas = [], []
        for i in range(batch.n_rows):
            feature, weights = pool(F[i], self.local_pool)
            pooled.append(feature)
            alphas.append(weights.data)
        return batch, pooled, alphas

    def _forward(self, seq, streaming, workers):
        seq = self._check(seq)
        batch, pooled, alphas = self._local(seq, streaming, workers)
        G = msr_row(self.global_msr, stack(pooled))
        F_global, beta = pool(G, self.global_pool)
        logits = add(reshape(matmul(self.classifier_weight, reshape(F_global, self.config.d, 1)),
                             self.config.num_classes),
                     self.classifier_bias)
        return ForwardTrace(logits=logits, alpha=np.stack(alphas), beta=beta.data, batch=batch)

    def forward(self, seq, streaming=False, workers=None):
        """
        Run one bag through the model. In streaming mode no graph is kept
        and subsequences are processed one by one, which keeps memory
        independent of the bag length; the outputs are identical.
        """
        if streaming:
            with no_grad():
                return self._forward(seq, True, workers)
        return self._forward(seq, False, workers)

    __call__ = forward

    def loss(self, seq, label):
        trace = self.forward(seq)
        return cross_entropy_logits(trace.logits, label), trace


def attention_scores(trace):
    "alpha[i, k] * beta[i] per slot, summed onto the original tokens."
    return provenance_scatter(trace.batch, trace.alpha * trace.beta[:, np.newaxis])


def class_probabilities(logits):
    logits = np.asarray(logits, dtype=np.float64)
    e = np.exp(logits - logits.max())
    return e / e.sum()


def decide(logits):
    "Most probable class (lowest index on ties) and the class probabilities."
    probs = class_probabilities(logits)
    return int(np.argmax(np.asarray(logits))), probs


def predict(model, seq):
    with no_grad():
        trace = model.forward(seq)
    return decide(trace.logits.data)
