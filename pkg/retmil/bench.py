"""
Forward pass memory and throughput against bag length.

RetMIL (by default in streaming mode) is compared to a plain softmax self
attention layer of the same width, followed by the same gated pooling and
classifier. Memory is the peak of live tensor data as counted by an
AllocationMeter, not process RSS, so it is deterministic.
"""

from dataclasses import dataclass, asdict
import csv
import json
import logging
import math
import os
import platform
import time
from typing import List, Optional, Tuple

import numpy as np
from tabulate import tabulate

from .errors import ConfigError, FormatError
from .model import ModelConfig, RetMILModel
from .params import xavier_uniform, zeros
from .pooling import DEFAULT_POOL_DIM, GatedPoolParams, pool
from .sequencer import FeatureSequence
from .tensor import (PRECISIONS, AllocationMeter, Tensor, add, concat, matmul, no_grad,
                     precision, reshape, scale, softmax)
from .util import atomic_write


logger = logging.getLogger(__name__)

CSV_COLUMNS = ("method", "n_tokens", "latency_ms_median", "throughput_tokens_per_s", "peak_bytes")

RETMIL = "retmil"
SOFTMAX_ATTENTION = "softmax_attention"

FREQUENCY_CAVEAT = ("CPU frequency scaling and turbo were not controlled; "
                    "compare trends between methods rather than absolute numbers.")


@dataclass(frozen=True)
class BenchConfig:

    lengths: Tuple[int, ...] = (2048, 4096, 8192, 16384, 32768)
    repeats: int = 5
    warmup: int = 2
    d: int = 64
    heads: int = 4
    subseq_len: int = 512
    pool_dim: int = DEFAULT_POOL_DIM
    precision: str = "f32"
    streaming: bool = True
    seed: int = 0
    memory_limit: Optional[int] = 4 * 2**30

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(int(n) for n in self.lengths))
        if not self.lengths or min(self.lengths) < 1:
            raise ConfigError("Need at least one positive bag length")
        if any(a >= b for a, b in zip(self.lengths, self.lengths[1:])):
            raise ConfigError(f"Bag lengths must be strictly ascending, got {self.lengths}")
        if self.repeats < 3:
            raise ConfigError(f"Need at least 3 repeats per point, got {self.repeats}")
        if self.warmup < 0:
            raise ConfigError(f"warmup can't be negative, got {self.warmup}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"Unknown precision {self.precision!r}")
        if self.memory_limit is not None and self.memory_limit < 1:
            raise ConfigError(f"memory_limit must be positive, got {self.memory_limit}")

    def model_config(self):
        return ModelConfig(d=self.d, heads=self.heads, subseq_len=self.subseq_len,
                           pool_dim=self.pool_dim, num_classes=2)


@dataclass
class BenchRecord:

    "One measured point. The numbers are None if the point failed (out of memory)."

    method: str
    n_tokens: int
    latency_ms_median: Optional[float]
    throughput_tokens_per_s: Optional[float]
    peak_bytes: Optional[int]

    @property
    def failed(self):
        return self.latency_ms_median is None


class SoftmaxAttentionBaseline:

    """
    One multi-head softmax self attention layer over the whole bag, which
    materializes an N x N score matrix per head, then gated pooling and a
    linear classifier.
    """

    def __init__(self, d=64, heads=4, pool_dim=DEFAULT_POOL_DIM, num_classes=2, rng=None, seed=0):
        if heads < 1 or d % heads:
            raise ConfigError(f"Model dimension {d} is not divisible by {heads} heads")
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.d, self.heads, self.num_classes = d, heads, num_classes
        self.W_Q, self.W_K, self.W_V, self.W_O = (xavier_uniform(rng, d, d) for _ in range(4))
        self.pool = GatedPoolParams.init(d, pool_dim, rng)
        self.classifier_weight = xavier_uniform(rng, d, num_classes, shape=(num_classes, d))
        self.classifier_bias = zeros(num_classes)

    def attention(self, X):
        d_head = self.d // self.heads
        Q, K, V = matmul(X, self.W_Q), matmul(X, self.W_K), matmul(X, self.W_V)
        heads = []
        for h in range(self.heads):
            cols = (slice(None), slice(h * d_head, (h + 1) * d_head))
            k = scale(K[cols], 1.0 / math.sqrt(d_head))
            weights = softmax(matmul(Q[cols], k.T))
            heads.append(matmul(weights, V[cols]))
        return matmul(concat(heads, axis=1), self.W_O)

    def forward(self, seq):
        if not isinstance(seq, FeatureSequence):
            seq = FeatureSequence(seq)
        if seq.dim != self.d:
            raise ConfigError(f"Baseline expects {self.d} dimensional features, got {seq.dim}")
        feature, _ = pool(self.attention(Tensor(seq.features)), self.pool)
        return add(reshape(matmul(self.classifier_weight, reshape(feature, self.d, 1)),
                           self.num_classes),
                   self.classifier_bias)

    __call__ = forward


def _measure(method, forward, n_tokens, cfg):
    "Median latency and peak bytes of `forward` over the configured repeats."
    try:
        for _ in range(cfg.warmup):
            with no_grad(), AllocationMeter(cfg.memory_limit):
                forward()
        latencies, peaks = [], []
        for _ in range(cfg.repeats):
            with no_grad(), AllocationMeter(cfg.memory_limit) as meter:
                start = time.perf_counter()
                forward()
                latencies.append(time.perf_counter() - start)
            peaks.append(meter.peak_bytes)
    except MemoryError as e:
        logger.warning("%s at N=%d failed: %s", method, n_tokens, e)
        return BenchRecord(method, n_tokens, None, None, None)
    latency = float(np.median(latencies))
    record = BenchRecord(method, n_tokens, latency * 1000.0, n_tokens / latency, max(peaks))
    logger.info("%s N=%d: %.2f ms, %.0f tokens/s, peak %d bytes", method, n_tokens,
                record.latency_ms_median, record.throughput_tokens_per_s, record.peak_bytes)
    return record


def _random_sequence(rng, n_tokens, d):
    return FeatureSequence(rng.normal(size=(n_tokens, d)))


def bench_retmil(cfg: BenchConfig) -> List[BenchRecord]:
    "Timing doesn't depend on parameter values, so the model is left untrained."
    with precision(cfg.precision):
        model = RetMILModel(cfg.model_config(), seed=cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        records = []
        for n in cfg.lengths:
            seq = _random_sequence(rng, n, cfg.d)
            records.append(_measure(RETMIL, lambda: model.forward(seq, streaming=cfg.streaming),
                                    n, cfg))
    return records


def bench_softmax_attention_baseline(cfg: BenchConfig) -> List[BenchRecord]:
    with precision(cfg.precision):
        model = SoftmaxAttentionBaseline(cfg.d, cfg.heads, cfg.pool_dim, seed=cfg.seed)
        rng = np.random.default_rng(cfg.seed)
        records = []
        for n in cfg.lengths:
            seq = _random_sequence(rng, n, cfg.d)
            records.append(_measure(SOFTMAX_ATTENTION, lambda: model.forward(seq), n, cfg))
    return records


def run_bench(cfg: BenchConfig) -> List[BenchRecord]:
    return bench_retmil(cfg) + bench_softmax_attention_baseline(cfg)


# Output

def _field(value):
    return "" if value is None else repr(value)


def write_bench_csv(path, records):
    with atomic_write(path, "w") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([r.method, r.n_tokens, _field(r.latency_ms_median),
                             _field(r.throughput_tokens_per_s), _field(r.peak_bytes)])


def read_bench_csv(path) -> List[BenchRecord]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise FormatError(f"Unexpected bench CSV header {header}")
        records = []
        for row in reader:
            if len(row) != len(CSV_COLUMNS):
                raise FormatError(f"Bench CSV row has {len(row)} fields, expected {len(CSV_COLUMNS)}")
            method, n, latency, throughput, peak = row
            records.append(BenchRecord(method, int(n),
                                       float(latency) if latency else None,
                                       float(throughput) if throughput else None,
                                       int(peak) if peak else None))
    return records


def format_bench_table(records):
    rows = [(r.method, r.n_tokens,
             "failed" if r.failed else f"{r.latency_ms_median:.2f}",
             "" if r.failed else f"{r.throughput_tokens_per_s:.0f}",
             "" if r.failed else f"{r.peak_bytes / 2**20:.1f}")
            for r in records]
    return tabulate(rows, headers=["method", "N", "latency (ms)", "tokens/s", "peak (MiB)"],
                    tablefmt="github")


def scaling_ratios(records, method, small, large):
    "peak(large) / peak(small) and latency(large) / latency(small) for one method."
    points = {r.n_tokens: r for r in records if r.method == method and not r.failed}
    if small not in points or large not in points:
        return None
    return {
        "peak_ratio": points[large].peak_bytes / points[small].peak_bytes,
        "latency_ratio": points[large].latency_ms_median / points[small].latency_ms_median,
    }


def environment():
    return {
        "platform": platform.platform(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "caveat": FREQUENCY_CAVEAT,
    }


def write_bench_summary(path, records, cfg):
    "JSON with the environment, the configuration and per method scaling ratios."
    small, large = cfg.lengths[0], cfg.lengths[-1]
    summary = {
        "environment": environment(),
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(cfg).items()},
        "records": [asdict(r) for r in records],
        "scaling": {method: scaling_ratios(records, method, small, large)
                    for method in sorted({r.method for r in records})},
    }
    with atomic_write(path, "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")
