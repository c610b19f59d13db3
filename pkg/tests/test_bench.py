import json

import numpy as np
import pytest

from retmil.bench import (RETMIL, SOFTMAX_ATTENTION, BenchConfig, BenchRecord,
                          SoftmaxAttentionBaseline, bench_retmil, bench_softmax_attention_baseline,
                          format_bench_table, read_bench_csv, scaling_ratios, write_bench_csv,
                          write_bench_summary)
from retmil.errors import ConfigError, FormatError
from retmil.tensor import AllocationMeter, no_grad


SMALL = BenchConfig(lengths=(256, 512, 1024, 2048), repeats=3, warmup=0, d=16, heads=2,
                    subseq_len=64, pool_dim=16)


@pytest.fixture(scope="module")
def retmil_records():
    return bench_retmil(SMALL)


def by_length(records):
    return {r.n_tokens: r for r in records}


def test_config_validation():
    with pytest.raises(ConfigError):
        BenchConfig(lengths=(1024, 512))
    with pytest.raises(ConfigError):
        BenchConfig(lengths=(512, 512))
    with pytest.raises(ConfigError):
        BenchConfig(repeats=2)
    with pytest.raises(ConfigError):
        BenchConfig(precision="f16")
    with pytest.raises(ConfigError):
        BenchConfig(lengths=())
    assert BenchConfig().lengths == (2048, 4096, 8192, 16384, 32768)


def test_streaming_memory_is_flat(retmil_records):
    points = by_length(retmil_records)
    assert all(not r.failed for r in retmil_records)
    assert points[2048].peak_bytes / points[256].peak_bytes <= 2.0


def test_baseline_memory_is_quadratic():
    cfg = BenchConfig(lengths=(1024, 2048), repeats=3, warmup=0, d=16, heads=2, pool_dim=16)
    points = by_length(bench_softmax_attention_baseline(cfg))
    assert points[2048].peak_bytes / points[1024].peak_bytes >= 3.0


def test_throughput_is_tokens_over_latency(retmil_records):
    for r in retmil_records:
        assert r.method == RETMIL
        assert r.throughput_tokens_per_s == pytest.approx(r.n_tokens / (r.latency_ms_median / 1000.0))


def test_peaks_are_deterministic(retmil_records):
    again = bench_retmil(SMALL)
    assert [r.peak_bytes for r in again] == [r.peak_bytes for r in retmil_records]


def test_memory_limit_fails_the_point():
    cfg = BenchConfig(lengths=(64, 512), repeats=3, warmup=0, d=16, heads=2, pool_dim=16,
                      memory_limit=200_000)
    small, large = bench_softmax_attention_baseline(cfg)
    assert not small.failed
    assert large.failed
    assert large.peak_bytes is None and large.throughput_tokens_per_s is None


def test_single_token_bags():
    rng = np.random.default_rng(0)
    seq = rng.normal(size=(1, 16))
    baseline = SoftmaxAttentionBaseline(d=16, heads=2, pool_dim=16)
    with no_grad():
        logits = baseline(seq)
    assert logits.shape == (2,)
    assert np.all(np.isfinite(logits.data))
    records = bench_retmil(BenchConfig(lengths=(1,), repeats=3, warmup=0, d=16, heads=2, pool_dim=16))
    assert not records[0].failed


def test_baseline_attention_is_metered():
    baseline = SoftmaxAttentionBaseline(d=8, heads=2, pool_dim=4)
    with AllocationMeter() as meter:
        out = baseline.attention(np.random.default_rng(1).normal(size=(5, 8)))
    assert out.shape == (5, 8)
    assert meter.peak_bytes > 0


def test_baseline_dimension_mismatch():
    with pytest.raises(ConfigError):
        SoftmaxAttentionBaseline(d=10, heads=4)
    with pytest.raises(ConfigError):
        SoftmaxAttentionBaseline(d=8, heads=2)(np.ones((3, 6)))


def test_csv_round_trip(tmp_path, retmil_records):
    records = retmil_records + [BenchRecord(SOFTMAX_ATTENTION, 4096, None, None, None)]
    path = tmp_path / "bench.csv"
    write_bench_csv(path, records)
    assert read_bench_csv(path) == records
    assert path.read_text().splitlines()[0] == \
        "method,n_tokens,latency_ms_median,throughput_tokens_per_s,peak_bytes"


def test_csv_bad_header(tmp_path):
    path = tmp_path / "bench.csv"
    path.write_text("a,b,c\n")
    with pytest.raises(FormatError):
        read_bench_csv(path)


def test_table_shows_failures():
    table = format_bench_table([BenchRecord(RETMIL, 2048, 1.5, 1365333.3, 2**20),
                                BenchRecord(SOFTMAX_ATTENTION, 2048, None, None, None)])
    assert "failed" in table
    assert "1.50" in table


def test_scaling_ratios():
    records = [BenchRecord(RETMIL, 100, 1.0, 1e5, 1000),
               BenchRecord(RETMIL, 400, 4.0, 1e5, 1500),
               BenchRecord(SOFTMAX_ATTENTION, 100, 1.0, 1e5, 1000),
               BenchRecord(SOFTMAX_ATTENTION, 400, None, None, None)]
    assert scaling_ratios(records, RETMIL, 100, 400) == {"peak_ratio": 1.5, "latency_ratio": 4.0}
    assert scaling_ratios(records, SOFTMAX_ATTENTION, 100, 400) is None


def test_summary(tmp_path, retmil_records):
    path = tmp_path / "summary.json"
    write_bench_summary(path, retmil_records, SMALL)
    summary = json.loads(path.read_text())
    assert "frequency" in summary["environment"]["caveat"]
    assert summary["config"]["lengths"] == [256, 512, 1024, 2048]
    assert summary["scaling"][RETMIL]["peak_ratio"] <= 2.0
    assert len(summary["records"]) == 4


@pytest.mark.slow
def test_memory_trends_at_full_size():
    cfg = BenchConfig(lengths=(2048, 16384), repeats=3, warmup=1)
    retmil = by_length(bench_retmil(cfg))
    baseline = by_length(bench_softmax_attention_baseline(cfg))
    assert not any(r.failed for r in list(retmil.values()) + list(baseline.values()))
    assert retmil[16384].peak_bytes / retmil[2048].peak_bytes <= 2.0
    assert baseline[16384].peak_bytes / baseline[2048].peak_bytes >= 3.0
    assert retmil[16384].throughput_tokens_per_s >= baseline[16384].throughput_tokens_per_s
