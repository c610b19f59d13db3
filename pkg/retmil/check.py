"""
Oracle checks that can be run against an installed build (`retmil check`).

Each check compares the implementation against an independent oracle or a
property that must hold exactly, and reports pass/fail with a short detail.
Faults can be injected to make sure the checks actually catch mistakes.
"""

from contextlib import ExitStack
from dataclasses import dataclass
import logging
import time
from unittest import mock

import numpy as np
from tabulate import tabulate

from . import retention
from .errors import ConfigError, RetmilError
from .gradcheck import finite_diff_check
from .model import ModelConfig, RetMILModel, attention_scores
from .retention import MSRLayer, RetentionConfig, msr_forward, msr_row
from .sequencer import FeatureSequence, split_indices
from .tensor import Tensor, precision


logger = logging.getLogger(__name__)

CHECKS = {}


def check(name):
    def register(f):
        CHECKS[name] = f
        return f
    return register


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _random_layer(rng, heads, d_head, random_gammas=False):
    gammas = tuple(rng.uniform(0.0, 1.0, size=heads)) if random_gammas else None
    return MSRLayer.init(RetentionConfig(d=heads * d_head, heads=heads, gammas=gammas), rng)


def _equivalence_error(rng, cases, max_n=256, max_d_head=32):
    worst = 0.0
    for case in range(cases):
        heads = int(rng.choice([1, 2, 4]))
        d_head = 2 * int(rng.integers(1, max_d_head // 2 + 1))
        n = int(rng.integers(1, max_n + 1))
        layer = _random_layer(rng, heads, d_head, random_gammas=bool(case % 2))
        X = Tensor(rng.normal(size=(n, heads * d_head)))
        for h in range(heads):
            parallel = retention.retention_parallel(layer, h, X).data
            recurrent = retention.retention_recurrent(layer, h, X)
            worst = max(worst, float(np.max(np.abs(parallel - recurrent))))
    return worst


@check("recurrent equivalence (f64)")
def check_recurrent_equivalence_f64(cases=1000, seed=0):
    with precision("f64"):
        worst = _equivalence_error(np.random.default_rng(seed), cases)
    return worst <= 1e-10, f"max |parallel - recurrent| = {worst:.3g} over {cases} cases"


@check("recurrent equivalence (f32)")
def check_recurrent_equivalence_f32(cases=100, seed=1):
    with precision("f32"):
        worst = _equivalence_error(np.random.default_rng(seed), cases)
    return worst <= 1e-3, f"max |parallel - recurrent| = {worst:.3g} over {cases} cases"


@check("decay matrix")
def check_decay_matrix(max_n=512):
    expected = np.array([[1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.25, 0.5, 1.0]])
    if not np.array_equal(retention.decay_matrix(0.5, 3), expected):
        return False, "decay_matrix(0.5, 3) is wrong"
    for gamma in retention.default_gammas(4) + (0.0, 0.5):
        D = retention.decay_matrix(gamma, max_n)
        if np.any(np.triu(D, 1) != 0):
            return False, f"nonzero entries above the diagonal for gamma={gamma}"
        if np.any(np.diag(D) != 1):
            return False, f"diagonal is not 1 for gamma={gamma}"
        for n in range(1, max_n + 1, 37):
            if not np.array_equal(retention.decay_matrix(gamma, n), D[:n, :n]):
                return False, f"n={n} is not a leading block of n={max_n} for gamma={gamma}"
    return True, f"exact and lower triangular up to n={max_n}"


@check("causality")
def check_causality(cases=50, seed=2):
    "Changing token m of a subsequence must leave the outputs before m bit-identical."
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        layer = _random_layer(rng, heads=2, d_head=4)
        n = int(rng.integers(2, 65))
        X = rng.normal(size=(n, 8))
        m = int(rng.integers(1, n))
        perturbed = X.copy()
        perturbed[m] += rng.normal(size=8)
        before = msr_row(layer, X).data
        after = msr_row(layer, perturbed).data
        if not np.array_equal(before[:m], after[:m]):
            return False, f"causality violated: outputs before token {m} of {n} changed"
    return True, f"{cases} perturbations"


@check("padding sweep")
def check_padding(max_tokens=2048, lengths=(2, 4, 8, 512)):
    for l in lengths:
        for n in range(1, max_tokens + 1):
            rows = split_indices(n, l)
            q, r = divmod(n, l)
            if rows.shape[1] != l or rows.shape[0] != q + (r > 0):
                return False, f"N={n}, l={l}: shape {rows.shape}"
            full = rows[:q].ravel()
            if not np.array_equal(full, np.arange(q * l)):
                return False, f"N={n}, l={l}: full blocks don't hold each token once"
            if r:
                last = rows[-1]
                if last.min() < q * l or not np.array_equal(np.unique(last), np.arange(q * l, n)):
                    return False, f"N={n}, l={l}: last row isn't made of exactly the remainder"
                if 2 * r < l:
                    a, b = divmod(l - r, r)
                    if r + a * r + b != l:
                        return False, f"N={n}, l={l}: r + a*r + b != l"
    return True, f"N in 1..{max_tokens}, l in {list(lengths)}"


def tiny_model(seed=0):
    return RetMILModel(ModelConfig(d=8, heads=2, subseq_len=4, pool_dim=4, num_classes=2), seed=seed)


@check("gradient check")
def check_gradients(n_tokens=10, seed=3, tolerance=1e-4):
    with precision("f64"):
        rng = np.random.default_rng(seed)
        model = tiny_model(seed)
        seq = FeatureSequence(rng.normal(size=(n_tokens, 8)))
        error = finite_diff_check(lambda store: model.loss(seq, 1)[0], model.store)
    return error < tolerance, f"max relative error {error:.3g} over {model.store.num_values()} values"


@check("probability conservation")
def check_conservation(bags=100, seed=4, tolerance=1e-6):
    rng = np.random.default_rng(seed)
    model = tiny_model(seed)
    worst = 0.0
    for _ in range(bags):
        seq = FeatureSequence(rng.normal(size=(int(rng.integers(1, 41)), 8)))
        trace = model.forward(seq, streaming=True)
        sums = list(trace.alpha.sum(axis=1)) + [trace.beta.sum(), attention_scores(trace).sum()]
        worst = max(worst, float(np.max(np.abs(np.array(sums) - 1.0))))
    return worst <= tolerance, f"max |sum - 1| = {worst:.3g} over {bags} bags"


@check("batch equivalence")
def check_batch_equivalence(bags=10, seed=5):
    rng = np.random.default_rng(seed)
    model = tiny_model(seed)
    for _ in range(bags):
        seq = FeatureSequence(rng.normal(size=(int(rng.integers(1, 41)), 8)))
        batched = model.forward(seq)
        streamed = model.forward(seq, streaming=True)
        if not (np.array_equal(batched.logits.data, streamed.logits.data)
                and np.array_equal(batched.alpha, streamed.alpha)
                and np.array_equal(batched.beta, streamed.beta)):
            return False, "streaming and batched forward differ"
        stack = Tensor(rng.normal(size=(3, 4, 8)))
        rows = np.stack([msr_row(model.local_msr, stack[i]).data for i in range(3)])
        if not np.array_equal(msr_forward(stack, model.local_msr).data, rows):
            return False, "msr_forward differs from row by row computation"
    return True, f"{bags} bags bit-identical"


def _transposed_decay(gamma, n, _original=retention.decay_matrix):
    return _original(gamma, n).T


FAULTS = {
    "transposed-decay": lambda: mock.patch.object(retention, "decay_matrix", _transposed_decay),
}


def run_checks(fault=None, names=None):
    "Run the registered checks (or those in `names`), optionally with a fault injected."
    if fault is not None and fault not in FAULTS:
        raise ConfigError(f"Unknown fault {fault!r}, expected one of {sorted(FAULTS)}")
    results = []
    with ExitStack() as stack:
        if fault is not None:
            logger.warning("Injecting fault %r", fault)
            stack.enter_context(FAULTS[fault]())
        for name, func in CHECKS.items():
            if names is not None and name not in names:
                continue
            start = time.perf_counter()
            try:
                passed, detail = func()
            except RetmilError as e:
                passed, detail = False, f"{type(e).__name__}: {e}"
            seconds = time.perf_counter() - start
            logger.debug("%s: %s (%.1f s)", name, "pass" if passed else "FAIL", seconds)
            results.append(CheckResult(name, bool(passed), detail, seconds))
    return results


def format_check_table(results):
    rows = [(r.name, "pass" if r.passed else "FAIL", r.detail, f"{r.seconds:.1f}") for r in results]
    return tabulate(rows, headers=["check", "result", "detail", "seconds"])
