import pytest

from retmil import retention
from retmil.check import (CHECKS, FAULTS, check_batch_equivalence, check_causality,
                          check_conservation, check_decay_matrix, check_gradients, check_padding,
                          check_recurrent_equivalence_f32, check_recurrent_equivalence_f64,
                          format_check_table, run_checks)
from retmil.errors import ConfigError, NumericError


@pytest.mark.parametrize("func, kwargs", [
    (check_recurrent_equivalence_f64, {"cases": 20}),
    (check_recurrent_equivalence_f32, {"cases": 10}),
    (check_decay_matrix, {"max_n": 64}),
    (check_causality, {"cases": 10}),
    (check_padding, {"max_tokens": 100}),
    (check_gradients, {}),
    (check_conservation, {"bags": 10}),
    (check_batch_equivalence, {"bags": 3}),
])
def test_checks_pass(func, kwargs):
    passed, detail = func(**kwargs)
    assert passed, detail


def test_all_checks_are_registered():
    assert set(CHECKS) == {
        "recurrent equivalence (f64)", "recurrent equivalence (f32)", "decay matrix", "causality",
        "padding sweep", "gradient check", "probability conservation", "batch equivalence"}


def test_transposed_decay_breaks_causality():
    original = retention.decay_matrix
    results = run_checks(fault="transposed-decay", names=["causality", "decay matrix"])
    assert [r.name for r in results] == ["decay matrix", "causality"]
    assert not any(r.passed for r in results)
    assert "causality" in results[1].detail
    assert retention.decay_matrix is original


def test_checks_pass_without_fault():
    results = run_checks(names=["causality", "decay matrix"])
    assert all(r.passed for r in results)


def test_unknown_fault():
    with pytest.raises(ConfigError, match="transposed-decay"):
        run_checks(fault="flipped-signs")
    assert set(FAULTS) == {"transposed-decay"}


def test_errors_inside_a_check_are_failures(monkeypatch):
    def broken():
        raise NumericError("Loss is not finite")

    monkeypatch.setitem(CHECKS, "broken", broken)
    (result,) = run_checks(names=["broken"])
    assert not result.passed
    assert "NumericError" in result.detail


def test_table():
    table = format_check_table(run_checks(names=["decay matrix"]))
    assert "decay matrix" in table and "pass" in table
