import numpy as np
import pytest

from retmil.errors import DimensionError, InputError
from retmil.sequencer import (FeatureSequence, gather_row, provenance_scatter, split_and_pad,
                              split_indices)


def sequence(n, d=3, seed=0):
    return FeatureSequence(np.random.default_rng(seed).normal(size=(n, d)))


def test_exact_multiple():
    rows = split_indices(1024, 512)
    assert rows.shape == (2, 512)
    np.testing.assert_array_equal(rows[0], np.arange(512))
    np.testing.assert_array_equal(rows[1], np.arange(512, 1024))


def test_short_remainder_is_repeated():
    # r = 76 < 256, l - r = 436 = 5 * 76 + 56
    rows = split_indices(1100, 512)
    assert rows.shape == (3, 512)
    remainder = np.arange(1024, 1100)
    np.testing.assert_array_equal(rows[2], np.concatenate([remainder] * 6 + [remainder[:56]]))


def test_long_remainder_is_topped_up():
    # r = 288 >= 256
    rows = split_indices(800, 512)
    assert rows.shape == (2, 512)
    np.testing.assert_array_equal(rows[1], np.concatenate([np.arange(512, 800), np.arange(512, 736)]))


def test_sequence_shorter_than_subsequence():
    np.testing.assert_array_equal(split_indices(3, 8), [[0, 1, 2, 0, 1, 2, 0, 1]])
    np.testing.assert_array_equal(split_indices(1, 4), [[0, 0, 0, 0]])


def test_single_remainder_token():
    np.testing.assert_array_equal(split_indices(5, 4), [[0, 1, 2, 3], [4, 4, 4, 4]])


def test_half_remainder_uses_top_up():
    np.testing.assert_array_equal(split_indices(6, 4)[1], [4, 5, 4, 5])


def test_invalid_input():
    with pytest.raises(InputError):
        split_indices(10, 0)
    with pytest.raises(InputError):
        split_indices(0, 4)
    with pytest.raises(InputError):
        FeatureSequence(np.zeros((0, 3)))
    with pytest.raises(InputError):
        FeatureSequence(np.array([[1.0, np.nan]]))
    with pytest.raises(InputError):
        FeatureSequence(np.zeros(3))


@pytest.mark.parametrize("l", [2, 4, 8, 512])
def test_padding_sweep(l):
    for n in range(1, 2049):
        rows = split_indices(n, l)
        q, r = divmod(n, l)
        assert rows.shape == (q + (r > 0), l)
        np.testing.assert_array_equal(rows[:q].ravel(), np.arange(q * l))
        assert set(np.unique(rows)) == set(range(n))
        if r:
            assert rows[-1].min() >= q * l
            if 2 * r < l:
                a, b = divmod(l - r, r)
                assert r + a * r + b == l


def test_split_and_pad_gathers_features():
    seq = sequence(11)
    batch = split_and_pad(seq, 4)
    assert batch.stack.shape == (3, 4, 3)
    assert batch.n_rows == 3 and batch.length == 4 and batch.n_tokens == 11
    np.testing.assert_array_equal(batch.stack, seq.features[batch.provenance])

    lazy = split_and_pad(seq, 4, with_stack=False)
    assert lazy.stack is None
    for i in range(3):
        np.testing.assert_array_equal(gather_row(seq, lazy, i), batch.row(i))


def test_scatter_without_padding_is_a_reshape():
    batch = split_and_pad(sequence(8), 4, with_stack=False)
    scores = np.arange(8.0).reshape(2, 4)
    np.testing.assert_array_equal(provenance_scatter(batch, scores), np.arange(8.0))


def test_scatter_sums_duplicated_slots():
    batch = split_and_pad(sequence(3), 2, with_stack=False)
    np.testing.assert_array_equal(batch.provenance, [[0, 1], [2, 2]])
    scores = provenance_scatter(batch, [[0.1, 0.2], [0.3, 0.4]])
    np.testing.assert_allclose(scores, [0.1, 0.2, 0.7])


def test_scatter_conserves_total():
    batch = split_and_pad(sequence(37), 8, with_stack=False)
    scores = np.random.default_rng(1).uniform(size=batch.provenance.shape)
    assert provenance_scatter(batch, scores).sum() == pytest.approx(scores.sum(), rel=1e-12)


def test_scatter_shape_mismatch():
    batch = split_and_pad(sequence(5), 4, with_stack=False)
    with pytest.raises(DimensionError):
        provenance_scatter(batch, np.ones((1, 4)))
