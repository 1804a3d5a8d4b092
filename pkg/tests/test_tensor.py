import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from panoscene.tensor import ShapeError, argmax_lastdim, as_tensor, softmax_lastdim, trilinear_sample, \
    trilinear_sample_many


def corner_sum(vol, p):
    """Independent 8-corner weighted sum for interior points."""
    base = np.floor(p).astype(int)
    f = p - base
    acc = np.zeros(vol.shape[-1])
    for cx, cy, cz in itertools.product((0, 1), repeat=3):
        w = (f[0] if cx else 1 - f[0]) * (f[1] if cy else 1 - f[1]) * (f[2] if cz else 1 - f[2])
        acc += w * vol[base[0] + cx, base[1] + cy, base[2] + cz]
    return acc


def test_sample_at_lattice_node_is_exact(rng):
    vol = rng.normal(size=(4, 5, 3, 2)).astype(np.float32)
    np.testing.assert_array_equal(trilinear_sample(vol, (2, 3, 1)), vol[2, 3, 1].astype(np.float64))


def test_sample_linear_blend():
    vol = np.array([0.0, 1.0]).reshape(2, 1, 1, 1)
    assert trilinear_sample(vol, (0.25, 0, 0))[0] == pytest.approx(0.25)


def test_sample_matches_corner_oracle(rng):
    vol = rng.normal(size=(3, 3, 3, 2))
    pts = rng.uniform(0, 2, (50, 3))
    got = trilinear_sample_many(vol, pts)
    for p, g in zip(pts, got):
        np.testing.assert_allclose(g, corner_sum(vol, p), atol=1e-6)


def test_sample_clamps_out_of_range(rng):
    vol = rng.normal(size=(3, 2, 2, 1))
    np.testing.assert_allclose(trilinear_sample(vol, (-5, 0, 0)), vol[0, 0, 0])
    np.testing.assert_allclose(trilinear_sample(vol, (9, 1, 7)), vol[2, 1, 1])


def test_sample_rejects_non_rank4():
    with pytest.raises(ShapeError):
        trilinear_sample(np.zeros((2, 2, 2)), (0, 0, 0))


@given(st.floats(0, 1), st.floats(0, 1))
def test_sample_is_linear_between_nodes(a, t):
    vol = np.zeros((2, 2, 2, 1))
    vol[1, :, :, 0] = 3.0
    vol[0, :, :, 0] = -1.0
    assert trilinear_sample(vol, (t, a, 1 - a))[0] == pytest.approx(-1.0 + 4.0 * t)


def test_softmax_examples():
    np.testing.assert_allclose(softmax_lastdim(np.zeros(3)), [1 / 3] * 3, atol=1e-12)
    np.testing.assert_allclose(softmax_lastdim(np.log([1.0, 2.0, 3.0])), [1 / 6, 2 / 6, 3 / 6], atol=1e-12)
    np.testing.assert_array_equal(softmax_lastdim(np.array([5.0])), [1.0])


def test_softmax_is_stable_for_large_logits():
    out = softmax_lastdim(np.array([1000.0, 1000.0]))
    np.testing.assert_allclose(out, [0.5, 0.5])


@settings(max_examples=60)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50)))
def test_softmax_rows_normalized(x):
    out = softmax_lastdim(x)
    assert np.all((out >= 0) & (out <= 1))
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-6)


def test_argmax_examples(rng):
    assert argmax_lastdim(np.array([0.1, 0.9, 0.3])) == 1
    assert argmax_lastdim(np.array([0.5, 0.5])) == 0
    m = rng.normal(size=(4, 5))
    expected = []
    for row in m:
        best = 0
        for j in range(1, len(row)):
            if row[j] > row[best]:
                best = j
        expected.append(best)
    np.testing.assert_array_equal(argmax_lastdim(m), expected)


@given(st.integers(2, 6), st.integers(0, 5), st.integers(0, 5))
def test_argmax_ties_take_lowest_index(n, i, j):
    i, j = i % n, j % n
    x = np.zeros(n)
    x[i] = x[j] = 1.0
    assert argmax_lastdim(x) == min(i, j)


def test_as_tensor_rejects_nonfinite_and_bad_shapes():
    with pytest.raises(ValueError):
        as_tensor([1.0, np.nan])
    with pytest.raises(ShapeError):
        as_tensor(np.zeros(6), shape=(4, 2))
    with pytest.raises(ShapeError):
        as_tensor(np.zeros((0, 3)))
    t = as_tensor(np.arange(6), shape=(2, 3))
    assert t.dtype == np.float32 and t.shape == (2, 3)
