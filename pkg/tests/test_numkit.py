"""Numeric kernel checks against independent oracles.

matmul is compared to a triple-loop reference, softmax to an extended
precision (40 digit) mpmath evaluation, and the cross-entropy gradient
to central finite differences. None of the oracles share code with the
implementation.
"""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exitweave.errors import NumericError, ShapeError
from exitweave.numkit import (
    RngStream,
    as_matrix,
    cross_entropy,
    cross_entropy_batch,
    log_sum_exp,
    matmul,
    require_finite,
    sigmoid_stable,
    softmax_stable,
)


def matmul_oracle(a, b):
    n, k = a.shape
    k2, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def softmax_oracle(row):
    # mpf(float) is exact: binary64 values embed losslessly in mpmath.
    with mpmath.workdps(40):
        exps = [mpmath.exp(mpmath.mpf(float(v))) for v in row]
        total = mpmath.fsum(exps)
        return np.array([float(e / total) for e in exps])


class TestMatmul:
    def test_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            n, k, m = rng.integers(1, 7, 3)
            a = rng.standard_normal((n, k))
            b = rng.standard_normal((k, m))
            np.testing.assert_allclose(matmul(a, b), matmul_oracle(a, b), rtol=1e-13, atol=1e-13)

    def test_identity_and_zeros(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 4))
        np.testing.assert_array_equal(matmul(a, np.eye(4)), a)
        np.testing.assert_array_equal(matmul(a, np.zeros((4, 2))), np.zeros((4, 2)))

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError, match="inner dimensions"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_non_2d(self):
        with pytest.raises(ShapeError):
            as_matrix(np.ones(3))


class TestSoftmax:
    def test_matches_mpmath_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            row = rng.standard_normal(rng.integers(2, 9)) * rng.uniform(0.1, 20)
            np.testing.assert_allclose(softmax_stable(row), softmax_oracle(row), rtol=1e-13, atol=1e-15)

    def test_huge_logits_do_not_overflow(self):
        out = softmax_stable(np.array([1e4, 1e4 - 5.0]))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.sum(), 1.0, atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((5, 4))
        np.testing.assert_allclose(softmax_stable(x), softmax_stable(x + 123.456), atol=1e-12)

    def test_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(4)
        out = softmax_stable(rng.standard_normal((10, 6)) * 10)
        np.testing.assert_allclose(out.sum(axis=1), np.ones(10), atol=1e-12)
        assert np.all(out > 0)

    def test_rejects_3d_and_nonfinite(self):
        with pytest.raises(ShapeError):
            softmax_stable(np.zeros((2, 2, 2)))
        with pytest.raises(NumericError):
            softmax_stable(np.array([1.0, np.nan]))

    def test_log_sum_exp_matches_naive(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((6, 5))
        np.testing.assert_allclose(log_sum_exp(x), np.log(np.exp(x).sum(axis=1)), atol=1e-12)


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        for c in (2, 3, 7):
            loss, _ = cross_entropy(np.zeros(c), 0)
            np.testing.assert_allclose(loss, np.log(c), atol=1e-12)

    def test_confident_correct_is_near_zero(self):
        loss, _ = cross_entropy(np.array([10.0, -10.0]), 0)
        assert loss < 1e-8

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        step = 1e-6
        for _ in range(20):
            c = int(rng.integers(2, 8))
            # unit-scale logits keep the gradient well away from zero, so
            # FD roundoff noise stays far below the 1e-7 bar
            logits = rng.standard_normal(c)
            label = int(rng.integers(0, c))
            _, grad = cross_entropy(logits, label)
            fd = np.empty(c)
            for j in range(c):
                up, dn = logits.copy(), logits.copy()
                up[j] += step
                dn[j] -= step
                fd[j] = (cross_entropy(up, label)[0] - cross_entropy(dn, label)[0]) / (2 * step)
            err = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), np.linalg.norm(fd))
            assert err <= 1e-7

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(7)
        logits = rng.standard_normal((9, 5)) * 4
        labels = rng.integers(0, 5, 9)
        _, grads = cross_entropy_batch(logits, labels)
        np.testing.assert_allclose(grads.sum(axis=1), np.zeros(9), atol=1e-12)

    def test_batch_agrees_with_scalar(self):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((4, 3))
        labels = np.array([0, 2, 1, 1])
        losses, grads = cross_entropy_batch(logits, labels)
        for i in range(4):
            li, gi = cross_entropy(logits[i], int(labels[i]))
            np.testing.assert_allclose(losses[i], li, atol=1e-15)
            np.testing.assert_allclose(grads[i], gi, atol=1e-15)

    def test_losses_track_minus_log_prob(self):
        rng = np.random.default_rng(9)
        logits = rng.standard_normal((6, 4)) * 2
        labels = rng.integers(0, 4, 6)
        losses, _ = cross_entropy_batch(logits, labels)
        probs = softmax_stable(logits)
        np.testing.assert_allclose(losses, -np.log(probs[np.arange(6), labels]), atol=1e-12)

    def test_label_validation(self):
        with pytest.raises(ShapeError):
            cross_entropy_batch(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(ShapeError):
            cross_entropy_batch(np.zeros((2, 3)), np.array([0.5, 1.5]))
        with pytest.raises(ShapeError):
            cross_entropy_batch(np.zeros((2, 3)), np.array([0]))


class TestSigmoid:
    def test_extremes_and_symmetry(self):
        out = sigmoid_stable(np.array([-1e4, -30.0, 0.0, 30.0, 1e4]))
        assert np.all(np.isfinite(out))
        assert out[0] >= 0.0 and out[-1] <= 1.0
        np.testing.assert_allclose(out[2], 0.5, atol=1e-15)
        x = np.linspace(-20, 20, 41)
        np.testing.assert_allclose(sigmoid_stable(x) + sigmoid_stable(-x), np.ones_like(x), atol=1e-12)

    def test_matches_naive_in_safe_range(self):
        x = np.linspace(-25, 25, 101)
        np.testing.assert_allclose(sigmoid_stable(x), 1.0 / (1.0 + np.exp(-x)), rtol=1e-14)


class TestRequireFinite:
    def test_passes_through_and_raises(self):
        a = np.arange(3.0)
        assert require_finite(a) is a
        with pytest.raises(NumericError, match="bad"):
            require_finite(np.array([np.inf]), "bad")


class TestRngStream:
    def test_same_seed_replays(self):
        a = RngStream(42).standard_normal(16)
        b = RngStream(42).standard_normal(16)
        np.testing.assert_array_equal(a, b)

    def test_matches_pcg64_reference(self):
        ours = RngStream(123).standard_normal(8)
        ref = np.random.Generator(np.random.PCG64(123)).standard_normal(8)
        np.testing.assert_array_equal(ours, ref)

    def test_children_are_stable_and_distinct(self):
        root = RngStream(7)
        a1 = root.child("init").standard_normal(8)
        a2 = RngStream(7).child("init").standard_normal(8)
        b = RngStream(7).child("shuffle").standard_normal(8)
        np.testing.assert_array_equal(a1, a2)
        assert not np.array_equal(a1, b)

    def test_child_insensitive_to_sibling_draws(self):
        # adding a consumer must not shift an existing child's stream
        quiet = RngStream(7)
        noisy = RngStream(7)
        noisy.standard_normal(1000)
        noisy.child("other").standard_normal(3)
        np.testing.assert_array_equal(
            quiet.child("init").standard_normal(4), noisy.child("init").standard_normal(4)
        )

    def test_permutation_and_integers_domains(self):
        s = RngStream(0)
        perm = s.permutation(10)
        assert sorted(perm) == list(range(10))
        draws = s.integers(0, 5, 100)
        assert draws.min() >= 0 and draws.max() < 5

    def test_rejects_unknown_algorithm(self):
        with pytest.raises(NumericError):
            RngStream(0, algorithm="mt19937")

    @given(st.integers(min_value=0, max_value=2**31), st.text(min_size=0, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_child_seed_deterministic_property(self, seed, label):
        a = RngStream(seed).child(label)
        b = RngStream(seed).child(label)
        assert a.seed == b.seed
        np.testing.assert_array_equal(a.standard_normal(3), b.standard_normal(3))
