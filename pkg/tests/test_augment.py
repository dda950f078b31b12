"""Mix-up and temporal rolling."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfcnn.augment import mixup, mixup_batch, roll_time, roll_time_batch

RNG = np.random.default_rng(2024)


class TestMixup:
    def test_lam_one_returns_first(self):
        a = (RNG.standard_normal((2, 3, 3)), np.array([1.0, 0.0]))
        b = (RNG.standard_normal((2, 3, 3)), np.array([0.0, 1.0]))
        mixed = mixup(a, b, lam=1.0)
        assert np.array_equal(mixed.x, a[0])
        assert np.array_equal(mixed.y, a[1])

    def test_midpoint(self):
        mixed = mixup(
            (np.array(2.0), np.array([1.0, 0.0])),
            (np.array(4.0), np.array([0.0, 1.0])),
            lam=0.5,
        )
        assert mixed.x == 3.0
        assert mixed.y.tolist() == [0.5, 0.5]

    def test_lambda_mean_is_half(self):
        rng = np.random.default_rng(0)
        lams = [
            mixup((np.zeros(1), np.array([1.0])), (np.ones(1), np.array([1.0])),
                  alpha=0.3, rng=rng).lam
            for _ in range(100_000)
        ]
        assert abs(np.mean(lams) - 0.5) < 0.01

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mixup((np.zeros(2), np.array([1.0])), (np.zeros(3), np.array([1.0])),
                  rng=np.random.default_rng(0))

    @given(st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=25, deadline=None)
    def test_simplex_preserved_and_symmetric(self, lam):
        ya = np.array([0.7, 0.2, 0.1])
        yb = np.array([0.0, 0.5, 0.5])
        xa, xb = np.array([1.0]), np.array([-2.0])
        m1 = mixup((xa, ya), (xb, yb), lam=lam)
        m2 = mixup((xb, yb), (xa, ya), lam=1.0 - lam)
        assert m1.y.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(m1.y >= 0)
        assert np.allclose(m1.x, m2.x) and np.allclose(m1.y, m2.y)

    def test_batch_mixup_soft_targets(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((8, 1, 2, 2))
        y = np.eye(4)[np.arange(8) % 4]
        xm, ym, lam = mixup_batch(x, y, alpha=0.3, rng=rng)
        assert xm.shape == x.shape
        assert np.allclose(ym.sum(axis=1), 1.0)
        # whenever lam is strictly inside (0, 1) and a pair mixes two
        # distinct labels, that target vector is no longer one-hot
        assert 0.0 < lam < 1.0
        mixed_rows = ym[(ym > 0).sum(axis=1) == 2]
        assert mixed_rows.size > 0
        assert np.all((mixed_rows[mixed_rows > 0] > 0.0)
                      & (mixed_rows[mixed_rows > 0] < 1.0))


class TestRollTime:
    def test_zero_and_full_shift_identity(self):
        x = RNG.standard_normal((2, 3, 5))
        assert np.array_equal(roll_time(x, 0), x)
        assert np.array_equal(roll_time(x, x.shape[-1]), x)

    def test_roll_then_inverse_roll(self):
        x = RNG.standard_normal((2, 4, 9))
        s = 4
        assert np.array_equal(roll_time(roll_time(x, s), x.shape[-1] - s), x)

    def test_per_frame_sums_are_cyclic_permutation(self):
        x = RNG.standard_normal((3, 8, 10))
        rolled = roll_time(x, 3)
        original = x.sum(axis=(0, 1))
        shifted = rolled.sum(axis=(0, 1))
        assert np.allclose(np.roll(original, 3), shifted)

    def test_multiset_of_values_preserved(self):
        x = RNG.standard_normal((2, 4, 7))
        rolled = roll_time(x, 5)
        assert np.array_equal(np.sort(x, axis=None), np.sort(rolled, axis=None))

    def test_random_shift_reproducible(self):
        x = RNG.standard_normal((4, 2, 6, 8))
        a = roll_time_batch(x, np.random.default_rng(3))
        b = roll_time_batch(x, np.random.default_rng(3))
        assert np.array_equal(a, b)
