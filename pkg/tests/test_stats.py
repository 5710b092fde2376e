"""Standardization, correlation matrices, and the row softmax."""
import numpy as np
import pytest
from conftest import op_gradcheck, rng_for

from trimix import oracle
from trimix.errors import ContractError, DegenerateFeatureError, DimensionError
from trimix.stats import cross_correlation, row_softmax, standardize
from trimix.tensor import Tensor


class TestStandardize:
    def test_two_point_column(self):
        out = standardize(Tensor([[1.0], [3.0]]), "batch")
        np.testing.assert_array_equal(out.data, [[-1.0], [1.0]])

    def test_idempotent(self):
        z = rng_for(0).normal(size=(16, 8))
        once = standardize(Tensor(z), "batch").data
        twice = standardize(Tensor(once), "batch").data
        assert np.abs(twice - once).max() < 1e-12

    def test_constant_column_is_hard_error(self):
        z = rng_for(1).normal(size=(6, 4))
        z[:, 2] = 3.14
        with pytest.raises(DegenerateFeatureError, match="feature 2"):
            standardize(Tensor(z), "batch")

    def test_constant_row_named_on_feature_axis(self):
        z = rng_for(2).normal(size=(4, 6))
        z[1, :] = -1.0
        with pytest.raises(DegenerateFeatureError, match="sample 1"):
            standardize(Tensor(z), "feature")

    def test_allow_degenerate_substitutes_unit_std(self):
        z = np.array([[1.0, 5.0], [1.0, 7.0]])
        out = standardize(Tensor(z), "batch", allow_degenerate=True).data
        np.testing.assert_array_equal(out[:, 0], [0.0, 0.0])
        np.testing.assert_array_equal(out[:, 1], [-1.0, 1.0])

    def test_short_axis_rejected(self):
        with pytest.raises(ContractError, match="at least 2"):
            standardize(Tensor(np.ones((1, 4))), "batch")

    def test_unknown_axis_rejected(self):
        with pytest.raises(ContractError):
            standardize(Tensor(np.ones((4, 4))), "rows")

    @pytest.mark.parametrize("axis", ["batch", "feature"])
    def test_moments_invariant(self, axis):
        ax = 0 if axis == "batch" else 1
        for case in range(60):
            z = rng_for(10, case).normal(size=(12, 7)) * 3.0 + 1.5
            out = standardize(Tensor(z), axis).data
            assert np.abs(out.mean(axis=ax)).max() < 1e-10
            assert np.abs(out.std(axis=ax) - 1.0).max() < 1e-10

    @pytest.mark.parametrize("axis", ["batch", "feature"])
    def test_gradient_check(self, axis):
        for case in range(50):
            rng = rng_for(11, case)
            z = rng.normal(size=(int(rng.integers(3, 9)), int(rng.integers(3, 9))))
            op_gradcheck(
                lambda ts: standardize(ts[0], axis).square().sum(),
                [z],
                seed_note=f"standardize/{axis} case {case}",
            )


class TestCrossCorrelation:
    def test_self_correlation_has_unit_diagonal(self):
        z = standardize(Tensor(rng_for(20).normal(size=(10, 6))), "batch")
        c = cross_correlation(z, z, "features")
        assert np.abs(np.diagonal(c.values.data) - 1.0).max() < 1e-12

    def test_orthogonal_columns_give_zero_off_diagonal(self):
        z = standardize(Tensor([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]]), "batch")
        c = cross_correlation(z, z, "features").values.data
        assert abs(c[0, 1]) < 1e-12 and abs(c[1, 0]) < 1e-12

    def test_matches_explicit_denominator_oracle(self):
        rng = rng_for(21)
        z = standardize(Tensor(rng.normal(size=(8, 16))), "batch").data
        z2 = standardize(Tensor(rng.normal(size=(8, 16))), "batch").data
        fast = cross_correlation(Tensor(z), Tensor(z2), "features").values.data
        slow = oracle.naive_correlation(z, z2, "features")
        assert np.abs(fast - slow).max() < 1e-10

    def test_samples_mode_matches_oracle_on_row_normalized_inputs(self):
        rng = rng_for(22)
        z = standardize(Tensor(rng.normal(size=(8, 16))), "feature").data
        z2 = standardize(Tensor(rng.normal(size=(8, 16))), "feature").data
        fast = cross_correlation(Tensor(z), Tensor(z2), "samples").values.data
        slow = oracle.naive_correlation(z, z2, "samples")
        assert np.abs(fast - slow).max() < 1e-10

    def test_entries_bounded_on_normalized_inputs(self):
        for case in range(40):
            rng = rng_for(23, case)
            b, d = int(rng.integers(3, 12)), int(rng.integers(3, 12))
            mode = "features" if case % 2 == 0 else "samples"
            axis = "batch" if mode == "features" else "feature"
            z = standardize(Tensor(rng.normal(size=(b, d))), axis)
            z2 = standardize(Tensor(rng.normal(size=(b, d))), axis)
            c = cross_correlation(z, z2, mode).values.data
            assert np.abs(c).max() <= 1.0 + 1e-9

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            cross_correlation(Tensor(np.ones((4, 3))), Tensor(np.ones((4, 5))), "features")

    def test_unknown_mode(self):
        with pytest.raises(ContractError):
            cross_correlation(Tensor(np.ones((4, 3))), Tensor(np.ones((4, 3))), "columns")

    @pytest.mark.parametrize("mode", ["features", "samples"])
    def test_gradient_check(self, mode):
        for case in range(50):
            rng = rng_for(24, case)
            b, d = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            arrays = [rng.normal(size=(b, d)), rng.normal(size=(b, d))]
            op_gradcheck(
                lambda ts: cross_correlation(ts[0], ts[1], mode).values.square().sum(),
                arrays,
                seed_note=f"cross_correlation/{mode} case {case}",
            )


class TestRowSoftmax:
    def test_constant_row_is_uniform(self):
        out = row_softmax(Tensor(np.full((3, 5), 2.7)), tau=1.3).data
        np.testing.assert_allclose(out, 1.0 / 5.0, atol=1e-12)

    def test_closed_form_two_entries(self):
        out = row_softmax(Tensor([[2.0, 0.0]]), tau=2.0).data
        e = np.e
        np.testing.assert_allclose(out, [[e / (e + 1.0), 1.0 / (e + 1.0)]], atol=1e-12)
        np.testing.assert_allclose(out, [[0.731059, 0.268941]], atol=1e-6)

    def test_small_temperature_sharpens(self):
        out = row_softmax(Tensor([[0.9, 0.1, 0.3]]), tau=0.01).data
        assert out[0, 0] > 0.999

    def test_non_positive_tau_rejected(self):
        for tau in (0.0, -1.0):
            with pytest.raises(ContractError, match="positive"):
                row_softmax(Tensor(np.ones((2, 2))), tau)

    def test_rows_are_distributions(self):
        for case in range(1000):
            rng = rng_for(25, case)
            b = int(rng.integers(2, 10))
            m = rng.normal(size=(b, b)) * 5.0
            out = row_softmax(Tensor(m), tau=float(rng.uniform(0.1, 4.0))).data
            assert (out >= 0).all()
            assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-9

    def test_gradient_check(self):
        for case in range(50):
            rng = rng_for(26, case)
            b = int(rng.integers(2, 9))
            op_gradcheck(
                lambda ts: row_softmax(ts[0], tau=2.0).square().sum(),
                [rng.normal(size=(b, b))],
                seed_note=f"row_softmax case {case}",
            )
