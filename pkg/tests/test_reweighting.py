import numpy as np
import pytest

from randistill import analytic, nn, reweighting
from randistill.families import sample_binary_gaussian
from randistill.reweighting import (
    ReweightingError,
    WeightEstimate,
    crossfit_weights,
    fold_assignment,
    label_shift_adjust,
    renormalize_marginal,
    weighted_correlation,
)

WEIGHT_SPEC = nn.MlpSpec((1, 16, 1))


def weight_opt(seed, epochs=100):
    return nn.OptConfig(learning_rate=1e-2, epochs=epochs, batch_size=1000, seed=seed)


@pytest.fixture(scope="module")
def est_a0():
    data = sample_binary_gaussian(0.0, 10000, seed=41)
    return data, crossfit_weights(data, 5, WEIGHT_SPEC, weight_opt(41))


@pytest.fixture(scope="module")
def est_a05():
    data = sample_binary_gaussian(0.5, 10000, seed=42)
    return data, crossfit_weights(data, 5, WEIGHT_SPEC, weight_opt(42))


class TestFoldAssignment:
    def test_equal_fold_sizes(self):
        fold_of = fold_assignment(10000, 5, seed=1)
        assert np.bincount(fold_of).tolist() == [2000] * 5

    def test_remainder_goes_to_last_fold(self):
        fold_of = fold_assignment(103, 5, seed=1)
        assert np.bincount(fold_of).tolist() == [20, 20, 20, 20, 23]

    def test_partition_covers_everything(self):
        fold_of = fold_assignment(100, 3, seed=2)
        assert fold_of.shape == (100,)
        assert set(np.unique(fold_of)) == {0, 1, 2}


class TestCrossfitWeights:
    def test_uncoupled_weights_near_one(self, est_a0):
        _, est = est_a0
        assert est.weights.min() >= 0.8
        assert est.weights.max() <= 1.25

    def test_weights_match_oracle(self, est_a05):
        data, est = est_a05
        p1 = analytic.binary_posterior(0.5, data.z[:, 0])
        oracle = np.where(data.y == 1.0, data.y.mean() / p1, (1 - data.y.mean()) / (1 - p1))
        assert np.abs(est.weights - oracle).mean() < 0.1

    def test_fold_sizes_and_models(self, est_a05):
        _, est = est_a05
        assert np.bincount(est.fold_of).tolist() == [2000] * 5
        assert len(est.fold_models) == 5

    def test_reweighted_data_breaks_coupling(self, est_a05):
        data, est = est_a05
        raw = weighted_correlation(data.y, data.z[:, 0], np.ones(len(data)))
        fixed = weighted_correlation(data.y, data.z[:, 0], est.weights)
        assert abs(raw) > 0.3
        assert abs(fixed) < 0.05

    def test_cross_fitted_weights_do_not_collapse(self):
        # strong coupling, over-wide model: cross-fitting must still keep
        # the weights spread out rather than collapsed to the marginal
        data = sample_binary_gaussian(0.9, 2000, seed=43)
        est = crossfit_weights(data, 4, nn.MlpSpec((1, 64, 1)), weight_opt(43, epochs=60))
        assert est.weights.var() > 0.01

    def test_rejects_bad_folds(self):
        data = sample_binary_gaussian(0.0, 100, seed=44)
        with pytest.raises(ReweightingError):
            crossfit_weights(data, 1, WEIGHT_SPEC, weight_opt(44))
        with pytest.raises(ReweightingError):
            crossfit_weights(data, 50, WEIGHT_SPEC, weight_opt(44))

    def test_oracle_weights_depend_on_nuisance_only_through_posterior(self):
        # any bijection of the nuisance leaves oracle weights unchanged
        data = sample_binary_gaussian(0.5, 1000, seed=45)
        z = data.z[:, 0]
        p_from_z = analytic.binary_posterior(0.5, z)
        z_cubed = z**3
        p_from_bijection = analytic.binary_posterior(0.5, np.cbrt(z_cubed))
        w1 = np.where(data.y == 1.0, 0.5 / p_from_z, 0.5 / (1 - p_from_z))
        w2 = np.where(data.y == 1.0, 0.5 / p_from_bijection, 0.5 / (1 - p_from_bijection))
        assert w1 == pytest.approx(w2, abs=1e-12)


class TestRenormalizeMarginal:
    def _estimate(self, weights, labels):
        return WeightEstimate(
            weights, np.zeros(labels.size, dtype=int), [], float(labels.mean())
        )

    def test_already_normalized_unchanged(self):
        labels = np.array([0.0, 1.0] * 50)
        est = self._estimate(np.ones(100), labels)
        out = renormalize_marginal(est, labels)
        assert out.weights == pytest.approx(est.weights, abs=1e-12)

    def test_doubled_class_mass_rebalanced(self):
        labels = np.array([0.0, 1.0] * 50)
        weights = np.where(labels == 1.0, 2.0, 1.0)
        out = renormalize_marginal(self._estimate(weights, labels), labels)
        mass1 = out.weights[labels == 1.0].sum()
        assert mass1 / out.weights.sum() == pytest.approx(0.5, abs=1e-12)
        assert out.weights.sum() == pytest.approx(weights.sum(), abs=1e-9)

    def test_correction_factors(self):
        # balanced labels, weighted marginal 0.6: factors 0.5/0.6 and 0.5/0.4
        labels = np.array([0.0, 1.0] * 50)
        weights = np.where(labels == 1.0, 1.2, 0.8)
        out = renormalize_marginal(self._estimate(weights, labels), labels)
        ratio = out.weights / weights
        assert ratio[labels == 1.0] == pytest.approx(0.5 / 0.6, abs=1e-12)
        assert ratio[labels == 0.0] == pytest.approx(0.5 / 0.4, abs=1e-12)

    def test_zero_mass_class_aborts(self):
        labels = np.ones(10)
        with pytest.raises(ReweightingError):
            renormalize_marginal(self._estimate(np.ones(10), labels), labels)


class TestLabelShiftAdjust:
    def test_identity_at_empirical_marginal(self):
        data = sample_binary_gaussian(0.5, 1000, seed=46)
        out = label_shift_adjust(data, float(data.y.mean()))
        assert out.w == pytest.approx(data.w, abs=1e-12)

    def test_target_ratios(self):
        data = sample_binary_gaussian(0.5, 10000, seed=47)
        p1 = float(data.y.mean())
        out = label_shift_adjust(data, 0.75)
        assert out.w[data.y == 1.0][0] == pytest.approx(0.75 / p1, abs=1e-12)
        assert out.w[data.y == 0.0][0] == pytest.approx(0.25 / (1 - p1), abs=1e-12)

    def test_composition_with_crossfit_hits_target(self, est_a05):
        data, est = est_a05
        est = renormalize_marginal(est, data.y)
        shifted = data.with_weights(est.weights)
        shifted = label_shift_adjust(shifted, 0.7)
        marginal = (shifted.w * shifted.y).sum() / shifted.w.sum()
        assert marginal == pytest.approx(0.7, abs=1e-12)

    def test_rejects_bad_target(self):
        data = sample_binary_gaussian(0.5, 100, seed=48)
        with pytest.raises(ReweightingError):
            label_shift_adjust(data, 1.0)
