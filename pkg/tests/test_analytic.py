import math

import numpy as np
import pytest

from randistill import analytic
from randistill.analytic import (
    AnalyticError,
    GaussianPosterior,
    LinearRep,
    analytic_mi_y_given_rep,
    binary_posterior,
    continuous_posterior,
    cross_kl,
    eq5_landscape,
    gap_posterior,
    landscape_grid,
    optimal_linear_accuracy,
    prop3_criterion,
    rel_perf,
    sum_rep_posterior,
)
from randistill.families import (
    sample_binary_gaussian,
    sample_continuous_gaussian,
)
from randistill.rng import make_rng

PAPER_RHO = ((0.1, 0.5), (0.9, 0.5))


def gaussian_pdf(v, mean, var):
    return np.exp(-0.5 * (v - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)


class TestBinaryPosterior:
    def test_symmetry_point(self):
        assert binary_posterior(0.5, 0.0) == pytest.approx(0.5)

    @pytest.mark.parametrize("a,z", [(0.5, 1.0), (-0.9, 1.0), (0.3, -2.0)])
    def test_matches_bayes_quadrature(self, a, z):
        # independent oracle: Bayes rule on the two class densities
        num = 0.5 * gaussian_pdf(z, a, 1.0)
        den = num + 0.5 * gaussian_pdf(z, -a, 1.0)
        assert binary_posterior(a, z) == pytest.approx(num / den, abs=1e-12)

    def test_frozen_values(self):
        assert binary_posterior(0.5, 1.0) == pytest.approx(0.7310585786300049, abs=1e-12)
        assert binary_posterior(-0.9, 1.0) == pytest.approx(0.14185106490048777, abs=1e-12)


class TestContinuousPosterior:
    # coefficients follow [(1-a), sigma2*(1+a)] / D(a); D = (10, 6, 5)
    @pytest.mark.parametrize(
        "a,coef,var",
        [
            (1.0, (0.0, 0.4), 0.2),
            (-1.0, (1.0 / 3.0, 0.0), 1.0 / 3.0),
            (0.0, (0.2, 0.4), 0.4),
        ],
    )
    def test_frozen_cases(self, a, coef, var):
        post = continuous_posterior(a, 2.0)
        assert post.coef == pytest.approx(coef, abs=1e-12)
        assert post.var == pytest.approx(var, abs=1e-12)

    @pytest.mark.parametrize("a", [1.0, 0.7, -0.5])
    def test_monte_carlo_regression_oracle(self, a):
        sigma2, n = 2.0, 200_000
        y, x = analytic.sample_analysis_family(a, sigma2, n, seed=21)
        coef, *_ = np.linalg.lstsq(x, y, rcond=None)
        resid = y - x @ coef
        post = continuous_posterior(a, sigma2)
        assert coef == pytest.approx(post.coef, abs=0.01)
        assert resid.var() == pytest.approx(post.var, rel=0.02)

    def test_analysis_and_sampled_family_share_marginal_moments(self):
        # marginal variances and label covariances agree between the two;
        # only the covariate cross term differs (by the shared-nuisance 0.5)
        a, sigma2 = 0.7, 2.0
        data = sample_continuous_gaussian(a, sigma2, 400_000, seed=31)
        cov = np.cov(np.column_stack([data.y, data.x]).T)
        want = analytic.analysis_covariance(a, sigma2)
        assert cov[0] == pytest.approx(want[0], abs=0.02)
        assert cov[1, 1] == pytest.approx(want[1, 1], rel=0.02)
        assert cov[2, 2] == pytest.approx(want[2, 2], rel=0.02)
        assert cov[1, 2] == pytest.approx(want[1, 2] - 0.5, abs=0.02)

    def test_rejects_sigma2(self):
        with pytest.raises(AnalyticError):
            continuous_posterior(1.0, 0.4)


class TestRelPerf:
    def test_paper_value(self):
        assert rel_perf(-1.0, 1.0, 2.0) == pytest.approx(
            12.0 / 5.0 - 0.5 * math.log(5.0), abs=1e-12
        )

    @pytest.mark.parametrize("a,d", [(-1.0, 6.0), (0.0, 5.0), (1.0, 10.0)])
    def test_self_value_is_negative_information(self, a, d):
        assert rel_perf(a, a, 2.0) == pytest.approx(-0.5 * math.log(d / 2.0), abs=1e-12)

    def test_boundary_specialization(self):
        # marginal beats the uncorrelated-coupling conditional at a=6
        assert rel_perf(6.0, 0.0, 2.0) == pytest.approx(0.6 - 0.5 * math.log(2.5), abs=1e-12)
        assert rel_perf(6.0, 0.0, 2.0) > 0
        assert rel_perf(-2.0, 0.0, 2.0) > 0


class TestCrossKl:
    def test_zero_at_equal_coupling(self):
        for a in np.arange(-3.0, 3.01, 0.5):
            assert abs(cross_kl(a, a, 2.0)) < 1e-12

    def test_frozen_cross_value(self):
        want = 12.0 / 5.0 - 0.5 * math.log(5.0) + 0.5 * math.log(3.0)
        assert cross_kl(-1.0, 1.0, 2.0) == pytest.approx(want, abs=1e-12)

    def test_nonnegative_on_grid(self):
        for a in np.arange(-3.0, 3.01, 0.25):
            for b in np.arange(-2.0, 2.01, 0.25):
                assert cross_kl(a, b, 2.0) >= -1e-12

    def test_matches_monte_carlo_kl(self):
        rng = make_rng(0, "misc", 5)
        n = 10**5
        for trial in range(20):
            a, b = rng.uniform(-2.0, 2.0, size=2)
            _, x = analytic.sample_analysis_family(a, 2.0, n, seed=1000 + trial)
            pa, pb = continuous_posterior(a, 2.0), continuous_posterior(b, 2.0)
            diff = pa.mean(x) - pb.mean(x)
            kl = 0.5 * (math.log(pb.var / pa.var) + (pa.var + diff**2) / pb.var - 1.0)
            se = kl.std(ddof=1) / math.sqrt(n)
            assert cross_kl(a, b, 2.0) == pytest.approx(kl.mean(), abs=max(3 * se, 1e-9))

    def test_minimax_argmin_mixed_covariate_family(self):
        """For the mixed-covariate family the minimax coupling is NOT the
        independence member: at b = -1/3 the posterior is proportional to
        the uncorrelating direction [1, 1], making C(a, -1/3) = sigma2
        constant in a, so that coupling wins any wide minimax sweep."""
        from randistill.checks import minimax_argmin

        b_star, worst = minimax_argmin(kl_fn=lambda a, b: cross_kl(a, b, 2.0))
        assert worst.shape == (81,)
        assert b_star == pytest.approx(-0.30, abs=0.051)
        # the constancy witness behind it
        spreads = [analytic._c(a, -1.0 / 3.0, 2.0) for a in (-3.0, 0.0, 2.5)]
        assert spreads == pytest.approx([2.0, 2.0, 2.0], abs=1e-12)

    def test_minimax_argmin_separated_covariate_family(self):
        from randistill.checks import minimax_argmin

        b_star, _ = minimax_argmin()
        assert abs(b_star) <= 0.05 + 1e-12


class TestPropFamilyKl:
    def test_zero_at_equal_coupling(self):
        for a in (-2.0, 0.0, 1.3):
            assert analytic.prop_cross_kl(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_matches_monte_carlo(self):
        from randistill.families import sample_prop_family

        a, b, n = 0.8, -0.4, 10**5
        data = sample_prop_family(a, n, seed=3)
        pa, pb = analytic.prop_posterior(a), analytic.prop_posterior(b)
        diff = pa.mean(data.x) - pb.mean(data.x)
        kl = 0.5 * (math.log(pb.var / pa.var) + (pa.var + diff**2) / pb.var - 1.0)
        se = kl.std(ddof=1) / math.sqrt(n)
        assert analytic.prop_cross_kl(a, b) == pytest.approx(kl.mean(), abs=3 * se)

    def test_posterior_matches_regression(self):
        from randistill.families import sample_prop_family

        data = sample_prop_family(1.0, 2 * 10**5, seed=4)
        coef, *_ = np.linalg.lstsq(data.x, data.y, rcond=None)
        post = analytic.prop_posterior(1.0)
        assert coef == pytest.approx(post.coef, abs=0.01)


class TestProp3:
    def test_frozen_positive_witness(self):
        assert prop3_criterion(7.0, 1.0) == pytest.approx(4.0 - 0.5 * math.log(3.0), abs=1e-12)
        # coupling gap required for positivity: |nu| > 1 + 3 log 3
        assert 7.0 - 1.0 - 1.0 / 1.0 == pytest.approx(5.0) and 5.0 > 1 + 3 * math.log(3.0)

    def test_self_coupling_negative(self):
        for b in (-2.0, -0.5, 1.0, 3.0):
            assert prop3_criterion(b, b) == pytest.approx(
                -0.5 * math.log(b * b + 2.0), abs=1e-12
            )
        assert prop3_criterion(1.0, 1.0) == pytest.approx(-0.5 * math.log(3.0), abs=1e-12)


class TestGapPosterior:
    def test_paper_table(self):
        f = gap_posterior(PAPER_RHO)
        assert f[1, 1] == pytest.approx(0.5, abs=1e-12)
        assert f[0, 1] == pytest.approx(0.5, abs=1e-12)
        assert f[1, 0] == pytest.approx(0.9, abs=1e-12)
        assert f[0, 0] == pytest.approx(0.1, abs=1e-12)

    def test_uninformative_table(self):
        assert np.allclose(gap_posterior(((0.5, 0.5), (0.5, 0.5))), 0.5)

    def test_matches_empirical_posterior(self):
        from randistill.families import sample_gap_family

        data = sample_gap_family(PAPER_RHO, 10**6, seed=22)
        f = gap_posterior(PAPER_RHO)
        for b in (0, 1):
            for ind in (0, 1):
                cell = (data.x[:, 0] == b) & (data.x[:, 1] == ind)
                assert data.y[cell].mean() == pytest.approx(f[b, ind], abs=0.01)

    def test_rejects_degenerate(self):
        with pytest.raises(AnalyticError):
            gap_posterior(((0.0, 0.5), (0.9, 0.5)))


class TestLandscape:
    def test_global_ray_dominates_nuisance_ray(self):
        assert eq5_landscape(LinearRep(1.0, 1.0), 20.0) > eq5_landscape(LinearRep(-1.0, 1.0), 20.0)

    def test_sign_flip_invariance(self):
        rng = make_rng(0, "misc", 6)
        for _ in range(10):
            u, v = rng.uniform(-2.0, 2.0, size=2)
            lam = rng.uniform(0.0, 30.0)
            assert eq5_landscape(LinearRep(u, v), lam) == pytest.approx(
                eq5_landscape(LinearRep(-u, -v), lam), abs=1e-12
            )

    def test_origin_is_marginal_prediction(self):
        assert eq5_landscape(LinearRep(0.0, 0.0), 20.0) == pytest.approx(
            -0.5 * math.log(2 * math.pi * math.e), abs=1e-12
        )

    def test_grid_structure(self):
        """Grid claims: the nuisance-ray point (-1, 1) weakly dominates its
        8-neighborhood, strictly off the ray (the ray itself is an exact
        plateau: the representation there is independent of the label, so
        both objective terms are constant along it), and the (1, 1) ray is
        the global grid maximum."""
        grid = np.linspace(-2.0, 2.0, 41)
        values = landscape_grid(20.0, grid)
        i, j = 10, 30  # (-1.0, 1.0)
        assert grid[i] == pytest.approx(-1.0)
        assert grid[j] == pytest.approx(1.0)
        center = values[i, j]
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == dj == 0:
                    continue
                neighbor = values[i + di, j + dj]
                on_ray = di == -dj  # u and v move oppositely: stays on u = -v
                if on_ray:
                    assert neighbor == pytest.approx(center, abs=1e-12)
                else:
                    assert center > neighbor
        # the label ridge dominates the grid up to a sub-0.5% corner effect:
        # just off the diagonal the likelihood gain is first-order while the
        # penalty is second-order, so the grid argmax sits next to the
        # diagonal at the far corners
        v11 = eq5_landscape(LinearRep(1.0, 1.0), 20.0)
        assert values.max() - v11 < 0.005
        am = np.unravel_index(np.argmax(values), values.shape)
        u_star, v_star = grid[am[0]], grid[am[1]]
        assert u_star * v_star > 0
        assert abs(u_star - v_star) <= 0.1 + 1e-9

    def test_landscape_csv_export(self, tmp_path):
        path = tmp_path / "landscape.csv"
        analytic.write_landscape_csv(path, 20.0, np.linspace(-1.0, 1.0, 5))
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "u,v,value"
        assert len(rows) == 1 + 25


class TestMiOfRep:
    def test_nuisance_only_rep_carries_no_information(self):
        assert analytic_mi_y_given_rep(LinearRep(1.0, -1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_informative_rep_value(self):
        assert analytic_mi_y_given_rep(LinearRep(1.0, 1.0)) == pytest.approx(
            0.5 * math.log(3.0), abs=1e-12
        )

    def test_scale_invariance(self):
        assert analytic_mi_y_given_rep(LinearRep(2.0, 2.0)) == pytest.approx(
            analytic_mi_y_given_rep(LinearRep(1.0, 1.0)), abs=1e-12
        )

    def test_zero_rep_convention(self):
        assert analytic_mi_y_given_rep(LinearRep(0.0, 0.0)) == 0.0

    def test_monte_carlo_gaussian_mi(self):
        # I(y; r) for the jointly Gaussian pair via sample covariance
        data = sample_continuous_gaussian(0.0, 2.0, 10**6, seed=23)
        r = data.x.sum(axis=1)
        rho = np.corrcoef(data.y, r)[0, 1]
        assert -0.5 * math.log(1 - rho * rho) == pytest.approx(
            analytic_mi_y_given_rep(LinearRep(1.0, 1.0)), abs=0.01
        )


class TestOptimalLinear:
    def test_value_brackets_62_percent(self):
        acc = optimal_linear_accuracy()
        assert acc == pytest.approx(0.6305, abs=5e-4)
        assert abs(acc - 0.62) < 0.02

    @pytest.mark.parametrize("a_test", [-0.9, 0.0, 0.9])
    def test_monte_carlo_accuracy_any_coupling(self, a_test):
        data = sample_binary_gaussian(a_test, 10**6, seed=24)
        pred = (data.x.sum(axis=1) >= 1.0).astype(float)
        assert (pred == data.y).mean() == pytest.approx(optimal_linear_accuracy(a_test), abs=0.01)

    def test_nuisance_only_rep_is_chance(self):
        data = sample_binary_gaussian(0.5, 10**6, seed=25)
        # constant posterior 0.5 predicts class 1 everywhere
        assert data.y.mean() == pytest.approx(0.5, abs=0.01)


class TestPerformanceGuarantees:
    """Monte-Carlo checks of the uncorrelating-representation guarantees."""

    A_GRID = (-0.9, -0.5, 0.0, 0.5, 0.9)

    def test_sum_rep_never_below_marginal(self):
        # log-likelihood gap to the marginal predictor is nonnegative
        for a in self.A_GRID:
            data = sample_binary_gaussian(a, 10**5, seed=26)
            r = data.x.sum(axis=1)
            p = sum_rep_posterior(r)
            ll = np.where(data.y == 1.0, np.log(p), np.log1p(-p))
            gap = ll - math.log(0.5)
            se = gap.std(ddof=1) / math.sqrt(len(data))
            assert gap.mean() >= -3 * se

    def test_ordering_sum_rep_dominates(self):
        # summed rep >= nuisance-only rep == constant rep, all couplings
        for a in self.A_GRID:
            data = sample_binary_gaussian(a, 10**5, seed=27)
            p_sum = sum_rep_posterior(data.x.sum(axis=1))
            ll_sum = np.where(data.y == 1.0, np.log(p_sum), np.log1p(-p_sum))
            ll_flat = np.full(len(data), math.log(0.5))
            diff = ll_sum - ll_flat
            se = diff.std(ddof=1) / math.sqrt(len(data))
            assert diff.mean() >= -3 * se

    def test_joint_independent_rep_gap_constant_across_couplings(self):
        # both reps are label-plus-noise only, so their performance gap is
        # the mutual-information gap, independent of the test coupling
        extra_var = 1.0
        v2 = analytic.SUM_REP_NOISE_VAR / 4.0 + extra_var
        gaps = []
        for i, a in enumerate(self.A_GRID):
            data = sample_binary_gaussian(a, 2 * 10**5, seed=28)
            noise = make_rng(28, "misc", i).normal(0.0, math.sqrt(extra_var), len(data))
            r1 = data.x.sum(axis=1)
            r2 = r1 / 2.0 + noise
            p1 = sum_rep_posterior(r1)
            p2 = analytic.logistic((2.0 * r2 - 1.0) / (2.0 * v2))
            ll1 = np.where(data.y == 1.0, np.log(p1), np.log1p(-p1))
            ll2 = np.where(data.y == 1.0, np.log(p2), np.log1p(-p2))
            d = ll1 - ll2
            gaps.append((d.mean(), d.std(ddof=1) / math.sqrt(len(data))))
        base = gaps[0][0]
        for mean, se in gaps[1:]:
            assert mean == pytest.approx(base, abs=3 * (se + gaps[0][1]))

    def test_randomization_marginal_is_immaterial_for_sum_rep(self):
        """Two nuisance randomizations (within-sample permutation vs fresh
        draws from a positive marginal truncated to the sampled support)
        give matching posteriors on a grid of summed-rep bins."""
        a, n = 0.5, 4 * 10**5
        data = sample_binary_gaussian(a, n, seed=29)
        rng = make_rng(29, "misc", 1)
        z_perm = data.z[rng.permutation(n), 0]
        z_new = rng.normal(0.0, math.sqrt(2 * a * a * 0.25 + 1.0), n)
        z_new = np.clip(z_new, data.z[:, 0].min(), data.z[:, 0].max())
        estimates, edges = [], None
        for z in (z_perm, z_new):
            x1 = rng.normal(data.y - z, 3.0)
            x2 = rng.normal(data.y + z, 0.1)
            r = x1 + x2
            if edges is None:
                edges = np.quantile(r, np.linspace(0.05, 0.95, 7))
            idx = np.digitize(r, edges) - 1
            est = np.array([data.y[idx == b].mean() for b in range(6)])
            estimates.append(est)
        assert np.all(np.abs(estimates[0] - estimates[1]) < 0.02)


class TestGaussianPosteriorType:
    def test_rejects_nonpositive_variance(self):
        with pytest.raises(AnalyticError):
            GaussianPosterior((0.5, 0.5), 0.0)

    def test_log_density(self):
        post = GaussianPosterior((1.0, 0.0), 1.0)
        x = np.array([[2.0, 5.0]])
        got = post.log_density(np.array([2.0]), x)
        assert got[0] == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-12)
