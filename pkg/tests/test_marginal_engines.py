"""Tests for the marginal-likelihood engines: closed-form expansion scores,
mode-based scores, refinement, non-local tilts, survival scoring, and the
numerical oracles they are checked against."""

import dataclasses

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

import alaselect.marginal_engines as me
from alaselect.data_model import DesignMatrix, build_cache, submodel_stats
from alaselect.errors import NotConcaveAtExpansion
from alaselect.families import (
    SurvivalData,
    aft_loglik_grad_hess,
    gaussian,
    gaussian_unknown,
    logistic,
    poisson,
)
from alaselect.priors import ModelPriorSpec, ParamPriorSpec, log_model_prior_unnorm

from tests.oracles import (
    conjugate_known_phi_log_ml,
    conjugate_unknown_phi_log_ml,
    logistic_loglik_np,
    make_design,
    zero_expansion_unknown_phi_log_ml,
)


class TestGeneralBackbone:
    """The closed-form integral of a quadratic expansion against a Normal
    prior is exact for genuinely quadratic objectives."""

    def _quadratic_truth(self, m, a_mat, const, prec):
        """Integral of exp(const - (theta-m)' A (theta-m) / 2) against
        N(0, prec^-1), in closed form via Gaussian convolution."""
        d = m.size
        cov_sum = np.linalg.inv(a_mat) + np.linalg.inv(prec)
        return (
            const
            + 0.5 * d * np.log(2.0 * np.pi)
            - 0.5 * np.linalg.slogdet(a_mat)[1]
            + stats.multivariate_normal.logpdf(m, np.zeros(d), cov_sum)
        )

    def test_exact_for_quadratic_objectives(self, rng):
        d = 3
        raw = rng.normal(size=(d, d))
        a_mat = raw @ raw.T + d * np.eye(d)
        m = rng.normal(size=d)
        prec = np.diag(rng.uniform(0.5, 2.0, size=d))
        const = -1.7
        loglik0 = const - 0.5 * m @ a_mat @ m
        grad0 = -a_mat @ m  # negative-objective gradient at zero
        score = me.ala_general(loglik0, grad0, a_mat, prec)
        np.testing.assert_allclose(
            score.log_ml, self._quadratic_truth(m, a_mat, const, prec), atol=1e-10
        )

    def test_expansion_point_does_not_matter_for_quadratics(self, rng):
        """Expanding the same quadratic objective anywhere gives the same
        integral, so the score is invariant to the expansion point."""
        d = 2
        raw = rng.normal(size=(d, d))
        a_mat = raw @ raw.T + d * np.eye(d)
        m = rng.normal(size=d)
        prec = 0.7 * np.eye(d)
        const = 0.4

        def objective(theta):
            delta = theta - m
            return const - 0.5 * delta @ a_mat @ delta

        at_zero = me.ala_general(objective(np.zeros(d)), -a_mat @ m, a_mat, prec)
        theta0 = rng.normal(size=d)
        at_theta0 = me.ala_general(
            objective(theta0), a_mat @ (theta0 - m), a_mat, prec, theta0=theta0
        )
        np.testing.assert_allclose(at_zero.log_ml, at_theta0.log_ml, atol=1e-10)

    def test_indefinite_curvature_raises(self):
        with pytest.raises(NotConcaveAtExpansion):
            me.ala_general(0.0, np.zeros(1), np.array([[-1.0]]), np.array([[0.5]]))


class TestKnownDispersionExactness:
    """For Gaussian responses with known dispersion, both the expansion
    score and the mode score match the conjugate closed form."""

    def test_engine_matches_conjugate_marginal(self, rng):
        design = make_design(rng, 45, [2, 1, 3], intercept=True)
        beta = np.zeros(design.p)
        beta[1], beta[4] = 0.8, -0.5
        phi, g = 0.6, 1.7
        y = design.values @ beta + np.sqrt(phi) * rng.normal(size=45)
        cache = build_cache(design, y, gaussian(phi))
        prior = ParamPriorSpec(kind="gzellner", g=g)
        scorer_ala = me.ModelScorer(cache, gaussian(phi), prior, method="ala")
        scorer_la = me.ModelScorer(cache, gaussian(phi), prior, method="la")
        for bits in [(1, 0, 0, 0), (1, 1, 0, 0), (1, 0, 1, 1), (1, 1, 1, 1)]:
            reference = conjugate_known_phi_log_ml(design, bits, y, g, phi)
            np.testing.assert_allclose(scorer_ala.log_ml(bits), reference, atol=1e-8)
            np.testing.assert_allclose(scorer_la.log_ml(bits), reference, atol=1e-8)

    def test_builtin_exact_scorer_agrees_with_the_independent_route(self, rng):
        design = make_design(rng, 30, [1, 2])
        y = rng.normal(size=30)
        phi, g = 1.3, 0.9
        cache = build_cache(design, y, gaussian(phi))
        prior = ParamPriorSpec(kind="gzellner", g=g)
        for bits in [(0, 0), (1, 0), (1, 1)]:
            model = design.model(bits)
            builtin = me.exact_gaussian_marginal(model, cache, gaussian(phi), prior)
            np.testing.assert_allclose(
                builtin.log_ml,
                conjugate_known_phi_log_ml(design, bits, y, g, phi),
                atol=1e-9,
            )

    def test_null_model_is_the_plain_likelihood(self, rng):
        design = make_design(rng, 25, [1])
        y = rng.normal(size=25)
        phi = 0.8
        cache = build_cache(design, y, gaussian(phi))
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        score = me.ala_expfam_known_phi(design.model((0,)), cache, gaussian(phi), prior)
        np.testing.assert_allclose(
            score.log_ml,
            stats.norm.logpdf(y, scale=np.sqrt(phi)).sum(),
            atol=1e-10,
        )

    def test_bayes_factor_is_score_minus_null(self, rng):
        design = make_design(rng, 30, [1, 1])
        y = rng.normal(size=30)
        cache = build_cache(design, y, gaussian(1.0))
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        model = design.model((1, 0))
        null = design.model((0, 0))
        bf = me.ala_bf_known_phi(model, cache, gaussian(1.0), prior)
        s_model = me.ala_expfam_known_phi(model, cache, gaussian(1.0), prior)
        s_null = me.ala_expfam_known_phi(null, cache, gaussian(1.0), prior)
        np.testing.assert_allclose(bf, s_model.log_ml - s_null.log_ml, atol=1e-10)


class TestPluginVariant:
    """Evaluating the prior density at the plug-in point instead of
    integrating it shifts the score by about half the log prior-to-
    posterior precision ratio."""

    def test_gap_matches_the_precision_ratio(self, rng):
        n, g = 1000, 1.0
        design = make_design(rng, n, [1])
        y = rng.normal(size=n)
        cache = build_cache(design, y, gaussian(1.0))
        prior = ParamPriorSpec(kind="gzellner", g=g)
        exact = me.ModelScorer(cache, gaussian(1.0), prior, method="ala")
        plugin = me.ModelScorer(
            cache, gaussian(1.0), prior, method="ala", variant="plugin-density"
        )
        gap = plugin.log_ml((1,)) - exact.log_ml((1,))
        np.testing.assert_allclose(gap, 0.5 * np.log(1.0 + 1.0 / (g * n)), rtol=0.02)

    def test_unknown_variant_name_rejected(self, rng):
        design = make_design(rng, 10, [1])
        cache = build_cache(design, rng.normal(size=10), gaussian(1.0))
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        with pytest.raises(ValueError):
            me.ala_expfam_known_phi(
                design.model((1,)), cache, gaussian(1.0), prior, variant="bogus"
            )


class TestUnknownDispersion:
    """Joint expansion over coefficients and dispersion at the null
    dispersion estimate, checked against scalar algebra."""

    def _moderate_data(self, rng, n=60):
        design = make_design(rng, n, [2, 1, 1], intercept=True)
        beta = np.zeros(design.p)
        beta[1] = 0.35
        y = design.values @ beta + rng.normal(size=n)
        return design, y

    def test_matches_scalar_reference(self, rng):
        design, y = self._moderate_data(rng)
        g, a, b = 1.2, 0.01, 0.01
        cache = build_cache(design, y, gaussian_unknown())
        prior = ParamPriorSpec(kind="gzellner", g=g, phi_prior=(a, b))
        for bits in [(1, 0, 0, 0), (1, 1, 0, 0), (1, 1, 1, 0), (1, 1, 1, 1)]:
            score = me.ala_expfam_unknown_phi(
                design.model(bits), cache, gaussian_unknown(), prior
            )
            reference, phi_tilde = zero_expansion_unknown_phi_log_ml(
                design, bits, y, g, a, b
            )
            if np.isfinite(reference):
                np.testing.assert_allclose(score.log_ml, reference, atol=1e-10)
            else:
                assert score.log_ml == -np.inf
            np.testing.assert_allclose(
                score.diagnostics["phi_tilde"], phi_tilde, atol=1e-10
            )

    def test_null_dispersion_estimate_is_recorded(self, rng):
        design, y = self._moderate_data(rng)
        cache = build_cache(design, y, gaussian_unknown())
        prior = ParamPriorSpec(kind="gzellner", g=1.0, phi_prior=(0.01, 0.01))
        score = me.ala_expfam_unknown_phi(
            design.model((1, 0, 0, 0)), cache, gaussian_unknown(), prior
        )
        np.testing.assert_allclose(score.diagnostics["phi0"], np.mean(y**2), atol=1e-12)

    def _fixed_fit_data(self, rng, n, r_squared):
        """One covariate explaining an exact share of the response sum of
        squares, to steer the plug-in dispersion."""
        z = rng.normal(size=(n, 1))
        z_hat = z[:, 0] / np.linalg.norm(z)
        w = rng.normal(size=n)
        w -= (w @ z_hat) * z_hat
        w /= np.linalg.norm(w)
        y = np.sqrt(r_squared) * z_hat + np.sqrt(1.0 - r_squared) * w
        return DesignMatrix(z, ((0, 1),)), y * 3.0

    def test_negative_plugin_dispersion_zeroes_the_score(self, rng):
        """When the explained share passes one quarter of the total sum of
        squares the plug-in dispersion crosses zero and the model is
        reported as impossible rather than mis-scored."""
        design, y = self._fixed_fit_data(rng, 40, r_squared=0.35)
        cache = build_cache(design, y, gaussian_unknown())
        prior = ParamPriorSpec(kind="gzellner", g=1.0, phi_prior=(0.01, 0.01))
        score = me.ala_expfam_unknown_phi(
            design.model((1,)), cache, gaussian_unknown(), prior
        )
        assert score.log_ml == -np.inf
        assert score.diagnostics["phi_tilde"] <= 0.0

    def test_overwhelming_fit_breaks_joint_curvature(self, rng):
        """Explaining more than half the sum of squares makes the joint
        expansion indefinite, which must raise instead of returning a
        number."""
        design, y = self._fixed_fit_data(rng, 40, r_squared=0.8)
        cache = build_cache(design, y, gaussian_unknown())
        prior = ParamPriorSpec(kind="gzellner", g=1.0, phi_prior=(0.01, 0.01))
        with pytest.raises(NotConcaveAtExpansion):
            me.ala_expfam_unknown_phi(
                design.model((1,)), cache, gaussian_unknown(), prior
            )

    def test_mode_score_converges_to_the_conjugate_marginal(self, rng):
        """The mode-based score is exact in the coefficients and a Laplace
        approximation in the dispersion only, so its error against the
        conjugate closed form shrinks as the sample grows."""
        g, a, b = 1.0, 0.01, 0.01
        errors = {}
        for n in (120, 480):
            design, y = self._moderate_data(np.random.default_rng(17), n=n)
            cache = build_cache(design, y, gaussian_unknown())
            prior = ParamPriorSpec(kind="gzellner", g=g, phi_prior=(a, b))
            bits = (1, 1, 0, 1)
            la = me.la_marginal(design.model(bits), cache, gaussian_unknown(), prior)
            exact = conjugate_unknown_phi_log_ml(design, bits, y, g, a, b)
            errors[n] = abs(la.log_ml - exact)
        assert errors[480] < errors[120]
        assert errors[480] < 0.15

    def test_builtin_exact_scorer_matches_the_independent_route(self, rng):
        design, y = self._moderate_data(rng, n=50)
        g, a, b = 0.8, 0.5, 0.7
        cache = build_cache(design, y, gaussian_unknown())
        prior = ParamPriorSpec(kind="gzellner", g=g, phi_prior=(a, b))
        for bits in [(1, 0, 0, 0), (1, 1, 1, 0)]:
            builtin = me.exact_gaussian_marginal(
                design.model(bits), cache, gaussian_unknown(), prior
            )
            np.testing.assert_allclose(
                builtin.log_ml,
                conjugate_unknown_phi_log_ml(design, bits, y, g, a, b),
                atol=1e-9,
            )


class TestCurvatureAdjustment:
    """Rescaling the expansion Hessian by the observed-to-implied variance
    ratio at the intercept fit."""

    def test_variance_ratio_on_a_balanced_binary_response(self, rng):
        """Two successes and two failures: the empirical variance of the
        response is 1/3 against an implied 1/4, a ratio of four thirds."""
        design = make_design(rng, 4, [1], intercept=True)
        y = np.array([0.0, 1.0, 1.0, 0.0])
        cache = build_cache(design, y, logistic(), center="intercept-mle")
        ctx = me.curvature_context(cache, logistic())
        np.testing.assert_allclose(ctx.rho_hat, 4.0 / 3.0, atol=1e-12)

    def test_adjustment_changes_the_score_when_overdispersed(self, rng):
        n = 200
        design = make_design(rng, n, [1], intercept=True)
        lam = np.exp(0.3 * design.values[:, 1] + 0.7 * rng.normal(size=n))
        y = rng.poisson(lam).astype(np.float64)
        cache = build_cache(design, y, poisson(), center="intercept-mle")
        ctx = me.curvature_context(cache, poisson())
        assert ctx.rho_hat > 1.0
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        plain = me.ala_expfam_known_phi(design.model((1, 1)), cache, poisson(), prior)
        adjusted = me.ala_expfam_known_phi(
            design.model((1, 1)), cache, poisson(), prior, curvature=ctx
        )
        assert plain.log_ml != adjusted.log_ml
        assert adjusted.method == "ala-curvadj"
        np.testing.assert_allclose(adjusted.diagnostics["rho_hat"], ctx.rho_hat)

    def test_needs_an_intercept_centered_cache(self, rng):
        design = make_design(rng, 20, [1], intercept=True)
        y = (rng.random(20) < 0.5).astype(np.float64)
        cache = build_cache(design, y, logistic(), center="zero")
        with pytest.raises(ValueError):
            me.curvature_context(cache, logistic())

    def test_needs_a_known_dispersion(self, rng):
        design = make_design(rng, 20, [1], intercept=True)
        y = rng.normal(size=20)
        cache = build_cache(design, y, gaussian_unknown(), center="zero")
        with pytest.raises(ValueError):
            me.curvature_context(cache, gaussian_unknown())


class TestQuadratureOracle:
    """The one-dimensional adaptive integrator used as a reference."""

    def test_standard_normal_integrates_to_one(self):
        value = me.quadrature_oracle(lambda x: stats.norm.logpdf(x))
        np.testing.assert_allclose(value, 0.0, atol=1e-9)

    def test_gamma_integral_identity(self):
        """The integral of exp(a x - exp(x)) over the line is the gamma
        function at a."""
        for a in (0.7, 2.5, 6.0):
            value = me.quadrature_oracle(lambda x: a * x - np.exp(x), x0=np.log(a))
            np.testing.assert_allclose(value, gammaln(a), atol=1e-8)

    def test_shifted_and_scaled_normal(self):
        mu, sigma = 7.5, 0.2
        value = me.quadrature_oracle(
            lambda x: stats.norm.logpdf(x, loc=mu, scale=sigma)
        )
        np.testing.assert_allclose(value, 0.0, atol=1e-8)


class TestRefinedExpansion:
    """Cheap likelihood-driven updates of the expansion point."""

    def test_zero_steps_is_the_plain_expansion_score(self, rng):
        design = make_design(rng, 50, [1, 1], intercept=True)
        y = (rng.random(50) < 0.4).astype(np.float64)
        cache = build_cache(design, y, logistic())
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        bits = (1, 1, 0)
        plain = me.ala_expfam_known_phi(design.model(bits), cache, logistic(), prior)
        refined = me.ala_refined(design.model(bits), cache, logistic(), prior, k=0)
        np.testing.assert_allclose(refined.log_ml, plain.log_ml, atol=1e-12)

    def test_any_step_count_is_exact_for_gaussian(self, rng):
        """Quadratic log likelihoods make the expansion score independent
        of the expansion point, so refinement cannot change it."""
        design = make_design(rng, 40, [1, 2])
        y = design.values @ np.array([0.7, 0.0, -0.3]) + rng.normal(size=40)
        phi, g = 1.0, 1.0
        cache = build_cache(design, y, gaussian(phi))
        prior = ParamPriorSpec(kind="gzellner", g=g)
        bits = (1, 1)
        reference = conjugate_known_phi_log_ml(design, bits, y, g, phi)
        for k in (0, 1, 3):
            refined = me.ala_refined(design.model(bits), cache, gaussian(phi), prior, k=k)
            np.testing.assert_allclose(refined.log_ml, reference, atol=1e-8)

    def test_one_step_improves_on_the_zero_expansion_for_logistic(self, rng):
        """On one-dimensional logistic data with a unit-variance Normal
        prior, a single update moves the score toward the quadrature truth
        in the vast majority of replicates."""
        n, beta_star = 100, 0.405
        wins = 0
        reps = 50
        for rep in range(reps):
            local = np.random.default_rng(500 + rep)
            z = local.normal(size=(n, 1))
            y = (local.random(n) < 1.0 / (1.0 + np.exp(-beta_star * z[:, 0]))).astype(
                np.float64
            )
            design = DesignMatrix(z, ((0, 1),))
            cache = build_cache(design, y, logistic())
            a = float(cache.group_block(0)[0, 0])
            prior = ParamPriorSpec(kind="gzellner", g=a / n)

            def integrand(b):
                eta = np.outer(z[:, 0], np.atleast_1d(b))
                ll = y @ eta - np.logaddexp(0.0, eta).sum(axis=0)
                return ll + stats.norm.logpdf(np.atleast_1d(b))

            truth = me.quadrature_oracle(integrand)
            model = design.model((1,))
            plain = me.ala_expfam_known_phi(model, cache, logistic(), prior)
            refined = me.ala_refined(model, cache, logistic(), prior, k=1)
            if abs(refined.log_ml - truth) < abs(plain.log_ml - truth):
                wins += 1
        assert wins >= 0.8 * reps

    def test_many_steps_approach_the_mode_score_for_logistic(self, rng):
        design = make_design(rng, 150, [1, 1], intercept=True)
        eta = design.values @ np.array([0.3, 1.0, 0.0])
        y = (rng.random(150) < 1.0 / (1.0 + np.exp(-eta))).astype(np.float64)
        cache = build_cache(design, y, logistic())
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        bits = (1, 1, 0)
        model = design.model(bits)
        plain = me.ala_expfam_known_phi(model, cache, logistic(), prior)
        la = me.la_marginal(model, cache, logistic(), prior)
        refined = me.ala_refined(model, cache, logistic(), prior, k=8)
        # refinement expands at the maximum-likelihood point, which sits
        # near but not exactly at the posterior mode, so the two scores
        # agree to a small residual rather than exactly
        assert abs(refined.log_ml - la.log_ml) < abs(plain.log_ml - la.log_ml)
        assert abs(refined.log_ml - la.log_ml) < 0.1


class TestNonlocalEngines:
    """Non-local prior scoring and its two oracles."""

    def _orthogonal_design(self, rng, n=40):
        q, _ = np.linalg.qr(rng.normal(size=(n, 5)))
        z = q * np.array([2.0, 1.1, 3.0, 0.7, 1.6])
        return DesignMatrix(z, ((0, 2), (2, 3), (3, 5)))

    def test_matches_per_group_quadrature_on_orthogonal_groups(self, rng):
        """With mutually orthogonal groups the posterior factorizes over
        groups, the tilt identity is exact, and the score equals the
        tensor-quadrature value."""
        design = self._orthogonal_design(rng)
        y = design.values @ np.array([0.5, -0.4, 0.9, 0.0, 0.0]) + rng.normal(size=40)
        phi = 1.0
        cache = build_cache(design, y, gaussian(phi))
        prior = ParamPriorSpec(kind="gmom", g=1.0)
        for bits in [(1, 0, 0), (1, 1, 0), (1, 1, 1), (0, 0, 1)]:
            fast = me.ala_gmom(design.model(bits), cache, gaussian(phi), prior)
            slow = me.exact_gmom_blockdiag(design.model(bits), cache, gaussian(phi), prior)
            np.testing.assert_allclose(fast.log_ml, slow.log_ml, atol=1e-8)

    def test_monte_carlo_oracle_confirms_the_quadrature_oracle(self, rng):
        design = self._orthogonal_design(rng)
        y = design.values @ np.array([0.5, -0.4, 0.9, 0.0, 0.0]) + rng.normal(size=40)
        cache = build_cache(design, y, gaussian(1.0))
        prior = ParamPriorSpec(kind="gmom", g=1.0)
        bits = (1, 1, 0)
        slow = me.exact_gmom_blockdiag(design.model(bits), cache, gaussian(1.0), prior)
        mc = me.exact_gmom_mc(
            design.model(bits),
            cache,
            gaussian(1.0),
            prior,
            n_draws=200_000,
            rng=np.random.default_rng(99),
        )
        se = mc.diagnostics["mc_se_log"]
        assert abs(mc.log_ml - slow.log_ml) < 5.0 * se + 1e-4

    def test_quadrature_oracle_rejects_correlated_groups(self, rng):
        design = make_design(rng, 30, [1, 1])
        # make the two columns strongly correlated
        vals = design.values.copy()
        vals[:, 1] = 0.9 * vals[:, 0] + 0.1 * vals[:, 1]
        design = DesignMatrix(vals, design.groups)
        cache = build_cache(design, rng.normal(size=30), gaussian(1.0))
        prior = ParamPriorSpec(kind="gmom", g=1.0)
        with pytest.raises(ValueError):
            me.exact_gmom_blockdiag(design.model((1, 1)), cache, gaussian(1.0), prior)

    def test_null_model_has_no_tilt(self, rng):
        design = self._orthogonal_design(rng)
        y = rng.normal(size=40)
        cache = build_cache(design, y, gaussian(1.0))
        gz = ParamPriorSpec(kind="gzellner", g=1.0)
        gm = ParamPriorSpec(kind="gmom", g=1.0)
        bits = (0, 0, 0)
        a = me.ala_gmom(design.model(bits), cache, gaussian(1.0), gm)
        b = me.ala_expfam_known_phi(design.model(bits), cache, gaussian(1.0), gz)
        np.testing.assert_allclose(a.log_ml, b.log_ml, atol=1e-12)

    def test_unknown_dispersion_route_only_for_gaussian(self, rng):
        """Non-Gaussian families with a free dispersion cannot take the
        non-local route and must be rejected, not silently mis-scored."""
        design = make_design(rng, 30, [1])
        y = rng.poisson(1.0, size=30).astype(np.float64)
        cache = build_cache(design, y, poisson())
        prior = ParamPriorSpec(kind="gmom", g=1.0, phi_prior=(0.01, 0.01))
        fake_unknown = dataclasses.replace(poisson(), phi_known=False)
        with pytest.raises(ValueError):
            me.ala_gmom(design.model((1,)), cache, fake_unknown, prior)

    def test_gaussian_unknown_dispersion_route_is_tight_near_the_null(self, rng):
        """With unknown dispersion the zero expansion is approximate; its
        error against a simulated truth is small when the signal is weak
        and grows with the signal, which is the documented behavior."""
        prior = ParamPriorSpec(kind="gmom", g=1.0, phi_prior=(0.01, 0.01))
        gaps = {}
        for signal in (0.0, 0.4):
            local = np.random.default_rng(11)
            design = make_design(local, 80, [1, 1], intercept=True)
            beta = np.array([0.0, signal, 0.0])
            y = design.values @ beta + local.normal(size=80)
            cache = build_cache(design, y, gaussian_unknown())
            bits = (1, 1, 0)
            score = me.ala_gmom(design.model(bits), cache, gaussian_unknown(), prior)
            assert np.isfinite(score.log_ml)
            mc = me.exact_gmom_mc(
                design.model(bits),
                cache,
                gaussian_unknown(),
                prior,
                n_draws=200_000,
                rng=np.random.default_rng(4),
            )
            gaps[signal] = abs(score.log_ml - mc.log_ml)
        assert gaps[0.0] < 0.3
        assert gaps[0.0] < gaps[0.4]


def _survival_sample(rng, n=70, p=3, censor_frac=0.45):
    z = rng.normal(size=(n, p))
    alpha = np.zeros(p)
    alpha[0] = 0.7
    log_t = z @ alpha + rng.normal(size=n)
    cutoff = np.quantile(log_t, 1.0 - censor_frac)
    observed = log_t <= cutoff
    data = SurvivalData(np.where(observed, log_t, cutoff), observed)
    return DesignMatrix.with_singleton_groups(z), data


class TestSurvivalEngines:
    """Survival scoring against a longhand assembly from the raw censored
    likelihood derivatives."""

    def test_context_stats_match_raw_derivatives(self, rng):
        design, data = _survival_sample(rng)
        ctx = me.build_aft_context(design, data)
        p = design.p
        _, grad, hess = aft_loglik_grad_hess(
            design.values, data, np.zeros(p), ctx.tau0
        )
        # the profile equation zeroes the scale coordinate of the gradient
        np.testing.assert_allclose(grad[p], 0.0, atol=1e-8)
        np.testing.assert_allclose(grad[:p], ctx.ztv, atol=1e-9)
        np.testing.assert_allclose(hess[:p, p], ctx.ztyw, atol=1e-9)
        np.testing.assert_allclose(hess[p, p], -ctx.h_tt, atol=1e-9)
        cols = np.arange(p)
        np.testing.assert_allclose(
            -(ctx.wgram.block(cols)), hess[:p, :p], atol=1e-9
        )

    def test_expansion_score_matches_longhand_assembly(self, rng):
        """Assembling the plug-in score directly from the raw derivative
        routines and prior densities reproduces the engine value."""
        design, data = _survival_sample(rng)
        ctx = me.build_aft_context(design, data)
        g, (a, b) = 1.3, (0.8, 0.6)
        prior = ParamPriorSpec(kind="gzellner", g=g, phi_prior=(a, b))
        bits = (1, 0, 1)
        model = design.model(bits)
        engine = me.ala_aft(model, ctx, prior)

        cols = design.columns_for(bits)
        z = design.values[:, cols]
        p = cols.size
        ll0, grad, hess = aft_loglik_grad_hess(z, data, np.zeros(p), ctx.tau0)
        h_neg = -hess
        g_neg = -grad
        theta0 = np.concatenate([np.zeros(p), [ctx.tau0]])
        step = np.linalg.solve(h_neg, g_neg)
        theta_tilde = theta0 - step
        quad = g_neg @ np.linalg.solve(h_neg, g_neg)
        log_prior = 0.0
        at = 0
        for j in model.active_groups:
            zj = design.values[:, design.groups[j][0] : design.groups[j][1]]
            pj = zj.shape[1]
            cov = design.n * g / pj * np.linalg.inv(zj.T @ zj)
            log_prior += stats.multivariate_normal.logpdf(
                theta_tilde[at : at + pj], np.zeros(pj), cov
            )
            at += pj
        tau_tilde = theta_tilde[-1]
        log_prior += (
            np.log(2.0)
            + a * np.log(b)
            - gammaln(a)
            + (2.0 * a - 1.0) * np.log(tau_tilde)
            - b * tau_tilde**2
        )
        sign, logdet = np.linalg.slogdet(h_neg)
        longhand = (
            ll0
            + 0.5 * quad
            + log_prior
            + 0.5 * (p + 1) * np.log(2.0 * np.pi)
            - 0.5 * logdet
        )
        np.testing.assert_allclose(engine.log_ml, longhand, atol=1e-9)
        np.testing.assert_allclose(engine.diagnostics["tau_tilde"], tau_tilde, atol=1e-9)

    def test_mode_score_sits_at_a_stationary_point(self, rng):
        design, data = _survival_sample(rng)
        ctx = me.build_aft_context(design, data)
        prior = ParamPriorSpec(kind="gzellner", g=1.0, phi_prior=(0.8, 0.6))
        score = me.la_aft(design.model((1, 1, 0)), ctx, prior)
        # convergence is declared on the objective decrement, so the
        # gradient is small but not driven to machine precision
        assert score.diagnostics["grad_norm"] < 1e-4
        assert np.isfinite(score.log_ml)

    def test_mode_and_expansion_scores_are_close_on_easy_data(self, rng):
        design, data = _survival_sample(rng, n=150, censor_frac=0.25)
        ctx = me.build_aft_context(design, data)
        prior = ParamPriorSpec(kind="gzellner", g=1.0, phi_prior=(0.01, 0.01))
        for bits in [(1, 0, 0), (1, 1, 1)]:
            a = me.ala_aft(design.model(bits), ctx, prior)
            b = me.la_aft(design.model(bits), ctx, prior)
            assert abs(a.log_ml - b.log_ml) < 2.0

    def test_null_model_scores_are_finite(self, rng):
        design, data = _survival_sample(rng)
        ctx = me.build_aft_context(design, data)
        prior = ParamPriorSpec(kind="gzellner", g=1.0, phi_prior=(0.01, 0.01))
        a = me.ala_aft(design.model((0, 0, 0)), ctx, prior)
        b = me.la_aft(design.model((0, 0, 0)), ctx, prior)
        assert np.isfinite(a.log_ml) and np.isfinite(b.log_ml)
        assert abs(a.log_ml - b.log_ml) < 1.0


class TestScorers:
    """The memoizing front ends used by the search routines."""

    def test_scores_are_memoized(self, rng):
        design = make_design(rng, 30, [1, 1])
        cache = build_cache(design, rng.normal(size=30), gaussian(1.0))
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        scorer = me.ModelScorer(cache, gaussian(1.0), prior)
        first = scorer.marginal((1, 0))
        second = scorer.marginal((1, 0))
        assert first is second

    def test_model_identifier_and_bits_share_an_entry(self, rng):
        design = make_design(rng, 30, [1, 1])
        cache = build_cache(design, rng.normal(size=30), gaussian(1.0))
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        scorer = me.ModelScorer(cache, gaussian(1.0), prior)
        assert scorer.marginal(design.model((1, 0))) is scorer.marginal((1, 0))

    def test_log_score_adds_the_model_prior(self, rng):
        design = make_design(rng, 30, [1, 1])
        cache = build_cache(design, rng.normal(size=30), gaussian(1.0))
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        model_prior = ModelPriorSpec(n_groups=2, p_total=2, c_exponent=1.0)
        scorer = me.ModelScorer(cache, gaussian(1.0), prior, model_prior=model_prior)
        bits = (1, 1)
        np.testing.assert_allclose(
            scorer.log_score(bits),
            scorer.log_ml(bits) + log_model_prior_unnorm(bits, model_prior),
            atol=1e-12,
        )

    def test_unknown_method_is_rejected(self, rng):
        design = make_design(rng, 10, [1])
        cache = build_cache(design, rng.normal(size=10), gaussian(1.0))
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        scorer = me.ModelScorer(cache, gaussian(1.0), prior, method="bogus")
        with pytest.raises(ValueError):
            scorer.log_ml((1,))

    def test_refined_method_string_carries_the_step_count(self, rng):
        design = make_design(rng, 40, [1], intercept=True)
        y = (rng.random(40) < 0.5).astype(np.float64)
        cache = build_cache(design, y, logistic())
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        scorer = me.ModelScorer(
            cache, logistic(), prior, method="ala-refined", refine_steps=2
        )
        direct = me.ala_refined(design.model((1, 1)), cache, logistic(), prior, k=2)
        np.testing.assert_allclose(
            scorer.log_ml((1, 1)), direct.log_ml, atol=1e-12
        )

    def test_survival_scorer_memoizes_and_scores(self, rng):
        design, data = _survival_sample(rng)
        ctx = me.build_aft_context(design, data)
        prior = ParamPriorSpec(kind="gzellner", g=1.0, phi_prior=(0.01, 0.01))
        scorer = me.AftScorer(ctx, prior)
        assert scorer.marginal((1, 0, 0)) is scorer.marginal((1, 0, 0))
        direct = me.ala_aft(design.model((1, 0, 0)), ctx, prior)
        np.testing.assert_allclose(scorer.log_ml((1, 0, 0)), direct.log_ml, atol=1e-12)


class TestScalingBehavior:
    """Per-model scoring cost must not grow with the sample size once the
    cross products are cached."""

    def test_score_depends_on_data_only_through_the_cached_statistics(self, rng):
        """Two data sets with identical sufficient statistics get identical
        scores, demonstrating that the engine reads nothing else."""
        design = make_design(rng, 64, [1, 1])
        y = rng.normal(size=64)
        cache = build_cache(design, y, gaussian(1.0))
        prior = ParamPriorSpec(kind="gzellner", g=1.0)
        bits = (1, 1)
        score = me.ala_expfam_known_phi(design.model(bits), cache, gaussian(1.0), prior)

        # rotate the raw data by an orthogonal matrix: Z'Z, Z'y, y'y survive
        q, _ = np.linalg.qr(rng.normal(size=(64, 64)))
        design_rot = DesignMatrix(q @ design.values, design.groups)
        cache_rot = build_cache(design_rot, q @ y, gaussian(1.0))
        score_rot = me.ala_expfam_known_phi(
            design_rot.model(bits), cache_rot, gaussian(1.0), prior
        )
        np.testing.assert_allclose(score.log_ml, score_rot.log_ml, atol=1e-8)
