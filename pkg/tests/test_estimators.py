import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from bonuswalk.bms import PRESETS, class_probability, load_preset, transition_matrices
from bonuswalk.errors import UnreachableState, ValidationError
from bonuswalk.estimators import (
    ClassTenureObservation,
    QuadratureConfig,
    estimate_method1,
    estimate_method1_curve,
    estimate_method2,
    estimate_method3,
    prior_quadrature,
)
from bonuswalk.gamma_poisson import GammaPrior, gamma_pdf

REFERENCE_PRIORS = [GammaPrior(1.2, 19), GammaPrior(1.8, 12)]


def trapezoid_posterior_mean(spec, prior, class_index, t, nodes=100_000):
    """Posterior mean by a fine trapezoid rule in u = lambda**alpha.

    In ``u`` the prior factor lambda**(alpha-1) d lambda becomes du / alpha,
    so the integrand is bounded and the trapezoid rule converges.
    """
    a, b = prior.alpha, prior.beta
    lam_max = prior.quantile(1 - 1e-15)
    u = np.linspace(0.0, lam_max**a, nodes)
    lam = u ** (1.0 / a)
    like = np.empty(nodes)
    for lo in range(0, nodes, 10_000):
        mats = transition_matrices(spec, lam[lo : lo + 10_000])
        like[lo : lo + 10_000] = np.linalg.matrix_power(mats, t)[:, spec.initial_index - 1, class_index - 1]
    f = like * np.exp(-b * lam)
    return np.trapezoid(lam * f, u) / np.trapezoid(f, u)


def quad_posterior_mean(spec, prior, class_index, t):
    def f(lam):
        return class_probability(spec, lam, t)[class_index - 1] * gamma_pdf(prior, lam)

    upper = prior.quantile(1 - 1e-14)
    num = integrate.quad(lambda x: x * f(x), 0, upper, limit=500, epsabs=0, epsrel=1e-12)[0]
    den = integrate.quad(f, 0, upper, limit=500, epsabs=0, epsrel=1e-12)[0]
    return num / den


class TestQuadratureConfig:
    @pytest.mark.parametrize("kw", [{"node_count": 8}, {"upper_quantile": 0.5}, {"scheme": "simpson"}])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            QuadratureConfig(**kw)

    @pytest.mark.parametrize("prior", REFERENCE_PRIORS + [GammaPrior(0.5, 3)])
    def test_rule_integrates_prior_moments(self, prior):
        x, w = prior_quadrature(prior)
        assert w.sum() == pytest.approx(1.0, abs=1e-9)
        assert (w * x).sum() == pytest.approx(prior.mean, rel=1e-8)
        assert (w * x * x).sum() == pytest.approx(prior.variance + prior.mean**2, rel=1e-8)

    def test_legendre_scheme_is_available_but_coarse(self, hungarian):
        obs = ClassTenureObservation(8, 3)
        gl = estimate_method1(hungarian, REFERENCE_PRIORS[0], obs, QuadratureConfig(scheme="gauss-legendre"))
        assert gl == pytest.approx(1.2 / 22, rel=1e-3)


class TestMethod1:
    @pytest.mark.parametrize("name", PRESETS)
    @pytest.mark.parametrize("prior", REFERENCE_PRIORS)
    def test_t0_returns_prior_mean(self, name, prior):
        spec = load_preset(name)
        est = estimate_method1(spec, prior, ClassTenureObservation(spec.initial_index, 0))
        assert est == pytest.approx(prior.mean, rel=1e-8)

    def test_one_claim_free_year(self, hungarian):
        prior = REFERENCE_PRIORS[0]
        est = estimate_method1(hungarian, prior, ClassTenureObservation(6, 1))
        assert est == pytest.approx(1.2 / 20, rel=1e-8)

    def test_against_fine_trapezoid(self, hungarian):
        prior = REFERENCE_PRIORS[0]
        oracle = trapezoid_posterior_mean(hungarian, prior, 15, 30)
        est = estimate_method1(hungarian, prior, ClassTenureObservation(15, 30))
        assert est == pytest.approx(oracle, rel=1e-6)

    def test_unreachable(self, hungarian):
        with pytest.raises(UnreachableState, match="B10"):
            estimate_method1(hungarian, REFERENCE_PRIORS[0], ClassTenureObservation(15, 1))

    def test_class_out_of_range(self, hungarian):
        with pytest.raises(ValidationError):
            estimate_method1(hungarian, REFERENCE_PRIORS[0], ClassTenureObservation(16, 1))

    @pytest.mark.parametrize("name", PRESETS)
    @pytest.mark.parametrize("prior", REFERENCE_PRIORS)
    def test_claim_free_ascent_is_conjugate(self, name, prior):
        spec = load_preset(name)
        for m in range(1, spec.n_classes - spec.initial_index):
            est = estimate_method1(spec, prior, ClassTenureObservation(spec.initial_index + m, m))
            assert est == pytest.approx(prior.alpha / (prior.beta + m), rel=1e-8)


class TestMethod1Curve:
    def test_first_year_reachability(self, hungarian):
        curve = estimate_method1_curve(hungarian, REFERENCE_PRIORS[0], 1)
        reachable = np.flatnonzero(curve.reachable[1]) + 1
        assert reachable.tolist() == [1, 3, 6]
        assert not curve.reachable[1, 14]
        with pytest.raises(UnreachableState):
            curve.estimate(15, 1)

    @pytest.mark.parametrize("name", PRESETS)
    def test_cells_match_single_estimates(self, name):
        spec = load_preset(name)
        prior = REFERENCE_PRIORS[1]
        curve = estimate_method1_curve(spec, prior, 12)
        for t in (1, 5, 12):
            for c in range(1, spec.n_classes + 1, 3):
                if curve.reachable[t, c - 1]:
                    single = estimate_method1(spec, prior, ClassTenureObservation(c, t))
                    assert curve.estimate(c, t) == pytest.approx(single, rel=1e-11)

    def test_horizon_must_be_positive(self, hungarian):
        with pytest.raises(ValidationError):
            estimate_method1_curve(hungarian, REFERENCE_PRIORS[0], 0)

    @pytest.mark.parametrize("prior", REFERENCE_PRIORS)
    def test_brazilian_curves_ordered_once_settled(self, prior):
        values = estimate_method1_curve(load_preset("brazilian"), prior, 100).values
        for t in range(7, 101):
            assert np.all(np.diff(values[t]) <= 1e-15)

    def test_hungarian_curves_are_not_ordered(self, hungarian):
        # a better class can carry a higher estimate: after 30 years B8
        # (class 13) is below B9 (class 14); confirmed by adaptive quadrature
        prior = REFERENCE_PRIORS[0]
        curve = estimate_method1_curve(hungarian, prior, 30)
        b8, b9 = curve.estimate(13, 30), curve.estimate(14, 30)
        assert b8 < b9
        assert b8 == pytest.approx(quad_posterior_mean(hungarian, prior, 13, 30), rel=1e-8)
        assert b9 == pytest.approx(quad_posterior_mean(hungarian, prior, 14, 30), rel=1e-8)

    @pytest.mark.parametrize("name", PRESETS)
    @pytest.mark.parametrize("prior", REFERENCE_PRIORS)
    def test_node_doubling(self, name, prior):
        spec = load_preset(name)
        a = estimate_method1_curve(spec, prior, 30, QuadratureConfig(256)).values
        b = estimate_method1_curve(spec, prior, 30, QuadratureConfig(512)).values
        ok = ~np.isnan(a)
        np.testing.assert_array_equal(ok, ~np.isnan(b))
        assert np.max(np.abs(a[ok] - b[ok]) / b[ok]) < 1e-7

    @pytest.mark.parametrize("name", PRESETS)
    def test_curves_flatten(self, name):
        values = estimate_method1_curve(load_preset(name), REFERENCE_PRIORS[0], 100).values
        steps = np.abs(np.diff(values, axis=0))
        assert np.all(np.nanmin(steps, axis=0) < 1e-4)

    def test_csv_export(self, hungarian, tmp_path):
        curve = estimate_method1_curve(hungarian, REFERENCE_PRIORS[0], 2)
        path = tmp_path / "curve.csv"
        curve.to_csv(path, header_comment="run_id: abc")
        lines = path.read_text().splitlines()
        assert lines[0] == "# run_id: abc"
        rows = list(csv.DictReader(lines[1:]))
        assert len(rows) == 15 * 3
        assert rows[0] == {"class_label": "M4", "year": "0", "lambda_hat": "", "reachable": "false"}
        a0 = [r for r in rows if r["class_label"] == "A0" and r["year"] == "0"][0]
        assert float(a0["lambda_hat"]) == pytest.approx(1.2 / 19, rel=1e-8)


class TestMethod2:
    def test_five_policy_class(self):
        table = estimate_method2([(4, k) for k in (0, 1, 0, 0, 2)])
        assert table[4].value == 0.6
        assert table[4].count == 5 and not table[4].fallback

    def test_single_zero(self):
        assert estimate_method2([(2, 0)])[2].value == 0.0

    def test_empty_class_fallback(self):
        prior = GammaPrior(1.2, 19)
        table = estimate_method2([(1, 1)], n_classes=3, fallback_prior=prior)
        assert table[2].value == 1.2 / 19 and table[2].fallback
        assert table[3].fallback and not table[1].fallback

    def test_fallback_needs_prior(self):
        with pytest.raises(ValidationError):
            estimate_method2([(1, 1)], n_classes=2)


class TestMethod3:
    def test_prior_mean_at_zero_exposure(self):
        assert estimate_method3(GammaPrior(1.2, 19), 0, 0) == pytest.approx(0.0631578947368421)

    def test_values(self):
        prior = GammaPrior(1.2, 19)
        assert estimate_method3(prior, 2, 3) == pytest.approx(3.2 / 22, rel=1e-15)
        assert estimate_method3(prior, 2, 2.5) == pytest.approx(3.2 / 21.5, rel=1e-15)

    def test_vectorized(self):
        out = estimate_method3(GammaPrior(2, 4), np.array([0, 1]), np.array([1.0, 2.0]))
        np.testing.assert_allclose(out, [2 / 5, 3 / 6])

    def test_negative(self):
        with pytest.raises(ValidationError):
            estimate_method3(GammaPrior(2, 4), -1, 1)

    @given(
        alpha=st.floats(0.1, 20),
        beta=st.floats(0.1, 50),
        x=st.integers(0, 30),
        t=st.floats(0.1, 40),
    )
    def test_shrinks_between_prior_and_data(self, alpha, beta, x, t):
        est = estimate_method3(GammaPrior(alpha, beta), x, t)
        lo, hi = sorted((alpha / beta, x / t))
        if math.isclose(lo, hi, rel_tol=1e-9):
            return
        assert lo < est < hi
