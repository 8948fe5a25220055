"""Tests for decoy-state observables, bounds and the decoy key rate."""
import math
import random

import pytest

from mpqkd.decoy import (
    DecoyConfig,
    DecoyObservables,
    ObservablesInconsistentError,
    PairIntensityVector,
    bound_single_photon,
    decoy_config_for,
    decoy_key_rate,
    expected_observables,
    pair_intensity_prior,
    poisson_pair_prob,
    posterior_intensity_given_photons,
    single_photon_z_error_yield,
    single_photon_z_yield,
)
from mpqkd.model import SystemParams, key_rate, make_scenario


def reference_scenario():
    return make_scenario(100.0, 150.0, 0.2402, 0.7594, 1e6, nu_a=0.05, nu_b=0.05)


class TestConfig:
    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ValueError):
            DecoyConfig(0.5, 0.5, 0.05, 0.05, 0.5, 0.1, 0.5)

    def test_nu_below_mu(self):
        with pytest.raises(ValueError):
            DecoyConfig(0.5, 0.5, 0.6, 0.05, 0.5, 0.1, 0.4)

    def test_half_mu_decoy_rejected_as_ambiguous(self):
        with pytest.raises(ValueError):
            DecoyConfig(0.5, 0.5, 0.25, 0.05, 0.5, 0.1, 0.4)

    def test_cutoff_floor(self):
        with pytest.raises(ValueError):
            DecoyConfig(0.5, 0.5, 0.05, 0.05, 0.5, 0.1, 0.4, k_max=1)

    def test_z_settings_exclude_vacuum_vacuum(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 0.5, 0.1, 0.4)
        settings = cfg.z_settings()
        assert PairIntensityVector(0.0, 0.0) not in settings
        assert len(settings) == 8

    def test_x_settings_mirror_z_structure(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 0.5, 0.1, 0.4)
        settings = cfg.x_settings()
        assert PairIntensityVector(0.0, 0.0) not in settings
        assert PairIntensityVector(1.0, 1.0) in settings
        assert len(settings) == 8


class TestPrior:
    def test_all_vacuum(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 1.0, 0.0, 0.0)
        prior = pair_intensity_prior(cfg)
        assert prior[PairIntensityVector(0.0, 0.0)] == 1.0
        assert sum(prior.values()) == pytest.approx(1.0, abs=1e-15)

    def test_uniform_orderings_counted(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 1 / 3, 1 / 3, 1 / 3)
        prior = pair_intensity_prior(cfg)
        # nu + mu arises from two orderings per party
        value = prior[PairIntensityVector(0.55, 0.55)]
        assert value == pytest.approx((2.0 / 9.0) ** 2, rel=1e-12)

    def test_double_signal_mass(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 0.25, 0.25, 0.5)
        prior = pair_intensity_prior(cfg)
        assert prior[PairIntensityVector(1.0, 1.0)] == pytest.approx(0.5**4, rel=1e-12)

    def test_normalization_random_configs(self):
        rng = random.Random(5)
        for _ in range(20):
            s_mu = rng.uniform(0.1, 0.8)
            s_nu = rng.uniform(0.0, 1.0 - s_mu)
            cfg = DecoyConfig(0.6, 0.4, 0.11, 0.07, 1.0 - s_mu - s_nu, s_nu, s_mu)
            assert sum(pair_intensity_prior(cfg).values()) == pytest.approx(1.0, abs=1e-12)


class TestPoissonPair:
    def test_vacuum_emits_nothing(self):
        vec = PairIntensityVector(0.0, 0.0)
        assert poisson_pair_prob((0, 0), vec) == 1.0
        assert poisson_pair_prob((1, 0), vec) == 0.0

    def test_single_photon_pair(self):
        vec = PairIntensityVector(0.1, 0.1)
        assert poisson_pair_prob((1, 1), vec) == pytest.approx(
            math.exp(-0.2) * 0.01, rel=1e-12
        )

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            poisson_pair_prob((-1, 0), PairIntensityVector(0.1, 0.1))

    def test_normalization_within_cutoff(self):
        # posterior normalization support: mass within k <= 20 for sums <= 1
        vec = PairIntensityVector(1.0, 0.5)
        total = sum(
            poisson_pair_prob((k_a, k_b), vec) for k_a in range(21) for k_b in range(21)
        )
        assert total >= 1.0 - 1e-12


class TestPosterior:
    def test_vacuum_only_config(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 1.0, 0.0, 0.0)
        post = posterior_intensity_given_photons((0, 0), cfg)
        assert post[PairIntensityVector(0.0, 0.0)] == pytest.approx(1.0, abs=1e-15)

    def test_normalization(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 1 / 3, 1 / 3, 1 / 3)
        for k in ((0, 0), (1, 1), (2, 0), (3, 4)):
            post = posterior_intensity_given_photons(k, cfg)
            assert sum(post.values()) == pytest.approx(1.0, abs=1e-12)

    def test_zero_likelihood_settings_eliminated(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 1 / 3, 1 / 3, 1 / 3)
        post = posterior_intensity_given_photons((1, 1), cfg)
        vacuum_a = sum(v for vec, v in post.items() if vec.sum_a == 0.0)
        assert vacuum_a == 0.0

    def test_unreachable_photons_rejected(self):
        cfg = DecoyConfig(0.5, 0.5, 0.05, 0.05, 1.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            posterior_intensity_given_photons((1, 0), cfg)


class TestObservables:
    def test_blackout_channel_gives_zero(self):
        params = SystemParams(p_d=0.0)
        sc = make_scenario(8000.0, 8000.0, 0.5, 0.5, 1e6, params, nu_a=0.05, nu_b=0.05)
        obs = expected_observables(sc, decoy_config_for(sc))
        assert all(v < 1e-30 for v in obs.z_total.values())
        assert all(v < 1e-30 for v in obs.x_total.values())

    def test_errors_bounded_by_totals(self):
        sc = reference_scenario()
        obs = expected_observables(sc, decoy_config_for(sc))
        for vec, total in obs.z_total.items():
            assert 0.0 <= obs.z_error[vec] <= total
        for vec, total in obs.x_total.items():
            assert 0.0 <= obs.x_error[vec] <= total

    def test_mismatched_config_rejected(self):
        sc = reference_scenario()
        cfg = DecoyConfig(0.3, 0.3, 0.05, 0.05, 0.4995, 0.001, 0.4995)
        with pytest.raises(ValueError):
            expected_observables(sc, cfg)

    def test_closed_form_cross_check(self):
        # totals have closed forms via Poisson smearing of the yields
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        obs = expected_observables(sc, cfg)
        p_d = sc.params.p_d

        def click(x, y):
            return -math.expm1(-sc.eta_a * x - sc.eta_b * y) + 2.0 * p_d * math.exp(
                -sc.eta_a * x - sc.eta_b * y
            )

        for vec, total in obs.z_total.items():
            expected = 0.5 * (
                click(0, 0) * click(vec.sum_a, vec.sum_b)
                + click(vec.sum_a, 0) * click(0, vec.sum_b)
            )
            assert total == pytest.approx(expected, rel=1e-9)
            assert obs.z_error[vec] == pytest.approx(
                0.5 * click(0, 0) * click(vec.sum_a, vec.sum_b), rel=1e-9
            )
        for vec, total in obs.x_total.items():
            expected = click(vec.sum_a / 2.0, vec.sum_b / 2.0) ** 2
            assert total == pytest.approx(expected, rel=1e-9)

    def test_forward_model_matches_analytic_intermediates(self):
        # the signal-setting observables reproduce the analytic Z-pair ratio
        # normalization: e_z equals the error/total ratio at (mu_a, mu_b)
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        obs = expected_observables(sc, cfg)
        breakdown = key_rate(sc)
        signal = cfg.signal_vector()
        assert obs.z_error[signal] / obs.z_total[signal] == pytest.approx(
            breakdown.e_z, rel=1e-9
        )
        # and the Poisson-weighted single-photon share reproduces q_bar
        q_bar = (
            poisson_pair_prob((1, 1), signal)
            * single_photon_z_yield(sc)
            / obs.z_total[signal]
        )
        assert q_bar == pytest.approx(breakdown.q_bar_11, rel=1e-9)

    def test_observable_constructor_rejects_error_above_total(self):
        vec = PairIntensityVector(0.5, 0.5)
        with pytest.raises(ValueError):
            DecoyObservables({vec: 1e-9}, {vec: 2e-9}, {}, {})


class TestBounds:
    def test_bracketing_reference_point(self):
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
        assert 0.0 < bounds.m_z_11_lower <= single_photon_z_yield(sc)
        assert bounds.e_z_11_upper >= single_photon_z_error_yield(sc)
        assert bounds.m_z_11_lower / single_photon_z_yield(sc) > 0.9

    def test_per_setting_projection(self):
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
        signal = cfg.signal_vector()
        assert bounds.m_z_11_lower_by_setting[signal] == pytest.approx(
            poisson_pair_prob((1, 1), signal) * bounds.m_z_11_lower, rel=1e-12
        )

    def test_two_intensity_config_gives_trivial_bound(self):
        sc = make_scenario(100.0, 150.0, 0.24, 0.76, 1e6)
        cfg = decoy_config_for(sc, s_nu=0.0)
        bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
        assert bounds.m_z_11_lower == 0.0

    def test_weaker_decoy_tightens_bound(self):
        gaps = {}
        for frac in (0.4, 0.1):
            sc = make_scenario(
                100.0, 150.0, 0.24, 0.76, 1e6, nu_a=0.24 * frac, nu_b=0.76 * frac
            )
            cfg = decoy_config_for(sc)
            bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
            gaps[frac] = single_photon_z_yield(sc) - bounds.m_z_11_lower
        assert gaps[0.1] <= gaps[0.4]

    def test_inconsistent_observables_raise(self):
        # a near-zero signal observable cannot coexist with a large decoy
        # one: the shared photon-class yields couple the settings
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        obs = expected_observables(sc, cfg)
        signal = cfg.signal_vector()
        totals = dict(obs.z_total)
        errors = dict(obs.z_error)
        totals[signal] = totals[signal] * 1e-6
        errors[signal] = 0.0
        corrupted = DecoyObservables(totals, errors, dict(obs.x_total), dict(obs.x_error))
        with pytest.raises(ObservablesInconsistentError):
            bound_single_photon(corrupted, cfg)

    def test_bracketing_randomized(self):
        rng = random.Random(11)
        for _ in range(6):
            d_a = rng.uniform(40, 120)
            sc = make_scenario(
                d_a,
                d_a + rng.uniform(0, 80),
                rng.uniform(0.15, 0.9),
                rng.uniform(0.15, 0.9),
                1e6,
            )
            sc = make_scenario(
                sc.link_a.distance_km,
                sc.link_b.distance_km,
                sc.mu_a,
                sc.mu_b,
                1e6,
                nu_a=sc.mu_a * rng.uniform(0.08, 0.4),
                nu_b=sc.mu_b * rng.uniform(0.08, 0.4),
            )
            cfg = decoy_config_for(sc)
            bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
            assert bounds.m_z_11_lower <= single_photon_z_yield(sc) * (1 + 1e-9)
            assert bounds.e_z_11_upper >= single_photon_z_error_yield(sc) * (1 - 1e-9)


class TestDecoyKeyRate:
    def test_maximal_phase_error_clamps_to_zero(self):
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
        forced = type(bounds)(
            **{
                **bounds.__dict__,
                "phase_error_upper": 0.5,
            }
        )
        assert decoy_key_rate(forced, 1e-5, 0.0, sc.params) == 0.0

    def test_degenerate_x_bound_gives_zero(self):
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
        degenerate = type(bounds)(**{**bounds.__dict__, "phase_error_upper": None})
        assert decoy_key_rate(degenerate, 1e-5, 0.0, sc.params) == 0.0

    def test_zero_observed_error_drops_correction_term(self):
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
        phase_error = min(bounds.phase_error_upper, 0.5)
        expected = 1e-5 * bounds.q_bar_lower * (
            1.0 - (-phase_error * math.log2(phase_error)
                   - (1 - phase_error) * math.log2(1 - phase_error))
        )
        assert decoy_key_rate(bounds, 1e-5, 0.0, sc.params) == pytest.approx(
            expected, rel=1e-12
        )

    def test_never_exceeds_analytic_rate(self):
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
        breakdown = key_rate(sc)
        rate = decoy_key_rate(bounds, breakdown.r_p * breakdown.r_s, breakdown.e_z, sc.params)
        assert rate <= breakdown.rate + 1e-12
        # the bounds are tight enough to certify a usable fraction here
        assert rate > 0.25 * breakdown.rate

    def test_rejects_out_of_range_observations(self):
        sc = reference_scenario()
        cfg = decoy_config_for(sc)
        bounds = bound_single_photon(expected_observables(sc, cfg), cfg)
        with pytest.raises(ValueError):
            decoy_key_rate(bounds, -0.1, 0.0, sc.params)
        with pytest.raises(ValueError):
            decoy_key_rate(bounds, 0.1, 1.5, sc.params)
