import unittest

import numpy as np
from scipy.special import logit

from causaltools.cbiv.datagen import (DemandConfig, SynConfig,
                                      generate_demand, generate_syn)
from causaltools.cbiv.errors import DomainError, StateError
from causaltools.cbiv.latent import (LatentConfig, LatentModel,
                                     elbo_and_gradients, extract_latents,
                                     gaussian_log_likelihood,
                                     kl_diag_gaussian, prepare_batch,
                                     train_latent)
from causaltools.cbiv.numerics import OptimState, compare_gradients

SMALL = LatentConfig(m_l=2, m_e=1, epochs=3, batch_size=50, hidden=(8, ))


class KlTest(unittest.TestCase):

    def test_standard_normal_is_zero(self):
        self.assertEqual(kl_diag_gaussian(np.zeros(3), np.ones(3)), 0.0)

    def test_matches_monte_carlo(self):
        mu = np.array([0.5, -1.0])
        sigma = np.array([0.7, 1.3])
        rng = np.random.default_rng(0)
        draws = mu + sigma * rng.standard_normal((1_000_000, 2))
        log_q = -0.5 * (((draws - mu) / sigma)**2).sum(1) - np.log(
            sigma).sum()
        log_p = -0.5 * (draws**2).sum(1)
        self.assertAlmostEqual(kl_diag_gaussian(mu, sigma),
                               float(np.mean(log_q - log_p)),
                               delta=0.01)

    def test_rejects_non_positive_sigma(self):
        with self.assertRaises(DomainError):
            kl_diag_gaussian(np.zeros(2), np.array([1.0, 0.0]))


class GaussianLikelihoodTest(unittest.TestCase):

    def test_at_target_with_unit_scale(self):
        x = np.array([[0.0, 2.5], [-1.0, 7.0]])
        np.testing.assert_allclose(gaussian_log_likelihood(x, x, np.ones(2)),
                                   -0.5 * np.log(2 * np.pi),
                                   atol=1e-12)
        self.assertAlmostEqual(-0.5 * np.log(2 * np.pi), -0.9189, places=4)

    def test_rejects_non_positive_sigma(self):
        with self.assertRaises(DomainError):
            gaussian_log_likelihood(np.zeros(2), np.zeros(2),
                                    np.array([1.0, 0.0]))


class ElboGradientTest(unittest.TestCase):

    def check(self, ds, categories=None):
        model = LatentModel.create(SMALL,
                                   ds.m_x,
                                   ds.treatment_kind,
                                   categories=categories,
                                   seed=0)
        model.fit_scaling(ds)
        batch = prepare_batch(model, ds)
        rng = np.random.default_rng(1)
        noise = rng.standard_normal((ds.n, SMALL.m_l))
        exogenous = rng.standard_normal((ds.n, SMALL.m_e))
        _, grads = elbo_and_gradients(model, batch, noise, exogenous)
        report = compare_gradients(
            model.networks(), lambda: elbo_and_gradients(
                model, batch, noise, exogenous, with_grad=False)[0], grads)
        self.assertTrue(report.passed,
                        msg=f"{report.worst_parameter}: "
                        f"{report.worst_relative_error}")

    def test_binary_treatment(self):
        self.check(generate_syn(SynConfig(n=12, seed=0)).without_oracle())

    def test_continuous_treatment_with_categorical_covariate(self):
        ds = generate_demand(DemandConfig(n=12, seed=0)).without_oracle()
        self.check(ds, categories={0: range(1, 8)})


class TrainLatentTest(unittest.TestCase):

    def test_trace_and_features(self):
        ds = generate_syn(SynConfig(n=300, seed=0)).without_oracle()
        model = LatentModel.create(SMALL, ds.m_x, ds.treatment_kind, seed=0)
        model, trace = train_latent(ds, model, OptimState.adam(0.01), seed=0)
        self.assertEqual(len(trace.elbo), SMALL.epochs + 1)
        self.assertGreater(trace.elbo[-1], trace.elbo[0])
        self.assertEqual(len(trace.warnings), 1)
        features = extract_latents(model, ds)
        self.assertEqual(features.shape, (300, SMALL.m_l + SMALL.m_e))
        np.testing.assert_array_equal(features[:, SMALL.m_l:], 0.0)

    def test_untrained_extraction(self):
        ds = generate_syn(SynConfig(n=20, seed=0))
        model = LatentModel.create(SMALL, ds.m_x, ds.treatment_kind)
        with self.assertRaises(StateError):
            extract_latents(model, ds)

    def test_identical_rows_identical_features(self):
        ds = generate_syn(SynConfig(n=300, seed=0)).without_oracle()
        model = LatentModel.create(SMALL, ds.m_x, ds.treatment_kind, seed=0)
        model, _ = train_latent(ds, model, OptimState.adam(0.01), seed=0)
        repeated = ds.take(np.array([4, 9, 4, 4, 9]))
        features = extract_latents(model, repeated)
        np.testing.assert_array_equal(features[0], features[2])
        np.testing.assert_array_equal(features[0], features[3])
        np.testing.assert_array_equal(features[1], features[4])
        np.testing.assert_array_equal(features, extract_latents(model,
                                                                repeated))

    def test_latents_track_treatment_logit(self):
        ds = generate_syn(SynConfig(m_z=2, m_x=4, m_u=4, n=2000, seed=0))
        cfg = LatentConfig(m_l=5,
                           m_e=1,
                           epochs=20,
                           batch_size=100,
                           hidden=(32, 32))
        model = LatentModel.create(cfg, ds.m_x, ds.treatment_kind, seed=0)
        model, _ = train_latent(ds.without_oracle(),
                                model,
                                OptimState.adam(0.001),
                                seed=0)
        features = extract_latents(model, ds)[:, :cfg.m_l]
        true_logit = logit(ds.oracle.propensity)
        best = max(
            abs(np.corrcoef(features[:, k], true_logit)[0, 1])
            for k in range(cfg.m_l) if np.std(features[:, k]) > 0)
        self.assertGreater(best, 0.3)
