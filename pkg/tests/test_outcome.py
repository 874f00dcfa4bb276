import unittest

import numpy as np

from causaltools.cbiv.datagen import (Dataset, DemandConfig, SynConfig,
                                      TreatmentKind, demand_eval_grid,
                                      generate_demand, generate_syn)
from causaltools.cbiv.errors import ConfigurationError, StateError
from causaltools.cbiv.numerics import OptimState
from causaltools.cbiv.outcome import (EstimatorFlags, OutcomeModel,
                                      counterfactual_mse, estimate_ate,
                                      mixed_outcome_loss,
                                      predict_counterfactual, train_outcome)
from causaltools.cbiv.treatreg import (InputMode, Stage1Columns,
                                       Stage2Columns, TreatmentModel,
                                       TreatmentModelKind, train_treatment)

CONVENTIONAL = InputMode(Stage1Columns.Z_AND_X, Stage2Columns.X_ONLY)
SMALL = dict(rep_hidden=(16, ), rep_width=8, head_hidden=(16, ))


def randomized(n=2000, effect=2.0, seed=0):
    """Binary treatment assigned by coin flip, no confounding."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    t = rng.integers(0, 2, size=n).astype(float)
    y = x[:, 0] + effect * t + 0.1 * rng.standard_normal(n)
    return Dataset(np.zeros((n, 0)), x, t, y, TreatmentKind.BINARY)


class MixedLossTest(unittest.TestCase):

    def test_gradient_split_by_propensity(self):
        h0 = np.array([0.0, 1.0])
        h1 = np.array([2.0, 3.0])
        p1 = np.array([0.25, 0.5])
        y = np.array([1.0, 1.0])
        loss, d0, d1 = mixed_outcome_loss(h0, h1, p1, y)
        resid = np.array([0.5 - 1.0, 2.0 - 1.0])
        self.assertAlmostEqual(loss, np.mean(resid**2))
        np.testing.assert_allclose(d0, resid * (1 - p1))
        np.testing.assert_allclose(d1, resid * p1)

    def test_exact_fit_has_no_loss(self):
        rng = np.random.default_rng(0)
        mu0 = rng.standard_normal(20)
        mu1 = mu0 + rng.standard_normal(20)
        t = rng.integers(0, 2, size=20).astype(float)
        loss, d0, d1 = mixed_outcome_loss(mu0, mu1, t, np.where(t == 1, mu1,
                                                                mu0))
        self.assertEqual(loss, 0.0)
        np.testing.assert_array_equal(d0, 0.0)
        np.testing.assert_array_equal(d1, 0.0)


def constant_heads(model, values):
    """Zeroes the last layer of every head so it outputs a fixed value."""
    for head, value in zip(model.heads, values):
        last = head.spec.n_layers - 1
        head.params[f"weight{last}"][:] = 0.0
        head.params[f"bias{last}"][:] = value
    model.trained = True
    return model


class ConstantHeadsTest(unittest.TestCase):

    def setUp(self):
        self.ds = randomized(n=50)
        self.model = OutcomeModel.create(TreatmentKind.BINARY,
                                         2,
                                         CONVENTIONAL,
                                         seed=0,
                                         **SMALL)

    def test_unit_effect(self):
        model = constant_heads(self.model, (0.0, 1.0))
        untreated = predict_counterfactual(model, self.ds, 0)
        treated = predict_counterfactual(model, self.ds, 1)
        np.testing.assert_array_equal(untreated, 0.0)
        np.testing.assert_array_equal(treated, 1.0)
        self.assertEqual(estimate_ate(model, self.ds), 1.0)

    def test_identical_heads(self):
        model = constant_heads(self.model, (2.5, 2.5))
        self.assertEqual(estimate_ate(model, self.ds), 0.0)


class BinaryOutcomeTest(unittest.TestCase):

    def test_plain_recovers_randomized_effect(self):
        ds = randomized()
        model = OutcomeModel.create(TreatmentKind.BINARY,
                                    2,
                                    CONVENTIONAL,
                                    alpha=0.0,
                                    seed=0,
                                    **SMALL)
        model, trace = train_outcome(ds,
                                     None,
                                     model,
                                     EstimatorFlags(False, False),
                                     800,
                                     128,
                                     OptimState.adam(0.005),
                                     seed=0)
        self.assertEqual(len(trace.outcome), 800)
        self.assertAlmostEqual(estimate_ate(model, ds), 2.0, delta=0.15)

    def test_balanced_training_records_discrepancy(self):
        ds = generate_syn(SynConfig(n=600, seed=0)).without_oracle()
        tm = TreatmentModel.create(TreatmentModelKind.BINARY_LOGISTIC,
                                   6,
                                   CONVENTIONAL,
                                   hidden=(16, ),
                                   seed=0)
        tm, _ = train_treatment(ds, tm, 2, 100, OptimState.sgd(0.05), seed=0)
        model = OutcomeModel.create(TreatmentKind.BINARY,
                                    4,
                                    CONVENTIONAL,
                                    alpha=0.1,
                                    seed=0,
                                    **SMALL)
        model, trace = train_outcome(ds, tm, model, EstimatorFlags(), 30, 64,
                                     OptimState.adam(0.001), seed=0)
        self.assertIsNotNone(trace.final_discrepancy)
        self.assertGreaterEqual(trace.final_discrepancy, 0.0)
        self.assertTrue(any(b > 0 for b in trace.balance))
        np.testing.assert_allclose(
            trace.total,
            np.array(trace.outcome) + 0.1 * np.array(trace.balance))

    def test_same_seed_same_model(self):
        ds = randomized(n=300)

        def fit():
            model = OutcomeModel.create(TreatmentKind.BINARY,
                                        2,
                                        CONVENTIONAL,
                                        alpha=0.0,
                                        seed=3,
                                        **SMALL)
            model, _ = train_outcome(ds, None, model,
                                     EstimatorFlags(False, False), 20, 32,
                                     OptimState.adam(0.01), seed=3)
            return estimate_ate(model, ds)

        self.assertEqual(fit(), fit())

    def test_row_permutation(self):
        ds = randomized(n=300)
        model = OutcomeModel.create(TreatmentKind.BINARY,
                                    2,
                                    CONVENTIONAL,
                                    alpha=0.0,
                                    seed=1,
                                    **SMALL)
        model, _ = train_outcome(ds, None, model, EstimatorFlags(False, False),
                                 50, 32, OptimState.adam(0.01), seed=1)
        order = np.random.default_rng(2).permutation(ds.n)
        self.assertAlmostEqual(estimate_ate(model, ds),
                               estimate_ate(model, ds.take(order)),
                               places=10)

    def test_discrepancy_shrinks_with_alpha(self):
        ds = generate_syn(SynConfig(n=600, seed=0)).without_oracle()
        tm = TreatmentModel.create(TreatmentModelKind.BINARY_LOGISTIC,
                                   6,
                                   CONVENTIONAL,
                                   hidden=(16, ),
                                   seed=0)
        tm, _ = train_treatment(ds, tm, 2, 100, OptimState.sgd(0.05), seed=0)
        discrepancy = {}
        for alpha in (0.0, 0.01, 1.0):
            model = OutcomeModel.create(TreatmentKind.BINARY,
                                        4,
                                        CONVENTIONAL,
                                        alpha=alpha,
                                        seed=0,
                                        **SMALL)
            model, trace = train_outcome(ds, tm, model, EstimatorFlags(), 300,
                                         64, OptimState.adam(0.001), seed=0)
            discrepancy[alpha] = trace.final_discrepancy
        self.assertLessEqual(discrepancy[0.01], 1.05 * discrepancy[0.0])
        self.assertLess(discrepancy[1.0], discrepancy[0.01])
        self.assertLess(discrepancy[1.0], discrepancy[0.0])

    def test_iv_needs_treatment_model(self):
        ds = randomized(n=100)
        model = OutcomeModel.create(TreatmentKind.BINARY, 2, CONVENTIONAL,
                                    **SMALL)
        with self.assertRaises(ConfigurationError):
            train_outcome(ds, None, model, EstimatorFlags(), 1, 10,
                          OptimState.adam(0.01))

    def test_untrained_prediction(self):
        ds = randomized(n=10)
        model = OutcomeModel.create(TreatmentKind.BINARY, 2, CONVENTIONAL,
                                    **SMALL)
        with self.assertRaises(StateError):
            predict_counterfactual(model, ds, 1)

    def test_negative_alpha(self):
        with self.assertRaises(ConfigurationError):
            OutcomeModel.create(TreatmentKind.BINARY,
                                2,
                                CONVENTIONAL,
                                alpha=-1.0,
                                **SMALL)


class ContinuousOutcomeTest(unittest.TestCase):

    def test_structural_mse_is_finite(self):
        ds = generate_demand(DemandConfig(n=500, seed=0))
        visible = ds.without_oracle()
        tm = TreatmentModel.create(TreatmentModelKind.CONTINUOUS_MEAN,
                                   3,
                                   CONVENTIONAL,
                                   hidden=(16, ),
                                   seed=0)
        tm, _ = train_treatment(visible, tm, 2, 100, OptimState.sgd(0.005))
        model = OutcomeModel.create(TreatmentKind.CONTINUOUS,
                                    2,
                                    CONVENTIONAL,
                                    alpha=0.1,
                                    seed=0,
                                    **SMALL)
        model, trace = train_outcome(visible, tm, model, EstimatorFlags(),
                                     40, 64, OptimState.adam(0.005), seed=0)
        self.assertIsNotNone(model.club)
        self.assertIsNotNone(trace.final_discrepancy)
        grid = demand_eval_grid(ds.t)
        mse = counterfactual_mse(model, ds, grid)
        self.assertTrue(np.isfinite(mse))
        curve = predict_counterfactual(model, visible, grid[0])
        self.assertEqual(curve.shape, (ds.n, ))

    def test_linear_toy(self):
        rng = np.random.default_rng(0)
        n = 2000
        x = rng.standard_normal((n, 1))
        t = rng.standard_normal(n)
        ds = Dataset(np.zeros((n, 0)), x, t, t + x[:, 0],
                     TreatmentKind.CONTINUOUS)
        train, test = ds.take(np.arange(1600)), ds.take(np.arange(1600, n))
        model = OutcomeModel.create(TreatmentKind.CONTINUOUS,
                                    1,
                                    CONVENTIONAL,
                                    alpha=0.0,
                                    seed=0,
                                    **SMALL)
        model, _ = train_outcome(train, None, model,
                                 EstimatorFlags(False, False), 2000, 128,
                                 OptimState.adam(0.005), seed=0)
        predicted = predict_counterfactual(model, test, test.t)
        self.assertLessEqual(float(np.mean((predicted - test.y)**2)), 0.05)
        slope = np.mean(
            predict_counterfactual(model, test, 1.0) -
            predict_counterfactual(model, test, 0.0))
        self.assertAlmostEqual(slope, 1.0, delta=0.1)

    def test_ate_needs_binary_model(self):
        model = OutcomeModel.create(TreatmentKind.CONTINUOUS, 2,
                                    CONVENTIONAL, **SMALL)
        with self.assertRaises(ConfigurationError):
            estimate_ate(model, generate_demand(DemandConfig(n=10)))
