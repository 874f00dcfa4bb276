import unittest

import numpy as np

from causaltools.cbiv.errors import (ConfigurationError,
                                     NumericalFailureError, StateError)
from causaltools.cbiv.numerics import (Activation, MlpModel, MlpSpec,
                                       OptimState, backward, bce_with_logits,
                                       compare_gradients, forward,
                                       gaussian_nll, grad_check, l2_penalty,
                                       mse_loss, optimizer_step)


def _target(rng, rows, width=1):
    return rng.standard_normal((rows, width))


class MlpSpecTest(unittest.TestCase):

    def test_rejects_bad_widths(self):
        with self.assertRaises(ConfigurationError):
            MlpSpec(layer_widths=(), output_width=1)
        with self.assertRaises(ConfigurationError):
            MlpSpec(layer_widths=(3, 0), output_width=1)
        with self.assertRaises(ConfigurationError):
            MlpSpec(layer_widths=(3, ), output_width=1, l2_decay=-1.0)

    def test_layer_shapes(self):
        spec = MlpSpec(layer_widths=(3, 5, 4), output_width=2)
        self.assertEqual(spec.layer_shapes(), [(3, 5), (5, 4), (4, 2)])
        self.assertEqual(spec.n_hidden, 2)
        self.assertEqual(spec.input_width, 3)


class ForwardBackwardTest(unittest.TestCase):

    def test_output_shape(self):
        model = MlpModel.create(MlpSpec((3, 8), 2), seed=0)
        out = forward(model, np.ones((5, 3)))
        self.assertEqual(out.shape, (5, 2))

    def test_backward_needs_forward(self):
        model = MlpModel.create(MlpSpec((3, 8), 1), seed=0)
        with self.assertRaises(StateError):
            backward(model, np.ones((5, 1)))

    def test_backward_shape_mismatch(self):
        model = MlpModel.create(MlpSpec((3, 8), 1), seed=0)
        forward(model, np.ones((5, 3)), training=True)
        with self.assertRaises(StateError):
            backward(model, np.ones((4, 1)))

    def test_non_finite_input(self):
        model = MlpModel.create(MlpSpec((2, 4), 1), seed=0)
        batch = np.array([[np.inf, 0.0], [1.0, 1.0]])
        with self.assertRaises(NumericalFailureError):
            forward(model, batch)

    def test_eval_mode_uses_running_statistics(self):
        spec = MlpSpec((3, 6), 1, use_batchnorm=True)
        model = MlpModel.create(spec, seed=1)
        batch = np.random.default_rng(1).standard_normal((10, 3))
        single = forward(model, batch[:1])
        full = forward(model, batch)
        np.testing.assert_allclose(single[0], full[0])

    def test_input_gradient_matches_differences(self):
        rng = np.random.default_rng(2)
        model = MlpModel.create(MlpSpec((3, 5), 1, Activation.ELU), seed=2)
        batch = rng.standard_normal((4, 3))
        target = _target(rng, 4)
        out = forward(model, batch, training=True)
        _, upstream = mse_loss(out, target)
        grads = backward(model, upstream)
        step = 1e-6
        for i, j in [(0, 0), (2, 1), (3, 2)]:
            plus = batch.copy()
            plus[i, j] += step
            minus = batch.copy()
            minus[i, j] -= step
            numeric = (mse_loss(forward(model, plus), target)[0] -
                       mse_loss(forward(model, minus), target)[0]) / (2 * step)
            self.assertAlmostEqual(grads.inputs[i, j], numeric, places=6)


class GradCheckTest(unittest.TestCase):

    def check(self, spec, rows=6, loss="mse", seed=0):
        rng = np.random.default_rng(seed)
        model = MlpModel.create(spec, seed=seed)
        batch = rng.standard_normal((rows, spec.input_width))
        if loss == "mse":
            target = _target(rng, rows, spec.output_width)
            report = grad_check(model, lambda out: mse_loss(out, target),
                                batch)
        else:
            target = rng.integers(0, 2, size=(rows, 1)).astype(float)
            report = grad_check(model,
                                lambda out: bce_with_logits(out, target),
                                batch)
        self.assertTrue(report.passed,
                        msg=f"{report.worst_parameter}{report.worst_index}: "
                        f"{report.worst_relative_error}")
        self.assertGreater(report.n_checked, 0)
        return report

    def test_elu(self):
        self.check(MlpSpec((3, 6, 5), 2, Activation.ELU))

    def test_relu_reports_kink_distance(self):
        report = self.check(MlpSpec((3, 6), 1, Activation.RELU), seed=3)
        self.assertIsNotNone(report.kink_distance)
        self.assertGreater(report.kink_distance, 1e-5)

    def test_batchnorm(self):
        self.check(
            MlpSpec((4, 5, 3), 1, Activation.ELU, use_batchnorm=True))

    def test_l2_decay(self):
        self.check(MlpSpec((3, 5), 1, Activation.ELU, l2_decay=0.1))

    def test_logistic_loss(self):
        self.check(MlpSpec((3, 4), 1, Activation.ELU), loss="bce")

    def test_batchnorm_statistics_restored(self):
        spec = MlpSpec((3, 4), 1, Activation.ELU, use_batchnorm=True)
        model = MlpModel.create(spec, seed=0)
        batch = np.random.default_rng(0).standard_normal((6, 3))
        target = np.zeros((6, 1))
        before = [m.copy() for m in model.running_mean]
        grad_check(model, lambda out: mse_loss(out, target), batch)
        for a, b in zip(before, model.running_mean):
            np.testing.assert_array_equal(a, b)

    def test_detects_wrong_gradient(self):
        model = MlpModel.create(MlpSpec((2, 3), 1, Activation.ELU), seed=0)
        batch = np.random.default_rng(0).standard_normal((4, 2))

        def objective():
            return float(np.sum(forward(model, batch)**2))

        wrong = {
            "m": {k: np.zeros_like(v)
                  for k, v in model.params.items()}
        }
        report = compare_gradients({"m": model}, objective, wrong)
        self.assertFalse(report.passed)


class OptimizerTest(unittest.TestCase):

    def test_sgd_step(self):
        model = MlpModel.create(MlpSpec((2, ), 1), seed=0)
        before = model.params["weight0"].copy()
        grads = {k: np.ones_like(v) for k, v in model.params.items()}
        _, state = optimizer_step(OptimState.sgd(0.1), model, grads)
        np.testing.assert_allclose(model.params["weight0"], before - 0.1)
        self.assertEqual(state.step, 1)

    def test_adam_first_step_moves_by_learning_rate(self):
        model = MlpModel.create(MlpSpec((2, ), 1), seed=0)
        before = model.params["weight0"].copy()
        grads = {k: 3.0 * np.ones_like(v) for k, v in model.params.items()}
        optimizer_step(OptimState.adam(0.01), model, grads)
        np.testing.assert_allclose(model.params["weight0"],
                                   before - 0.01,
                                   atol=1e-8)

    def test_non_finite_gradient_leaves_model_untouched(self):
        model = MlpModel.create(MlpSpec((2, ), 1), seed=0)
        before = {k: v.copy() for k, v in model.params.items()}
        grads = {k: np.ones_like(v) for k, v in model.params.items()}
        grads["bias0"][0] = np.nan
        state = OptimState.adam(0.1)
        with self.assertRaises(NumericalFailureError):
            optimizer_step(state, model, grads)
        self.assertEqual(state.step, 0)
        for k, v in model.params.items():
            np.testing.assert_array_equal(v, before[k])

    def test_rejects_negative_learning_rate(self):
        with self.assertRaises(ConfigurationError):
            OptimState.sgd(-1.0)

    def test_fits_linear_function(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((200, 2))
        y = x @ np.array([[1.5], [-2.0]]) + 0.5
        model = MlpModel.create(MlpSpec((2, ), 1), seed=0)
        state = OptimState.adam(0.05)
        for _ in range(500):
            out = forward(model, x, training=True)
            _, grad = mse_loss(out, y)
            optimizer_step(state, model, backward(model, grad))
        self.assertLess(mse_loss(forward(model, x), y)[0], 1e-3)


class LossTest(unittest.TestCase):

    def test_l2_penalty(self):
        model = MlpModel.create(MlpSpec((2, ), 1, l2_decay=0.5), seed=0)
        expected = 0.25 * np.sum(model.params["weight0"]**2)
        self.assertAlmostEqual(l2_penalty(model), expected)

    def test_bce_at_zero_logit(self):
        value, _ = bce_with_logits(np.zeros((4, 1)), np.ones((4, 1)))
        self.assertAlmostEqual(value, np.log(2.0))

    def test_gaussian_nll_gradients(self):
        rng = np.random.default_rng(0)
        mean = rng.standard_normal((5, 1))
        raw = rng.standard_normal((5, 1))
        target = rng.standard_normal((5, 1))
        _, grad_mean, grad_raw = gaussian_nll(mean, raw, target)
        step = 1e-6
        bumped = mean.copy()
        bumped[1, 0] += step
        numeric = (gaussian_nll(bumped, raw, target)[0] -
                   gaussian_nll(mean, raw, target)[0]) / step
        self.assertAlmostEqual(grad_mean[1, 0], numeric, places=5)
        bumped = raw.copy()
        bumped[2, 0] += step
        numeric = (gaussian_nll(mean, bumped, target)[0] -
                   gaussian_nll(mean, raw, target)[0]) / step
        self.assertAlmostEqual(grad_raw[2, 0], numeric, places=5)
