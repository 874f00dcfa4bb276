import json
import os
import unittest
from tempfile import TemporaryDirectory

import numpy as np

from causaltools.cbiv.errors import (ConfigurationError,
                                     PreconditionViolationError)
from causaltools.cbiv.toydgp import (ToyDGP, fixture_path, load_toy_dgp,
                                     verify_inverse_identity)


def _load(name):
    return load_toy_dgp(fixture_path(name))


class FixtureTest(unittest.TestCase):

    def test_additive(self):
        toy = _load("additive.json")
        np.testing.assert_array_equal(toy.g2, 0.0)
        self.assertLessEqual(verify_inverse_identity(toy), 1e-12)

    def test_multiplicative(self):
        toy = _load("multiplicative.json")
        np.testing.assert_array_equal(toy.g3, [1.0, 4.0])
        self.assertLessEqual(verify_inverse_identity(toy), 1e-12)

    def test_broken_is_rejected(self):
        with self.assertRaises(PreconditionViolationError):
            verify_inverse_identity(_load("broken.json"))

    def test_probability_tables(self):
        for name in ("additive.json", "multiplicative.json", "broken.json"):
            toy = _load(name)
            self.assertAlmostEqual(toy.z_probs.sum(), 1.0)
            self.assertAlmostEqual(toy.xu_probs.sum(), 1.0)
            p = toy.treatment_probability()
            self.assertTrue(np.all((p >= 0) & (p <= 1)))


class ValidationTest(unittest.TestCase):

    def setUp(self):
        with open(fixture_path("multiplicative.json")) as f:
            self.data = json.load(f)

    def test_probabilities_must_sum_to_one(self):
        self.data["z_probabilities"] = [0.5, 0.6]
        with self.assertRaises(ConfigurationError):
            ToyDGP.from_dict(self.data)

    def test_table_shapes(self):
        self.data["g4"] = [[0.0, 1.0]]
        with self.assertRaises(ConfigurationError):
            ToyDGP.from_dict(self.data)

    def test_treatment_probability_range(self):
        self.data["f2"] = [[0.9, 0.9], [0.9, 0.9]]
        with self.assertRaises(ConfigurationError):
            ToyDGP.from_dict(self.data)

    def test_missing_table(self):
        del self.data["g1"]
        with self.assertRaises(ConfigurationError):
            ToyDGP.from_dict(self.data)

    def test_load_from_path(self):
        with TemporaryDirectory() as tmp_dir:
            path = os.path.join(tmp_dir, "toy.json")
            with open(path, "w") as f:
                json.dump(self.data, f)
            self.assertEqual(load_toy_dgp(path).name, "multiplicative")
