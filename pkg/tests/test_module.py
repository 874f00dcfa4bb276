import unittest

import causaltools.cbiv


class TestModule(unittest.TestCase):

    def test_version(self):
        self.assertIsNotNone(causaltools.cbiv.__version__)
