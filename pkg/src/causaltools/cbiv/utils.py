from typing import Iterator, Union

import numpy as np
from scipy.special import expit

from causaltools.cbiv.constants import PROBABILITY_CLIP

Seed = Union[int, np.random.Generator, None]


def make_rng(seed: Seed = None) -> np.random.Generator:
    """Returns a numpy Generator, passing existing generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def clip_probability(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def minibatches(n: int,
                batch_size: int,
                rng: np.random.Generator,
                min_size: int = 2) -> Iterator[np.ndarray]:
    """Yields shuffled row indices covering ``n`` rows once.

    A trailing batch smaller than ``min_size`` is merged into the previous
    one, so every batch can feed batch-norm.

    Args:
        n (int): Number of rows.
        batch_size (int): Target batch size.
        rng (Generator): Source of the shuffle.
        min_size (int): Smallest batch allowed.
    """
    order = rng.permutation(n)
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] < min_size:
        starts.pop()
    for i, start in enumerate(starts):
        stop = starts[i + 1] if i + 1 < len(starts) else n
        yield order[start:stop]


def sample_batch(n: int, batch_size: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Draws one random minibatch of row indices without replacement."""
    return rng.choice(n, size=min(batch_size, n), replace=False)


def as_matrix(values: np.ndarray) -> np.ndarray:
    """Returns ``values`` as a 2-D float array (vectors become a column)."""
    matrix = np.asarray(values, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    return matrix
