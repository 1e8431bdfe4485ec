import random

import numpy as np
import pytest

from blstmseg.linalg import Rng


def random_words(rnd: random.Random, alphabet: str, n_chars: int, max_word: int = 4) -> list[str]:
    """Random segmentation of a random string of ``n_chars`` characters."""
    words, left = [], n_chars
    while left:
        k = rnd.randint(1, min(max_word, left))
        words.append("".join(rnd.choice(alphabet) for _ in range(k)))
        left -= k
    return words


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)
