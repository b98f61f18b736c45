import numpy as np
import pytest

from taml.search_space import SearchSpace, build_space


def make_space(counts) -> SearchSpace:
    return build_space(
        {
            "dimensions": [
                {"name": f"d{i}", "options": [f"o{j}" for j in range(c)]}
                for i, c in enumerate(counts)
            ]
        }
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
