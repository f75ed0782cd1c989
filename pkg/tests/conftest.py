import numpy as np
import pytest

from fedledger import Batch, RngStream, init_params, mlp_layout


def random_instance(seed, input_dim=None, hidden_dim=None, num_classes=None, n=None):
    """Random (params, batch) pair with small, varied dimensions."""
    rng = np.random.default_rng(seed)
    input_dim = input_dim or int(rng.integers(2, 9))
    hidden_dim = hidden_dim or int(rng.integers(2, 13))
    num_classes = num_classes or int(rng.integers(2, 7))
    n = n or int(rng.integers(1, 9))
    layout = mlp_layout(input_dim, hidden_dim, num_classes)
    params = init_params(layout, RngStream(seed, "params"))
    batch = Batch(
        rng.standard_normal((n, input_dim)),
        rng.integers(0, num_classes, n),
    )
    return params, batch


@pytest.fixture
def small_instance():
    return random_instance(7, input_dim=4, hidden_dim=6, num_classes=3, n=5)
