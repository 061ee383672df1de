import numpy as np
import pytest

from ssvae.models import build_finite_ssm, row_logits, theta_dim


def random_model(rng, K=None, V=None, scale=1.2):
    K = K or int(rng.integers(2, 5))
    V = V or int(rng.integers(2, 4))
    theta = rng.uniform(-scale, scale, theta_dim(K, V))
    return build_finite_ssm(theta, K, V)


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


@pytest.fixture
def well_specified_model():
    """K=2, V=2 model with mild persistence and informative emissions."""
    theta = np.concatenate(
        [
            row_logits([0.7, 0.3]),
            row_logits([0.3, 0.7]),
            row_logits([0.8, 0.2]),
            row_logits([0.2, 0.8]),
            row_logits([0.5, 0.5]),
        ]
    )
    return build_finite_ssm(theta, 2, 2)
