import numpy as np
import pytest

from stewart_cbf.dynamics import PlantState, PlatformModel, dynamics_terms


@pytest.fixture
def model():
    return PlatformModel()


def random_state(rng, vel_scale=0.05):
    """Random admissible state: small pose offsets, bounded rates."""
    q = np.concatenate([
        rng.uniform(-0.05, 0.05, 2),
        [rng.uniform(0.36, 0.48)],
        rng.uniform(-0.15, 0.15, 3),
    ])
    qdot = rng.uniform(-vel_scale, vel_scale, 6)
    return PlantState(q=q, qdot=qdot)


def random_filter_instance(rng, model, push=12.0):
    """Random state plus a nominal force that mixes residual signs well."""
    state = random_state(rng)
    dyn = dynamics_terms(state, model)
    force = dyn.J.T @ dyn.G + rng.uniform(-push, push, 6)
    return state, dyn, force


@pytest.fixture
def make_state():
    return random_state
