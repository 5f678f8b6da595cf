import numpy as np
import pytest

from qst_model.dataset import DatasetConfig, gen_dataset
from qst_model.quantum import random_rank_r_state, select_observables


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def two_qubit_ensemble(rng):
    """Ten random non-identity Pauli observables on two qubits."""
    return select_observables(2, 10, rng)


@pytest.fixture
def rank1_state(rng):
    return random_rank_r_state(4, 1, rng)


@pytest.fixture
def small_dataset():
    config = DatasetConfig(n_qubits=2, rank=1, sizes=(24, 8, 6), seed=11, meas=6)
    return gen_dataset(config, n_jobs=1, quiet=True)
