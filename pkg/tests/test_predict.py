import numpy as np
import pytest
import typer

from qst_model.dataset import DatasetConfig, ensemble_for, gen_dataset
from qst_model.errors import ArgumentError
from qst_model.modeling.lqst import init_params
from qst_model.modeling.predict import (
    EvalMetrics,
    estimate_bell,
    evaluate,
    parse_sweep,
    svt_baseline,
    sweep_meas,
    sweep_n_avg,
)
from qst_model.quantum import select_povm_outcomes
from qst_model.svt import SUMMARY_COLUMNS, SvtConfig


@pytest.fixture
def povm_network(rng):
    ensemble = select_povm_outcomes(2, 16, rng)
    return init_params(ensemble, 2, mu=1e-8, epsilon=1e-4), ensemble


def test_evaluate_pauli_split(small_dataset):
    params = init_params(ensemble_for(small_dataset), 2, mu=1e-4)
    metrics = evaluate(params, small_dataset, "test", n_jobs=1)
    assert isinstance(metrics, EvalMetrics)
    assert metrics.n == 6
    assert 0.0 <= metrics.fidelity_mean <= 1.0 + 1e-9
    assert 0.0 <= metrics.trace_distance_mean <= 1.0 + 1e-9
    assert metrics.fidelity_std >= 0.0
    assert 1 <= metrics.rank_mean <= 4
    assert metrics.classic_fidelity_mean is None


def test_evaluate_povm_adds_classic_fidelity():
    config = DatasetConfig(2, 1, (2, 1, 3), seed=2, kind="povm", n_avg=300)
    dataset = gen_dataset(config, n_jobs=1, quiet=True)
    params = init_params(ensemble_for(dataset), 1, mu=1e-8, epsilon=1e-4)
    metrics = evaluate(params, dataset, n_jobs=1)
    assert metrics.n == 3
    assert 0.0 < metrics.classic_fidelity_mean <= 1.0 + 1e-9
    assert metrics.classic_fidelity_std >= 0.0


def test_evaluate_empty_split():
    config = DatasetConfig(1, 1, (2, 1, 0), seed=1)
    dataset = gen_dataset(config, n_jobs=1, quiet=True)
    params = init_params(ensemble_for(dataset), 1)
    with pytest.raises(ArgumentError):
        evaluate(params, dataset, "test", n_jobs=1)


def test_estimate_bell(povm_network, rng):
    params, ensemble = povm_network
    metrics = estimate_bell(params, ensemble, n_avg=500, repeats=4, rng=rng)
    assert metrics.n == 4
    assert 0.0 <= metrics.fidelity_mean <= 1.0 + 1e-9
    assert metrics.classic_fidelity_mean is not None


def test_estimate_bell_needs_a_two_qubit_povm(two_qubit_ensemble, povm_network, rng):
    with pytest.raises(ArgumentError):
        estimate_bell(init_params(two_qubit_ensemble, 1), two_qubit_ensemble, 100, 2, rng)
    params, ensemble = povm_network
    with pytest.raises(ArgumentError):
        estimate_bell(params, ensemble, 100, 0, rng)


def test_sweeps(povm_network, rng):
    params, ensemble = povm_network
    by_shots = sweep_n_avg(params, ensemble, [100, 1000], repeats=2, rng=rng, quiet=True)
    assert by_shots["n_avg"].tolist() == [100, 1000]
    assert (by_shots["m"] == 16).all()

    partial = select_povm_outcomes(2, 10, rng)
    networks = [(params, ensemble), (init_params(partial, 2, mu=1e-8, epsilon=1e-4), partial)]
    by_meas = sweep_meas(networks, n_avg=200, repeats=2, rng=rng, quiet=True)
    assert by_meas["m"].tolist() == [10, 16]
    assert {"fidelity_mean", "classic_fidelity_mean"} <= set(by_meas.columns)


def test_parse_sweep():
    assert parse_sweep("n-avg=100,200") == ("n-avg", [100, 200])
    assert parse_sweep("m=10") == ("m", [10])
    for bad in ("shots=1", "m=", "m=a,b", "n-avg=0"):
        with pytest.raises(typer.BadParameter):
            parse_sweep(bad)


def test_bell_estimation_is_seeded(povm_network):
    params, ensemble = povm_network
    first = estimate_bell(params, ensemble, 400, 3, np.random.default_rng(9))
    second = estimate_bell(params, ensemble, 400, 3, np.random.default_rng(9))
    assert first == second


def test_svt_baseline_on_the_test_split(small_dataset):
    baseline = svt_baseline(small_dataset, SvtConfig(1.0, 0.2, max_iters=300), n_jobs=1)
    assert set(baseline) == {"tau", "delta", *SUMMARY_COLUMNS}
    assert (baseline["tau"], baseline["delta"]) == (1.0, 0.2)
    assert baseline["diverged"] == 0
    assert 0.0 <= baseline["mean_fidelity"] <= 1.0 + 1e-9
    assert 0.0 <= baseline["mean_rank"] <= 4
    assert 0.0 <= baseline["psd_probability"] <= 1.0


def test_svt_baseline_empty_split():
    dataset = gen_dataset(DatasetConfig(1, 1, (2, 1, 0), seed=1), n_jobs=1, quiet=True)
    with pytest.raises(ArgumentError):
        svt_baseline(dataset, SvtConfig(1.0, 0.2), n_jobs=1)
