import hashlib

import numpy as np
import pytest

from qst_model.dataset import (
    FORMAT_VERSION,
    MAGIC,
    DatasetConfig,
    ensemble_for,
    gen_dataset,
    load_dataset,
    save_dataset,
)
from qst_model.errors import (
    ArgumentError,
    DimensionInconsistencyError,
    MalformedFileError,
    VersionMismatchError,
)
from qst_model.quantum import MeasurementKind, measure


class TestConfig:
    def test_default_measurement_counts(self):
        assert DatasetConfig(4, 3, (1, 1, 1), 0).meas == 103
        assert DatasetConfig(2, 1, (1, 1, 1), 0).meas == 15
        povm = DatasetConfig(2, 1, (1, 1, 1), 0, kind="povm", n_avg=100)
        assert povm.kind is MeasurementKind.POVM
        assert povm.meas == 16

    def test_invalid_settings(self):
        with pytest.raises(ArgumentError):
            DatasetConfig(2, 5, (1, 1, 1), 0)
        with pytest.raises(ArgumentError):
            DatasetConfig(2, 1, (1, -1, 1), 0)
        with pytest.raises(ArgumentError):
            DatasetConfig(2, 1, (1, 1, 1), 0, meas=16)
        with pytest.raises(ArgumentError):
            DatasetConfig(2, 1, (1, 1, 1), 0, kind="povm")
        with pytest.raises(ArgumentError):
            DatasetConfig(2, 1, (1, 1, 1), 0, n_avg=10)


class TestGenerate:
    def test_pauli_samples_are_noiseless_measurements(self, small_dataset):
        assert len(small_dataset) == 38
        assert small_dataset.meas_count == 6
        ensemble = ensemble_for(small_dataset)
        for rho, b in small_dataset.samples("test"):
            np.testing.assert_allclose(b, measure(ensemble, rho), atol=1e-14)
            assert np.trace(rho).real == pytest.approx(1.0)
            assert np.linalg.matrix_rank(rho, tol=1e-10) == 1

    def test_splits(self, small_dataset):
        train, val = small_dataset.split("train"), small_dataset.split("validation")
        assert train[0].shape == (24, 4, 4) and train[1].shape == (24, 6)
        assert val[0].shape == (8, 4, 4)
        assert len(small_dataset.samples("test")) == 6
        with pytest.raises(ArgumentError):
            small_dataset.split("holdout")

    def test_deterministic_and_independent_of_workers(self):
        config = DatasetConfig(1, 1, (5, 2, 2), seed=3)
        serial = gen_dataset(config, n_jobs=1, quiet=True)
        parallel = gen_dataset(config, n_jobs=2, quiet=True)
        assert serial.indices == parallel.indices
        np.testing.assert_array_equal(serial.states, parallel.states)
        np.testing.assert_array_equal(serial.measurements, parallel.measurements)

    def test_povm_frequencies(self):
        config = DatasetConfig(2, 1, (4, 2, 0), seed=5, kind="povm", n_avg=500)
        dataset = gen_dataset(config, n_jobs=1, quiet=True)
        assert dataset.meas_count == 16
        np.testing.assert_allclose(dataset.measurements.sum(axis=1), 1.0)
        counts = dataset.measurements * 500
        np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)

    def test_partial_povm_keeps_observed_outcomes(self):
        config = DatasetConfig(2, 1, (3, 1, 0), seed=5, kind="povm", meas=10, n_avg=200)
        dataset = gen_dataset(config, n_jobs=1, quiet=True)
        assert dataset.measurements.shape == (4, 10)
        assert ensemble_for(dataset).count == 10
        assert (dataset.measurements.sum(axis=1) <= 1.0 + 1e-12).all()


class TestContainer:
    def test_round_trip(self, tmp_path, small_dataset):
        path = tmp_path / "data.bin"
        save_dataset(small_dataset, path)
        loaded = load_dataset(path)
        assert loaded.config == small_dataset.config
        assert loaded.indices == small_dataset.indices
        np.testing.assert_array_equal(loaded.states, small_dataset.states)
        np.testing.assert_array_equal(loaded.measurements, small_dataset.measurements)

    def test_header_layout(self, tmp_path, small_dataset):
        path = tmp_path / "data.bin"
        save_dataset(small_dataset, path)
        raw = path.read_bytes()
        assert raw[:8] == MAGIC
        assert int.from_bytes(raw[8:12], "little") == FORMAT_VERSION

    def test_corruption_is_detected(self, tmp_path, small_dataset):
        path = tmp_path / "data.bin"
        save_dataset(small_dataset, path)
        raw = bytearray(path.read_bytes())
        raw[200] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(MalformedFileError):
            load_dataset(path)

    def test_truncation_and_bad_magic(self, tmp_path, small_dataset):
        path = tmp_path / "data.bin"
        save_dataset(small_dataset, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:20])
        with pytest.raises(MalformedFileError):
            load_dataset(path)
        path.write_bytes(b"NOTLQST!" + raw[8:])
        with pytest.raises(MalformedFileError):
            load_dataset(path)

    def test_version_mismatch(self, tmp_path, small_dataset):
        path = tmp_path / "data.bin"
        save_dataset(small_dataset, path)
        raw = bytearray(path.read_bytes())
        raw[8:12] = (FORMAT_VERSION + 1).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatchError):
            load_dataset(path)

    def test_inconsistent_dimension(self, tmp_path, small_dataset):
        path = tmp_path / "data.bin"
        save_dataset(small_dataset, path)
        body = bytearray(path.read_bytes()[:-32])
        # header starts after magic and version; d is its second u32
        body[16:20] = (8).to_bytes(4, "little")
        path.write_bytes(bytes(body) + hashlib.sha256(bytes(body)).digest())
        with pytest.raises(DimensionInconsistencyError):
            load_dataset(path)
