"""Tests for sample ingestion, validation and shared domain types."""
import json
import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from steinbench.core import (
    ConfigError,
    DiffusionSpec,
    IngestionError,
    SteinWitness,
    TargetModel,
    WeightedSample,
    check_diffusion,
    empirical_sample,
    find_duplicate,
    load_sample,
    read_json,
    save_sample,
    split_config,
    validate_target,
)
from steinbench.targets import symmetric_mixture


def _write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


class TestLoadSample:
    def test_uniform_three_rows(self, tmp_path):
        s = load_sample(_write(tmp_path, "0\n1\n3\n"))
        np.testing.assert_array_equal(s.points[:, 0], [0.0, 1.0, 3.0])
        np.testing.assert_allclose(s.weights, [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_duplicate_rejected(self, tmp_path):
        with pytest.raises(IngestionError, match="duplicate"):
            load_sample(_write(tmp_path, "0,0.5\n0,0.5\n"))

    def test_column_mode(self, tmp_path):
        s = load_sample(_write(tmp_path, "1,0.25\n2,0.75\n"), "column")
        np.testing.assert_array_equal(s.points[:, 0], [1.0, 2.0])
        np.testing.assert_array_equal(s.weights, [0.25, 0.75])

    def test_column_weights_must_sum_to_one(self, tmp_path):
        with pytest.raises(IngestionError, match="sum"):
            load_sample(_write(tmp_path, "1,0.25\n2,0.5\n"), "column")

    def test_nonpositive_weight(self, tmp_path):
        with pytest.raises(IngestionError):
            load_sample(_write(tmp_path, "1,-0.25\n2,1.25\n"), "column")

    def test_parse_failure(self, tmp_path):
        with pytest.raises(IngestionError):
            load_sample(_write(tmp_path, "1,abc\n"))

    def test_ragged_rows(self, tmp_path):
        with pytest.raises(IngestionError, match="column counts"):
            load_sample(_write(tmp_path, "1,2\n3\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            load_sample(str(tmp_path / "nope.csv"))

    def test_header_skipped(self, tmp_path):
        s = load_sample(_write(tmp_path, "# x\n0\n2\n"))
        assert s.n == 2

    def test_auto_mode_reads_weight_header(self, tmp_path):
        s = load_sample(_write(tmp_path, "# x1,weight\n1,0.25\n2,0.75\n"), "auto")
        assert s.d == 1
        np.testing.assert_array_equal(s.weights, [0.25, 0.75])
        s = load_sample(_write(tmp_path, "# x1,x2\n1,0.25\n2,0.75\n"), "auto")
        assert s.d == 2

    def test_unknown_mode(self, tmp_path):
        with pytest.raises(ConfigError):
            load_sample(_write(tmp_path, "0\n"), "bogus")


class TestWeightedSample:
    def test_invariants(self):
        with pytest.raises(IngestionError):
            WeightedSample(np.zeros((0, 1)), np.zeros(0))
        with pytest.raises(IngestionError):
            WeightedSample([[0.0], [1.0]], [0.5, 0.6])
        with pytest.raises(IngestionError):
            WeightedSample([[np.nan]], [1.0])
        with pytest.raises(IngestionError):
            WeightedSample([[0.0], [0.0]], [0.5, 0.5])

    def test_read_only(self):
        s = WeightedSample.uniform([[0.0], [1.0]])
        with pytest.raises(ValueError):
            s.points[0, 0] = 5.0

    def test_near_duplicates_allowed(self):
        s = WeightedSample.uniform([[0.0], [np.nextafter(0.0, 1.0)]])
        assert s.n == 2

    def test_prefix(self):
        s = WeightedSample.uniform(np.arange(5.0))
        p = s.prefix(2)
        assert p.n == 2
        np.testing.assert_array_equal(p.weights, [0.5, 0.5])

    def test_empirical_sample_merges_repeats(self):
        s = empirical_sample([[2.0], [1.0], [2.0], [2.0]])
        np.testing.assert_array_equal(s.points[:, 0], [2.0, 1.0])
        np.testing.assert_array_equal(s.weights, [0.75, 0.25])

    def test_find_duplicate(self):
        assert find_duplicate([[0.0, 1.0], [2.0, 3.0]]) is None
        assert find_duplicate([[0.0, 1.0], [2.0, 3.0], [0.0, 1.0]]) == (0, 2)

    @given(
        hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 3)),
                   elements=st.floats(-1e6, 1e6, allow_nan=False)),
        st.floats(0.0, 2.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_constructor_enforces_invariants(self, pts, bump):
        w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        w[0] += bump
        ok_weights = abs(w.sum() - 1.0) <= 1e-12
        distinct = find_duplicate(pts) is None
        if ok_weights and distinct:
            s = WeightedSample(pts, w)
            assert s.n == pts.shape[0]
        else:
            with pytest.raises(IngestionError):
                WeightedSample(pts, w)


class TestRoundTrip:
    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 3)),
                      elements=st.floats(allow_nan=False, allow_infinity=False), unique=True))
    @settings(max_examples=60, deadline=None)
    def test_bit_exact(self, pts):
        if find_duplicate(pts) is not None:
            return
        s = WeightedSample.uniform(pts)
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "s.csv")
            save_sample(s, path)
            back = load_sample(path)
        # -0.0 and 0.0 print differently, so the comparison is bitwise
        assert back.points.tobytes() == s.points.tobytes()

    def test_weighted_round_trip(self, tmp_path):
        s = WeightedSample([[0.1], [0.2], [0.3]], [0.2, 0.3, 0.5])
        path = str(tmp_path / "w.csv")
        save_sample(s, path, with_weights=True)
        back = load_sample(path, "auto")
        assert back.weights.tobytes() == s.weights.tobytes()
        assert back.points.tobytes() == s.points.tobytes()


class TestValidateTarget:
    def _normal(self, logd):
        return TargetModel(1, lambda X: -X, lambda X: logd(X[:, 0]))

    def test_analytic_pair_passes(self):
        rep = validate_target(self._normal(lambda x: -0.5 * x**2), [[0.0], [1.0], [-2.0]])
        assert rep.passed and rep.checked == 3
        assert rep.max_rel_deviation < 1e-8

    def test_mismatched_pair_fails(self):
        rep = validate_target(self._normal(lambda x: -x**4), [[0.0], [1.0], [-2.0]])
        assert not rep.passed

    def test_mixture(self):
        probes = np.random.default_rng(0).normal(scale=3, size=(10, 1))
        assert validate_target(symmetric_mixture(4.0), probes).passed

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            validate_target(self._normal(lambda x: -0.5 * x**2), np.zeros((3, 2)))

    def test_no_log_density(self):
        rep = validate_target(TargetModel(1, lambda X: -X), [[0.0]])
        assert rep.passed and rep.checked == 0


class TestDiffusionSpec:
    def test_constant_checks(self):
        check_diffusion(DiffusionSpec.from_matrices(np.eye(2), [[0, 1], [-1, 0]]), np.ones((3, 2)))
        with pytest.raises(ConfigError, match="skew"):
            check_diffusion(DiffusionSpec.from_matrices(np.eye(2), [[0, 1], [1, 0]]), np.ones((1, 2)))
        with pytest.raises(ConfigError, match="semidefinite"):
            check_diffusion(DiffusionSpec.from_matrices(-np.eye(2)), np.ones((1, 2)))
        with pytest.raises(ConfigError, match="symmetric"):
            check_diffusion(DiffusionSpec.from_matrices([[1, 0.5], [0, 1]]), np.ones((1, 2)))

    def test_m(self):
        spec = DiffusionSpec.from_matrices(np.eye(2), [[0, 1], [-1, 0]])
        np.testing.assert_array_equal(spec.m_const, [[1, 1], [-1, 1]])
        assert spec.m(np.zeros((4, 2))).shape == (4, 2, 2)


class TestWitnessAndConfig:
    def test_witness_json_round_trip(self, tmp_path):
        w = SteinWitness(1.5, np.array([1.5]), np.ones((1, 2)), np.zeros((1, 1, 2)), np.array([1.0, 2.0]))
        path = tmp_path / "w.json"
        w.save_json(path)
        obj = json.loads(path.read_text())
        assert set(obj) == {"value", "coord_values", "psi", "Psi", "h_star"}
        back = SteinWitness.load_json(path)
        assert back.value == 1.5
        np.testing.assert_array_equal(back.h_star, [1.0, 2.0])

    def test_read_json(self, tmp_path):
        assert read_json('{"a": 1}') == {"a": 1}
        with pytest.raises(ConfigError):
            read_json(str(tmp_path / "missing.json"))
        with pytest.raises(ConfigError):
            read_json("[1, 2]")

    def test_split_config(self):
        t, d = split_config({"target": {"kind": "gmm"}})
        assert t == {"kind": "gmm"} and d is None
        with pytest.raises(ConfigError):
            split_config({"target": {"means": [0]}})
