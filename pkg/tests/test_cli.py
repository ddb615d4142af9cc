"""End-to-end tests of the command line interface."""
import json

import numpy as np
import pytest

from steinbench.cli import main
from steinbench.core import WeightedSample, load_sample, save_sample
from steinbench.operators import langevin
from steinbench.steinlp import spanner_stein_discrepancy
from steinbench.targets import gaussian


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def write_points(path, points):
    save_sample(WeightedSample.uniform(np.asarray(points, dtype=float)), str(path), with_weights=False)
    return str(path)


@pytest.fixture
def normal1(tmp_path):
    return write_json(tmp_path / "n1.json", {"kind": "gmm", "means": [[0.0]], "cov": 1.0})


@pytest.fixture
def normal2(tmp_path):
    return write_json(tmp_path / "n2.json", {"kind": "gmm", "means": [[0.0, 0.0]], "cov": 1.0})


@pytest.fixture
def mixture(tmp_path):
    return write_json(tmp_path / "mix.json", {"target": {"kind": "gmm", "delta": 4.0},
                                              "diffusion": {"kind": "langevin"}})


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestDiscrepancy:
    def test_point_mass(self, tmp_path, capsys, normal1):
        s = write_points(tmp_path / "q.csv", [[0.0]])
        code, out, _ = run(capsys, "discrepancy", "--sample", s, "--target", normal1)
        assert code == 0
        assert out.startswith("1.0") and abs(float(out) - 1.0) <= 1e-7

    def test_point_mass_2d(self, tmp_path, capsys, normal2):
        s = write_points(tmp_path / "q.csv", [[0.0, 0.0]])
        code, out, _ = run(capsys, "discrepancy", "--sample", s, "--target", normal2)
        assert code == 0
        assert out.startswith("2.0") and abs(float(out) - 2.0) <= 1e-7

    def test_writes_witness_json(self, tmp_path, capsys, normal1):
        s = write_points(tmp_path / "q.csv", [[-1.0], [0.5], [2.0]])
        out_path = tmp_path / "w.json"
        code, out, _ = run(capsys, "discrepancy", "--sample", s, "--target", normal1, "--out", out_path, "--json")
        assert code == 0
        printed = json.loads(out)
        saved = json.loads(out_path.read_text())
        assert printed["value"] == saved["value"]
        assert len(saved["h_star"]) == 3

    def test_missing_target(self, tmp_path, capsys):
        s = write_points(tmp_path / "q.csv", [[0.0]])
        code, _, err = run(capsys, "discrepancy", "--sample", s, "--target", tmp_path / "none.json")
        assert code == 1 and "error" in err

    def test_missing_sample(self, tmp_path, capsys, normal1):
        code, _, err = run(capsys, "discrepancy", "--sample", tmp_path / "none.csv", "--target", normal1)
        assert code == 2 and err

    def test_malformed_sample(self, tmp_path, capsys, normal1):
        bad = tmp_path / "bad.csv"
        bad.write_text("0.0\nfoo\n")
        code, _, _ = run(capsys, "discrepancy", "--sample", bad, "--target", normal1)
        assert code == 2

    def test_bad_stretch_and_scales(self, tmp_path, capsys, normal1):
        s = write_points(tmp_path / "q.csv", [[0.0]])
        assert run(capsys, "discrepancy", "--sample", s, "--target", normal1, "--stretch", "0.5")[0] == 1
        assert run(capsys, "discrepancy", "--sample", s, "--target", normal1, "--scales", "1,0,1")[0] == 1

    def test_dimension_mismatch(self, tmp_path, capsys, normal2):
        s = write_points(tmp_path / "q.csv", [[0.0]])
        assert run(capsys, "discrepancy", "--sample", s, "--target", normal2)[0] == 1

    def test_threads_identical(self, tmp_path, capsys, normal2):
        X = np.random.default_rng(0).normal(size=(30, 2))
        s = write_points(tmp_path / "q.csv", X)
        outs = []
        for threads in (1, 2):
            path = tmp_path / f"w{threads}.json"
            assert run(capsys, "discrepancy", "--sample", s, "--target", normal2, "--threads", threads,
                       "--out", path)[0] == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]


class TestWitness:
    def test_sum_equals_value(self, tmp_path, capsys, mixture):
        X = np.random.default_rng(1).normal(scale=2, size=(25, 1))
        s = write_points(tmp_path / "q.csv", X)
        out_path = tmp_path / "h.csv"
        code, out, _ = run(capsys, "witness", "--sample", s, "--target", mixture, "--out", out_path)
        assert code == 0
        table = np.loadtxt(out_path, delimiter=",", comments="#")
        assert abs(np.dot(table[:, 1], table[:, 2]) - float(out)) <= 1e-8

    def test_zero_objective(self, tmp_path, capsys, normal1):
        s = write_points(tmp_path / "q.csv", [[0.0], [1.0]])
        diff = write_json(tmp_path / "d.json", {"kind": "preconditioned", "a": [[0.0]]})
        code, out, _ = run(capsys, "witness", "--sample", s, "--target", normal1, "--diffusion", diff)
        assert code == 0
        table = np.loadtxt(out.splitlines()[1:], delimiter=",")
        np.testing.assert_array_equal(table[:, 2], [0.0, 0.0])

    def test_two_point_matches_library(self, tmp_path, capsys, normal1):
        s = write_points(tmp_path / "q.csv", [[-1.0], [1.0]])
        code, out, _ = run(capsys, "witness", "--sample", s, "--target", normal1)
        assert code == 0
        table = np.loadtxt(out.splitlines()[1:], delimiter=",")
        w = spanner_stein_discrepancy(load_sample(s), gaussian([0.0], 1.0), langevin(1))
        np.testing.assert_array_equal(table[:, 2], w.h_star)
        assert abs(np.dot(table[:, 1], table[:, 2]) - 1.0) <= 1e-8


class TestSpanner:
    def test_line(self, tmp_path, capsys):
        s = write_points(tmp_path / "p.csv", [[0.0], [1.0], [3.0]])
        edges = tmp_path / "e.csv"
        code, out, _ = run(capsys, "spanner", "--sample", s, "--greedy", "--out", edges)
        info = json.loads(out)
        assert code == 0 and info["ok"] and info["n_edges"] == 2
        e = np.loadtxt(edges, delimiter=",", comments="#", ndmin=2)
        assert sorted(map(tuple, e.tolist())) == [(0.0, 1.0, 1.0), (1.0, 2.0, 2.0)]

    def test_triangle(self, tmp_path, capsys):
        s = write_points(tmp_path / "p.csv", [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        edges = tmp_path / "e.csv"
        code, out, _ = run(capsys, "spanner", "--sample", s, "--out", edges)
        assert code == 0 and json.loads(out)["n_edges"] == 2
        e = np.loadtxt(edges, delimiter=",", comments="#", ndmin=2)
        assert sorted(map(tuple, e.tolist())) == [(0.0, 1.0, 1.0), (0.0, 2.0, 1.0)]

    def test_single_point(self, tmp_path, capsys):
        s = write_points(tmp_path / "p.csv", [[4.0, 2.0]])
        code, out, _ = run(capsys, "spanner", "--sample", s)
        assert code == 0 and json.loads(out)["n_edges"] == 0

    def test_edges_reused_by_discrepancy(self, tmp_path, capsys, normal2):
        X = np.random.default_rng(2).normal(size=(20, 2))
        s = write_points(tmp_path / "p.csv", X)
        edges = tmp_path / "e.csv"
        assert run(capsys, "spanner", "--sample", s, "--out", edges)[0] == 0
        _, a, _ = run(capsys, "discrepancy", "--sample", s, "--target", normal2)
        _, b, _ = run(capsys, "discrepancy", "--sample", s, "--target", normal2, "--edges", edges)
        assert a == b


class TestSample:
    def test_deterministic(self, tmp_path, capsys, mixture):
        for sampler in (["--sampler", "iid", "--n", "200"],
                        ["--sampler", "mala", "--n-steps", "500", "--step-size", "0.5"]):
            a, b = tmp_path / "a.csv", tmp_path / "b.csv"
            assert run(capsys, "sample", "--target", mixture, "--seed", 5, "--out", a, *sampler)[0] == 0
            assert run(capsys, "sample", "--target", mixture, "--seed", 5, "--out", b, *sampler)[0] == 0
            assert a.read_bytes() == b.read_bytes()
            assert json.loads((tmp_path / "a.csv.meta.json").read_text())["seed"] == 5

    def test_mixture_mean(self, tmp_path, capsys, mixture):
        out = tmp_path / "s.csv"
        assert run(capsys, "sample", "--target", mixture, "--n", 20000, "--seed", 1, "--out", out)[0] == 0
        x = load_sample(str(out)).points[:, 0]
        # symmetric mixture: mean 0, variance 1 + (delta/2)^2 = 5
        assert abs(x.mean()) <= 4 * np.sqrt(5.0 / x.size)

    def test_sgrld_writes_weights(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        V = rng.normal(size=(40, 2))
        y = V @ np.array([1.0, -0.5]) + rng.standard_t(3, size=40)
        tgt = write_json(tmp_path / "t.json", {"kind": "huber", "covariates": V.tolist(),
                                               "responses": y.tolist(), "c": 1.0})
        out = tmp_path / "s.csv"
        code, _, _ = run(capsys, "sample", "--target", tgt, "--sampler", "sgrld", "--metric", "pseudo_huber",
                         "--delta", 1.0, "--minibatch", 10, "--step-size", 0.001, "--n-steps", 300, "--out", out)
        assert code == 0
        s = load_sample(str(out))
        assert s.d == 2 and abs(s.weights.sum() - 1) <= 1e-12

    def test_bad_step(self, tmp_path, capsys, mixture):
        for eps in ("0", "-0.1"):
            code, _, err = run(capsys, "sample", "--target", mixture, "--sampler", "mala",
                               "--step-size", eps, "--out", tmp_path / "s.csv")
            assert code == 1 and "step" in err

    def test_no_exact_sampler(self, tmp_path, capsys):
        tgt = write_json(tmp_path / "t.json", {"kind": "logistic", "covariates": [[1.0]], "responses": [1]})
        assert run(capsys, "sample", "--target", tgt, "--n", 10, "--out", tmp_path / "s.csv")[0] == 1


class TestCompare:
    sizes = "25,50,100,200,400"

    def _table(self, out):
        rows = [line for line in out.splitlines() if not line.startswith("#")]
        slope = [line for line in out.splitlines() if line.startswith("# slope=")]
        return np.array([[float(v) for v in r.split(",")] for r in rows]), float(slope[0].split()[1][6:])

    def test_on_target(self, tmp_path, capsys, mixture):
        s = tmp_path / "s.csv"
        assert run(capsys, "sample", "--target", mixture, "--n", 400, "--seed", 3, "--out", s)[0] == 0
        code, out, _ = run(capsys, "compare", "--sample", s, "--target", mixture, "--sizes", self.sizes)
        assert code == 0
        table, slope = self._table(out)
        np.testing.assert_array_equal(table[:, 0], [25, 50, 100, 200, 400])
        assert np.all(table[:, 3] >= table[:, 1])
        assert abs(slope + 0.5) <= 0.2

    def test_off_target(self, tmp_path, capsys, mixture):
        # one mode only: S levels off once the sampling noise is below the bias
        X = np.random.default_rng(4).normal(-2.0, 1.0, size=(3200, 1))
        s = write_points(tmp_path / "s.csv", X)
        code, out, _ = run(capsys, "compare", "--sample", s, "--target", mixture, "--sizes", "800,1600,3200")
        assert code == 0
        table, slope = self._table(out)
        assert abs(slope) <= 0.1
        assert np.all(table[:, 2] > 1.0)

    def test_default_sizes(self, tmp_path, capsys, mixture):
        s = tmp_path / "s.csv"
        run(capsys, "sample", "--target", mixture, "--n", 120, "--out", s)
        code, out, _ = run(capsys, "compare", "--sample", s, "--target", mixture, "--reference-size", 0)
        table, _ = self._table(out)
        np.testing.assert_array_equal(table[:, 0], [50, 100, 120])
        assert np.all(np.isnan(table[:, 2]))

    def test_bad_sizes(self, tmp_path, capsys, mixture):
        s = write_points(tmp_path / "s.csv", [[0.0], [1.0], [2.0]])
        assert run(capsys, "compare", "--sample", s, "--target", mixture, "--sizes", "2,1")[0] == 1
        assert run(capsys, "compare", "--sample", s, "--target", mixture, "--sizes", "1,5")[0] == 1
