import json

import numpy as np
import pytest

from bufcfa.errors import InputError
from bufcfa.io import (
    read_correlation_matrix,
    read_raw_data,
    read_result,
    write_raw_data,
    write_result,
)
from bufcfa.procedures import multi_step, one_step
from bufcfa.simulation import GridSpec, draw_sample, run_grid


class TestCorrelationInput:
    def test_shipped_population_matrix(self, data_dir, population):
        moments = read_correlation_matrix(data_dir / "population_corr.dat")
        assert moments.p == 18
        assert moments.n == 500
        assert np.max(np.abs(moments.S - population.sigma)) < 1e-12

    def test_flag_overrides_header(self, data_dir):
        moments = read_correlation_matrix(data_dir / "population_corr.dat", n=750)
        assert moments.n == 750

    def test_non_square_rejected(self, tmp_path):
        path = tmp_path / "bad.dat"
        path.write_text("n: 50\n1 0.2 0.1 0\n0.2 1 0.3 0\n0.1 0.3 1 0\n")
        with pytest.raises(InputError, match="not square"):
            read_correlation_matrix(path)

    def test_asymmetry_rejected(self, tmp_path):
        path = tmp_path / "asym.dat"
        path.write_text("n: 50\n1 0.2\n0.3 1\n")
        with pytest.raises(InputError, match="asymmetric"):
            read_correlation_matrix(path)

    def test_missing_n_rejected(self, tmp_path):
        path = tmp_path / "non.dat"
        path.write_text("1 0.2\n0.2 1\n")
        with pytest.raises(InputError, match="sample size missing"):
            read_correlation_matrix(path)
        assert read_correlation_matrix(path, n=30).n == 30

    def test_non_pd_rejected(self, tmp_path):
        path = tmp_path / "npd.dat"
        path.write_text("n: 50\n1 1.1\n1.1 1\n")
        with pytest.raises(InputError, match="positive definite"):
            read_correlation_matrix(path)

    def test_comma_delimited(self, tmp_path):
        path = tmp_path / "commas.dat"
        path.write_text("n: 50\n1,0.2\n0.2,1\n")
        assert read_correlation_matrix(path).S[0, 1] == 0.2


class TestRawInput:
    def test_round_trip_matches_sampler(self, tmp_path, population):
        data, moments = draw_sample(population.sigma, 1000, 4242)
        names = [f"x{i}" for i in range(1, 19)]
        path = tmp_path / "sample.raw"
        write_raw_data(path, data, names)
        reread = read_raw_data(path)
        assert reread.n == 1000
        assert reread.names == tuple(names)
        assert np.max(np.abs(reread.S - moments.S)) < 1e-12

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "ragged.raw"
        path.write_text("a b\n1 2\n3\n")
        with pytest.raises(InputError, match="row has"):
            read_raw_data(path)

    def test_too_few_rows_rejected(self, tmp_path):
        path = tmp_path / "short.raw"
        path.write_text("a b\n1 2\n")
        with pytest.raises(InputError, match="more observations"):
            read_raw_data(path)


class TestResultDocuments:
    def test_trace_round_trip_full_precision(self, tmp_path, population_moments, icm_pattern):
        trace = one_step(icm_pattern, "free", population_moments)
        path = tmp_path / "result.json"
        write_result(trace, path)
        doc = read_result(path)
        assert doc["kind"] == "procedure_trace"
        stored = np.array(doc["steps"][-1]["solution"]["lambda"])
        assert np.max(np.abs(stored - trace.final.solution.lambda_hat)) < 1e-10
        assert doc["quality_index"] == pytest.approx(trace.quality_index, abs=1e-15)
        assert doc["steps"][-1]["report"]["srmr"] == trace.final.report.srmr

    def test_multi_step_trace_stores_weights(self, tmp_path, population_moments, icm_pattern):
        trace = multi_step(icm_pattern, population_moments)
        path = tmp_path / "ms.json"
        write_result(trace, path)
        doc = read_result(path)
        steps = doc["steps"]
        assert steps[0]["weights"] is None
        assert steps[1]["weights"] is not None
        assert steps[1]["weight_gap"] > steps[2]["weight_gap"]

    def test_grid_tables_written(self, tmp_path):
        grid = GridSpec((0.6,), (0.0,), (0.0,), (300,), replications=2, master_seed=3)
        summaries, records = run_grid(grid)
        path = tmp_path / "grid.json"
        write_result((summaries, records), path)
        cells = (tmp_path / "grid.cells.csv").read_text().splitlines()
        reps = (tmp_path / "grid.reps.csv").read_text().splitlines()
        assert len(cells) == 2  # header + one cell
        assert len(reps) == 3  # header + two replications
        header = cells[0].split(",")
        assert header[:5] == ["salient", "nonsalient", "phi", "n", "replications"]
        doc = read_result(path)
        assert doc["kind"] == "grid_summary"
        assert len(doc["records"]) == 2

    def test_bare_summary_list_accepted(self, tmp_path):
        grid = GridSpec((0.6,), (0.0,), (0.0,), (300,), replications=2, master_seed=3)
        summaries, _ = run_grid(grid)
        path = tmp_path / "cells_only.json"
        write_result(summaries, path)
        assert read_result(path)["records"] == []
        assert (tmp_path / "cells_only.cells.csv").exists()

    def test_unreadable_result(self, tmp_path):
        path = tmp_path / "nope.json"
        with pytest.raises(InputError):
            read_result(path)
        path.write_text("{not json")
        with pytest.raises(InputError, match="not a valid result"):
            read_result(path)

    def test_unsupported_payload(self, tmp_path):
        with pytest.raises(InputError):
            write_result({"kind": "other"}, tmp_path / "x.json")
