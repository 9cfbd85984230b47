import math
import os

import numpy as np
import pytest

import moepred as mp
from moepred.errors import (
    ColumnCountMismatchError,
    ContractViolationError,
    MissingFileError,
    ParseError,
)
from moepred.superconduct import (
    SplitSpec,
    Table,
    default_lambda_grid,
    evaluate_test,
    load_csv,
    point_predictions,
    preprocess,
    run_pipeline,
    select_k,
    subgroup_coverage,
)

from conftest import FIXTURE_CSV


class TestLoadCsv:
    def test_fixture_round_trip(self, tmp_path):
        path = tmp_path / "tiny.csv"
        path.write_text("a,b,temp\n1.5,2.0,3.25\n-0.5,4.0,0.0\n7,8,9\n")
        t = load_csv(path)
        assert t.columns == ["a", "b", "temp"]
        assert np.allclose(
            t.values, [[1.5, 2.0, 3.25], [-0.5, 4.0, 0.0], [7.0, 8.0, 9.0]]
        )

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError) as exc:
            load_csv(tmp_path / "nope.csv")
        assert "nope.csv" in str(exc.value)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ParseError):
            load_csv(path)

    def test_non_numeric_cell_diagnostics(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n3,oops\n")
        with pytest.raises(ParseError) as exc:
            load_csv(path)
        assert exc.value.row == 3 and exc.value.col == 2

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("a,b\n1,2\n3,4,5\n")
        with pytest.raises(ColumnCountMismatchError) as exc:
            load_csv(path)
        assert exc.value.row == 3

    def test_fixture_shape(self):
        t = load_csv(FIXTURE_CSV)
        assert t.n == 300
        assert len(t.columns) == 82
        assert t.columns[-1] == "critical_temp"
        assert "wtd_std_ThermalConductivity" in t.columns


@pytest.fixture(scope="module")
def fixture_table():
    return load_csv(FIXTURE_CSV)


@pytest.fixture(scope="module")
def prepared(fixture_table):
    return preprocess(fixture_table, SplitSpec(n_train=200, n_validation=50, rng_seed=3))


class TestPreprocess:
    def test_training_columns_standardized(self, prepared):
        Xt = prepared.train.X[:, 1:]  # drop intercept
        assert np.max(np.abs(Xt.mean(axis=0))) < 1e-10
        assert np.max(np.abs(Xt.std(axis=0) - 1.0)) < 1e-10

    def test_log1p_response(self, fixture_table, prepared):
        idx = prepared.indices["train"]
        raw = fixture_table.values[idx, -1]
        assert np.allclose(prepared.train.y, np.log1p(raw))

    def test_log1p_anchors(self):
        assert math.log1p(0.0) == 0.0
        assert math.log1p(math.e - 1.0) == pytest.approx(1.0, rel=1e-15)

    def test_intercept_prepended(self, prepared):
        for ds in (prepared.train, prepared.validation, prepared.test):
            assert np.all(ds.X[:, 0] == 1.0)

    def test_split_sizes_and_disjoint(self, prepared):
        assert prepared.train.n == 200
        assert prepared.validation.n == 50
        assert prepared.test.n == 50
        all_idx = np.concatenate(
            [prepared.indices[k] for k in ("train", "validation", "test")]
        )
        assert np.array_equal(np.sort(all_idx), np.arange(300))

    def test_deterministic(self, fixture_table):
        a = preprocess(fixture_table, SplitSpec(200, 50, rng_seed=3))
        b = preprocess(fixture_table, SplitSpec(200, 50, rng_seed=3))
        assert np.array_equal(a.train.X, b.train.X)
        assert np.array_equal(a.indices["test"], b.indices["test"])

    def test_zero_variance_column_flagged(self, tmp_path):
        rows = ["c0,c1,temp"] + [f"5.0,{i}.0,{i}.5" for i in range(20)]
        path = tmp_path / "zv.csv"
        path.write_text("\n".join(rows) + "\n")
        t = load_csv(path)
        prep = preprocess(t, SplitSpec(n_train=10, n_validation=4, rng_seed=0))
        assert prep.scaler.zero_variance == ["c0"]
        assert np.all(np.isfinite(prep.train.X))

    def test_split_too_large_rejected(self, fixture_table):
        with pytest.raises(ContractViolationError):
            preprocess(fixture_table, SplitSpec(n_train=290, n_validation=20))

    def test_scaler_uses_training_rows_only(self, fixture_table):
        # mutating test responses must not change fitted params (data-flow check)
        prep1 = preprocess(fixture_table, SplitSpec(200, 50, rng_seed=3))
        tampered = Table(
            columns=fixture_table.columns, values=fixture_table.values.copy()
        )
        tampered.values[prep1.indices["test"], -1] += 100.0
        prep2 = preprocess(tampered, SplitSpec(200, 50, rng_seed=3))
        assert np.array_equal(prep1.train.X, prep2.train.X)
        assert np.array_equal(prep1.train.y, prep2.train.y)
        cfg = mp.EMConfig(lambda_beta=0.05, lambda_alpha=0.05, n_restarts=1, max_iter=60)
        f1 = mp.fit_em(prep1.train, 2, cfg)
        f2 = mp.fit_em(prep2.train, 2, cfg)
        assert np.array_equal(f1.params.beta, f2.params.beta)


class TestSelectK:
    def test_single_candidate(self, prepared):
        cfg = mp.EMConfig(n_restarts=1, max_iter=50)
        best, fits, table = select_k(
            prepared.train, prepared.validation, [3], cfg,
            lambda_grid=[(0.05, 0.05)],
        )
        assert best == 3
        assert 3 in fits and len(table) == 1

    def test_mixture_beats_single_component(self, prepared):
        cfg = mp.EMConfig(n_restarts=2, max_iter=150)
        best, fits, table = select_k(
            prepared.train, prepared.validation, [1, 2], cfg,
            lambda_grid=[(0.05, 0.05)],
        )
        by_k = {row["k"]: row["mse"] for row in table}
        assert by_k[2] < by_k[1]
        assert best == 2

    def test_tie_breaks_to_smaller_k(self, rng, prepared):
        # force a tie by giving both candidates the same (degenerate) score path
        cfg = mp.EMConfig(n_restarts=1, max_iter=30)
        best, fits, table = select_k(
            prepared.train, prepared.validation, [2, 2, 1], cfg,
            lambda_grid=[(0.05, 0.05)],
        )
        ks = [row["k"] for row in table]
        assert ks == sorted(set(ks))  # deduplicated and ordered

    def test_empty_candidates(self, prepared):
        with pytest.raises(ContractViolationError):
            select_k(prepared.train, prepared.validation, [], mp.EMConfig())


class TestEvaluateAndSubgroups:
    @pytest.fixture(scope="class")
    def small_eval(self, prepared):
        cfg = mp.EMConfig(
            lambda_beta=0.05, lambda_alpha=0.05, n_restarts=2, max_iter=150
        )
        fit = mp.fit_em(prepared.train, 2, cfg)
        ev = evaluate_test(
            prepared.train, fit, prepared.test, 0.05, mp.DebiasConfig()
        )
        return prepared, fit, ev

    def test_coverage_in_unit_interval(self, small_eval):
        _, _, ev = small_eval
        assert 0.0 <= ev.coverage <= 1.0
        assert ev.mean_raw_length > 0
        assert len(ev.rows) == 50

    def test_q_monotone_length(self, small_eval):
        prepared, fit, _ = small_eval
        ev50 = evaluate_test(
            prepared.train, fit, prepared.test, 0.5, mp.DebiasConfig()
        )
        ev05 = evaluate_test(
            prepared.train, fit, prepared.test, 0.05, mp.DebiasConfig()
        )
        assert ev50.mean_raw_length < ev05.mean_raw_length

    def test_subgroup_counts_sum(self, small_eval):
        prepared, _, ev = small_eval
        col = prepared.feature_names.index("wtd_std_ThermalConductivity")
        rep = subgroup_coverage(ev, prepared.test_raw[:, col],
                                "wtd_std_ThermalConductivity", 5)
        assert sum(rep.counts) == prepared.test.n
        for c in rep.coverage:
            assert c is None or 0.0 <= c <= 1.0

    def test_single_bin_equals_overall(self, small_eval):
        prepared, _, ev = small_eval
        col = prepared.feature_names.index("wtd_std_ThermalConductivity")
        rep = subgroup_coverage(ev, prepared.test_raw[:, col], "x", 1)
        assert rep.counts == [prepared.test.n]
        assert rep.coverage[0] == pytest.approx(ev.coverage, abs=1e-12)


class TestPipeline:
    def test_fixture_smoke(self, fixture_table):
        report, evaluation, prep, fit = run_pipeline(
            fixture_table,
            SplitSpec(n_train=200, n_validation=50, rng_seed=1),
            k_candidates=(1, 2),
            em_cfg=mp.EMConfig(n_restarts=1, max_iter=100),
            lambda_grid=[(0.05, 0.05)],
            n_bins=5,
        )
        assert report["best_k"] in (1, 2)
        assert 0.0 <= report["overall_coverage"] <= 1.0
        assert report["mean_raw_length"] > 0
        assert len(report["subgroups"]) == 5
        assert sum(s["count"] for s in report["subgroups"]) == prep.test.n

    def test_unknown_subgroup_var_rejected(self, fixture_table):
        with pytest.raises(ContractViolationError):
            run_pipeline(
                fixture_table,
                SplitSpec(n_train=200, n_validation=50),
                k_candidates=(1,),
                em_cfg=mp.EMConfig(n_restarts=1, max_iter=30),
                lambda_grid=[(0.05, 0.05)],
                subgroup_var="no_such_column",
            )


class TestLambdaGrid:
    def test_default_grid_shape(self):
        grid = default_lambda_grid()
        assert len(grid) == 100
        las = sorted({a for a, _ in grid})
        lbs = sorted({b for _, b in grid})
        assert len(las) == 10 and len(lbs) == 10
        # log-spaced
        ratios = [las[i + 1] / las[i] for i in range(9)]
        assert max(ratios) == pytest.approx(min(ratios), rel=1e-9)
