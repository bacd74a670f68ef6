import json

import numpy as np
import pytest

from steinmatch.exceptions import ConfigError
from steinmatch.harness import (
    RESULT_FIELDS,
    ResultRow,
    build_target,
    config_from_dict,
    config_help,
    derive_seed,
    emit_csv,
    emit_summary,
    monte_carlo_method,
    parse_config,
    read_csv,
    resolve_threads,
    run_experiment,
    summarize,
)
from steinmatch.metrics import moment_report
from steinmatch.targets import GaussianTarget

MINIMAL = {"experiment": "gaussian_sweep", "d": 10, "n": [11], "methods": ["svgd_linear"], "trials": 1, "seed": 7}


def _row(**kw):
    base = dict(
        experiment="gaussian_sweep", method="svgd_rbf", d=2, n=5, m=None, trial=0, seed=123, grid=None,
        mse_first=0.25, mse_second=1e-3, est_avg_variance=0.9, mmd_sq=0.01, ksd_sq=0.02, residual=1e-8,
        rank_ok=None, iterations=40, wall_time=None, stop="tol",
    )
    base.update(kw)
    return ResultRow(**base)


def _write_config(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj) if not isinstance(obj, str) else obj)
    return p


class TestConfig:
    def test_minimal(self, tmp_path):
        cfg = parse_config(_write_config(tmp_path, MINIMAL))
        assert cfg.experiment == "gaussian_sweep" and cfg.d == 10 and cfg.n == (11,)
        assert cfg.methods == ("svgd_linear",) and cfg.trials == 1 and cfg.seed == 7

    def test_negative_d_names_field(self):
        with pytest.raises(ConfigError, match="'d'"):
            config_from_dict({**MINIMAL, "d": -3})

    def test_trials_default(self):
        raw = dict(MINIMAL)
        del raw["trials"]
        assert config_from_dict(raw).trials == 20

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            config_from_dict({**MINIMAL, "bogus": 1})

    def test_unknown_svgd_key(self):
        with pytest.raises(ConfigError, match="svgd"):
            config_from_dict({**MINIMAL, "svgd": {"stepsize": 0.1}})

    @pytest.mark.parametrize(
        "patch, field",
        [
            ({"experiment": "nope"}, "experiment"),
            ({"methods": ["svgd_magic"]}, "methods[0]"),
            ({"n": [11, 5]}, "'n'"),
            ({"n": [0]}, "'n'"),
            ({"trials": 0}, "trials"),
            ({"d": "ten"}, "'d'"),
            ({"condition_numbers": [0.5]}, "condition_numbers"),
            ({"alphas": [-1.0]}, "alphas"),
            ({"svgd": {"step_size": 0}}, "svgd.step_size"),
            ({"svgd": {"scheduler": "adam"}}, "svgd.scheduler"),
            ({"svgd": {"momentum": 1.0}}, "svgd.momentum"),
            ({"n_hidden": 25}, "n_hidden"),
        ],
    )
    def test_schema_errors_name_field(self, patch, field):
        with pytest.raises(ConfigError) as exc:
            config_from_dict({**MINIMAL, **patch})
        assert field in str(exc.value)

    def test_missing_experiment(self):
        with pytest.raises(ConfigError, match="experiment"):
            config_from_dict({"d": 3})

    def test_malformed_json_reports_line(self, tmp_path):
        p = _write_config(tmp_path, '{\n  "experiment": "rbm",\n  "d": ,\n}')
        with pytest.raises(ConfigError, match="line 3"):
            parse_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(tmp_path / "absent.json")

    def test_paper_scale(self):
        cfg = config_from_dict({"experiment": "gmm_alpha_sweep"}, paper_scale=True)
        assert (cfg.d, cfg.n_components) == (10, 15)
        cfg = config_from_dict({"experiment": "rbm"}, paper_scale=True)
        assert (cfg.d, cfg.n_hidden) == (100, 10)

    def test_defaults_per_experiment(self):
        cfg = config_from_dict({"experiment": "ksd_decay"})
        assert cfg.d == 2 and cfg.n == (8, 16, 32, 64, 128) and cfg.methods == ("svgd_random_feature",)
        assert config_from_dict({"experiment": "gaussian_sweep"}).n == (5, 11, 20)

    def test_seed_override(self):
        assert config_from_dict(MINIMAL, seed=99).seed == 99

    def test_help_lists_every_key(self):
        text = config_help()
        for key in ("experiment", "trials", "condition_numbers", "step_size", "warmup_iters"):
            assert key in text

    def test_grid(self):
        assert config_from_dict({**MINIMAL, "experiment": "condition_sweep", "condition_numbers": [1, 10]}).grid == (1.0, 10.0)
        assert config_from_dict(MINIMAL).grid == (None,)


class TestSeeding:
    def test_derive_seed_distinct(self):
        seeds = {derive_seed(0, p, 0) for p in ("model", "init", "bank", "mc", "reference")}
        assert len(seeds) == 5
        assert derive_seed(1, "model", 3) == derive_seed(1, "model", 3)
        assert derive_seed(1, "model", 3) != derive_seed(1, "model", 4)

    def test_model_depends_only_on_trial(self):
        cfg = config_from_dict({"experiment": "condition_sweep", "condition_numbers": [2.0, 10.0], "seed": 3})
        a, sa = build_target(cfg, 2.0, 1)
        b, sb = build_target(cfg, 10.0, 1)
        assert sa == sb
        np.testing.assert_array_equal(a.mean, b.mean)

    def test_monte_carlo_method(self):
        t = GaussianTarget.standard(3)
        assert monte_carlo_method(t, 1, 5).shape == (1, 3)
        assert monte_carlo_method(t, 10, 5).tobytes() == monte_carlo_method(t, 10, 5).tobytes()

    def test_monte_carlo_rate(self):
        t = GaussianTarget.standard(2)
        ns = [100, 1000, 10_000]
        meds = [np.median([moment_report(monte_carlo_method(t, n, s), t).mse_second for s in range(20)]) for n in ns]
        slope = np.polyfit(np.log(ns), np.log(meds), 1)[0]
        assert -1.3 <= slope <= -0.7

    def test_threads(self, monkeypatch):
        monkeypatch.delenv("STEINMATCH_THREADS", raising=False)
        assert resolve_threads() == 1
        monkeypatch.setenv("STEINMATCH_THREADS", "3")
        assert resolve_threads() == 3
        assert resolve_threads(2) == 2
        monkeypatch.setenv("STEINMATCH_THREADS", "many")
        with pytest.raises(ConfigError):
            resolve_threads()


class TestRunExperiment:
    def test_gaussian_sweep_linear_is_exact(self):
        rows = run_experiment(config_from_dict({**MINIMAL, "mmd_reference": 500, "svgd": {"max_iters": 20000, "residual_tol": 1e-9}}))
        assert len(rows) == 1
        r = rows[0]
        assert r.mse_first <= 1e-6 and r.mse_second <= 1e-6
        assert r.rank_ok is True and r.m == 11 and r.stop == "tol"

    def test_all_methods_produce_rows(self):
        cfg = config_from_dict(
            {
                "experiment": "rbm", "d": 3, "n": [6], "trials": 2, "seed": 1, "mmd_reference": 300,
                "methods": ["monte_carlo", "svgd_rbf", "svgd_linear", "svgd_linear_random", "svgd_random_feature"],
                "svgd": {"max_iters": 200},
            }
        )
        rows = run_experiment(cfg)
        assert len(rows) == 10
        for r in rows:
            assert np.isfinite(r.mse_first) and np.isfinite(r.mmd_sq) and r.ksd_sq >= 0
        assert [r.sort_key() for r in rows] == sorted(r.sort_key() for r in rows)
        assert {r.m for r in rows if r.method == "svgd_linear_random"} == {6}
        assert all(r.stop == "exact" and r.m is None for r in rows if r.method == "monte_carlo")

    def test_threads_do_not_change_results(self, tmp_path):
        cfg = config_from_dict(
            {"experiment": "gmm_alpha_sweep", "alphas": [0.0, 1.0], "n": [8], "trials": 2, "mmd_reference": 200, "svgd": {"max_iters": 100}}
        )
        emit_csv(run_experiment(cfg, threads=1), tmp_path / "a.csv")
        emit_csv(run_experiment(cfg, threads=3), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_infeasible_rank_is_not_retried(self):
        # a single particle cannot give the linear bank (size d + 1 = 2) full rank
        cfg = config_from_dict(
            {"experiment": "gaussian_sweep", "d": 1, "n": [1], "methods": ["svgd_linear"], "trials": 1, "mmd_reference": 0, "svgd": {"max_iters": 0}}
        )
        r = run_experiment(cfg)[0]
        assert r.rank_ok is False
        assert r.n == 1  # m = d + 1 > n: infeasible, so no retries


class TestCsv:
    def test_empty_rows(self, tmp_path):
        p = tmp_path / "r.csv"
        emit_csv([], p)
        assert p.read_text() == ",".join(RESULT_FIELDS) + "\n"

    def test_round_trip(self, tmp_path):
        rows = [
            _row(),
            _row(method="svgd_linear", m=3, rank_ok=True, grid=2.0, mse_first=1 / 3, stop="max_iters"),
            _row(method="monte_carlo", rank_ok=None, residual=None, iterations=None, stop="exact"),
            _row(rank_ok=False, ksd_sq=None, stop="diverged"),
        ]
        p = tmp_path / "r.csv"
        emit_csv(rows, p)
        assert read_csv(p) == rows

    def test_wall_time_only_with_timing(self, tmp_path):
        p = tmp_path / "r.csv"
        emit_csv([_row(wall_time=1.5)], p)
        assert read_csv(p)[0].wall_time is None
        emit_csv([_row(wall_time=1.5)], p, timing=True)
        assert read_csv(p)[0].wall_time == 1.5

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError, match="cannot write"):
            emit_csv([], tmp_path / "missing" / "r.csv")


class TestSummary:
    def test_identical_rows(self):
        ((key, entry, rel),) = summarize([_row(trial=i) for i in range(20)])
        assert entry["count"] == 20
        assert entry["mse_second"] == (1e-3, 0.0)
        assert entry["rank_ok_frac"] is None
        assert rel == [None, None, None]

    def test_relative_to_monte_carlo(self):
        rows = [_row(method="monte_carlo", mse_second=4e-3)] + [_row(mse_second=1e-3)]
        out = {key[1]: rel for key, _, rel in summarize(rows)}
        assert out["svgd_rbf"][1] == pytest.approx(0.25)
        assert out["monte_carlo"][1] == pytest.approx(1.0)

    def test_rank_fraction(self):
        rows = [_row(rank_ok=True), _row(rank_ok=False), _row(rank_ok=True), _row(rank_ok=True)]
        assert summarize(rows)[0][1]["rank_ok_frac"] == 0.75

    def test_emit(self, tmp_path):
        p = tmp_path / "s.csv"
        emit_summary([_row(trial=i, mse_first=float(i)) for i in range(5)], p)
        lines = p.read_text().splitlines()
        assert len(lines) == 2
        header = lines[0].split(",")
        rec = dict(zip(header, lines[1].split(",")))
        assert float(rec["mse_first_median"]) == 2.0
        assert float(rec["mse_first_iqr"]) == 2.0
