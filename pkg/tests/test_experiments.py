from __future__ import annotations

import itertools
import json
import math

import numpy as np
import pytest
from scipy.special import comb

from qcert.errors import BudgetExceeded, ConfigError
from qcert.experiments import (
    ExperimentConfig,
    ExperimentResult,
    compositions,
    exhaustive_tv,
    fit_loglog,
    lr_success_counts,
    martingale_deviations,
    paninski_patterns,
    run,
    separating_transcript,
)


def tv_rows(**kw):
    return run(ExperimentConfig("tv-scan", **kw)).rows


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig("doob")
        assert cfg.d == 8 and cfg.format == "csv"
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize(
        "kw",
        [
            {"command": "nope"},
            {"command": "doob", "d": 0},
            {"command": "doob", "eps": 1.0},
            {"command": "doob", "seed": -1},
            {"command": "doob", "format": "xml"},
            {"command": "doob", "trials": True},
            {"command": "doob", "n_values": [1, -2]},
            {"command": "doob", "family": "other"},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_unknown_field(self):
        with pytest.raises(ConfigError, match="unknown"):
            ExperimentConfig.from_dict({"command": "doob", "colour": 1})

    def test_missing_command(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"d": 3})


class TestHelpers:
    def test_compositions(self):
        C = compositions(4, 3)
        assert C.shape[0] == comb(6, 2, exact=True)
        assert np.all(C.sum(axis=1) == 4)
        assert len({tuple(r) for r in C}) == C.shape[0]

    @pytest.mark.parametrize("d", [2, 3, 4, 5])
    def test_paninski_patterns(self, d):
        P = paninski_patterns(d)
        assert P.shape == (comb(2 * (d // 2), d // 2, exact=True), d)
        assert np.all(P.sum(axis=1) == 0)

    def test_fit_loglog(self):
        rows = [{"d": d, "n_star": 3 * d**1.5} for d in (4, 8, 16, 32)]
        fit = fit_loglog(rows)
        assert fit["slope"] == pytest.approx(1.5)
        assert fit_loglog(rows[:2])["slope"] is None

    def test_render_formats(self):
        res = ExperimentResult("doob", ["x", "y"], [{"x": 0.1, "y": None}], {"k": 1})
        lines = res.to_csv().splitlines()
        assert lines == ["# schema: qcert.doob/v1", "# k: 1", "x,y", "0.1,"]
        data = json.loads(res.render("json"))
        assert data["schema"] == "qcert.doob/v1" and data["rows"] == [{"x": 0.1, "y": None}]


class TestExhaustive:
    def test_paninski_bruteforce(self):
        d, n, eps = 2, 3, 0.3
        Z = [(1, -1), (-1, 1)]
        tv = 0.0
        seqs = list(itertools.product(range(d), repeat=n))
        for x in seqs:
            p0 = (1 / d) ** n
            p1 = sum(math.prod((1 + eps * z[i]) / d for i in x) for z in Z) / len(Z)
            tv += abs(p0 - p1) / 2
        assert len(seqs) == 8
        res = exhaustive_tv(np.ones(d), eps, paninski_patterns(d), n)
        assert res.tv == pytest.approx(tv, abs=1e-15)
        assert res.sequences == 8
        row = tv_rows(family="paninski", d=2, n=3, eps=eps)[0]
        assert row["path"] == "exhaustive" and row["tv"] == res.tv

    def test_success_identity(self, rng):
        for d, n in [(2, 5), (3, 6), (4, 8)]:
            pert = rng.uniform(-1, 1, (50, d))
            pert -= pert.mean(axis=1, keepdims=True)
            res = exhaustive_tv(np.ones(d), 0.2, pert, n)
            assert abs(res.success - (1 + res.tv) / 2) <= 1e-9

    def test_zero_eps(self):
        for row in tv_rows(family="mixedness", d=3, n_values=[0, 2, 5], eps=0.0, samples=50):
            assert row["tv"] == 0.0 and abs(row["success"] - 0.5) <= 1e-12

    def test_n_zero(self):
        row = tv_rows(family="paninski", d=4, n=0, eps=0.2)[0]
        assert row["tv"] == 0.0 and row["success"] == 0.5

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            exhaustive_tv(np.ones(10), 0.1, paninski_patterns(10), 8)
        with pytest.raises(BudgetExceeded):
            tv_rows(family="paninski", d=4, n=4, path="exhaustive", strategy="haar")

    def test_estimator_budget(self):
        with pytest.raises(BudgetExceeded):
            tv_rows(family="mixedness", d=4, n=21, path="estimator")


class TestEstimator:
    def test_zero_eps(self):
        for row in tv_rows(family="mixedness", d=4, n=5, eps=0.0, path="estimator", trials=50):
            assert row["tv"] == 0.0

    def test_agrees_with_exhaustive(self):
        common = dict(family="mixedness", d=3, n_values=[4, 8], eps=0.2, samples=500, seed=3)
        ex = tv_rows(path="exhaustive", **common)
        est = tv_rows(path="estimator", likelihood="bank", trials=100_000, **common)
        for a, b in zip(ex, est):
            assert abs(a["tv"] - b["tv"]) <= 3 * b["stderr"]

    def test_paninski_agrees_with_exhaustive(self):
        common = dict(family="paninski", d=4, n_values=[3, 6], eps=0.3)
        ex = tv_rows(path="exhaustive", **common)
        est = tv_rows(path="estimator", trials=100_000, **common)
        for a, b in zip(ex, est):
            assert abs(a["tv"] - b["tv"]) <= 3 * b["stderr"]

    def test_exact_path_runs(self):
        rows = tv_rows(family="mixedness", d=4, n_values=[2, 4], eps=0.2, path="estimator", trials=50)
        assert all(r["path"] == "estimator" and 0 <= r["tv"] < 1 for r in rows)

    def test_monotone_in_n(self):
        rows = tv_rows(family="mixedness", d=8, n_values=list(range(2, 15)), eps=1 / 12,
                       path="estimator", likelihood="bank", trials=50_000, samples=2000)
        for a, b in zip(rows, rows[1:]):
            assert b["tv"] >= a["tv"] - 2 * math.hypot(a["stderr"], b["stderr"])

    def test_haar_strategy_runs(self):
        rows = tv_rows(family="mixedness", d=4, n=3, eps=0.2, strategy="haar", trials=30)
        assert rows[0]["path"] == "estimator"


class TestDeterminism:
    def test_byte_identical(self):
        cfg = ExperimentConfig("tv-scan", d=3, n_values=[2, 3], samples=100, eps=0.2)
        assert run(cfg).to_csv() == run(cfg).to_csv()

    def test_workers_do_not_change_output(self):
        kw = dict(family="mixedness", d=4, n=4, eps=0.2, strategy="haar", trials=12, seed=5)
        one = run(ExperimentConfig("tv-scan", workers=1, **kw)).to_json()
        two = run(ExperimentConfig("tv-scan", workers=2, **kw)).to_json()
        assert one == two

    def test_doob_workers(self):
        kw = dict(d=4, n=6, trials=8, strategy="haar", seed=2)
        assert run(ExperimentConfig("doob", workers=1, **kw)).to_csv() == run(
            ExperimentConfig("doob", workers=2, **kw)).to_csv()

    def test_seed_matters(self):
        a = run(ExperimentConfig("doob", d=4, n=5, trials=20, seed=1)).rows
        b = run(ExperimentConfig("doob", d=4, n=5, trials=20, seed=2)).rows
        assert a != b


class TestDistinguisher:
    def test_n_zero_coin_flip(self, rng):
        assert lr_success_counts(4, 0.1, 0, 100, rng.uniform(-1, 1, (10, 4)), rng) == (0.5, 0.5)

    def test_small_scan(self):
        res = run(ExperimentConfig("distinguisher-scan", d_values=[4, 6, 8], eps=0.3, trials=400, samples=300))
        assert [r["d"] for r in res.rows] == [4, 6, 8]
        for r in res.rows:
            assert not r["censored"]
            assert r["success_h0"] >= 2 / 3 and r["success_h1"] >= 2 / 3
        assert res.meta["slope"] is not None

    def test_censored(self):
        res = run(ExperimentConfig("distinguisher-scan", d_values=[4], eps=0.01, trials=100, samples=50, max_n=64))
        assert res.rows[0]["censored"] and res.rows[0]["n_star"] is None
        assert res.meta["slope"] is None


class TestOtherCommands:
    @pytest.mark.parametrize("force", [False, True])
    def test_martingale(self, force):
        res = run(ExperimentConfig("martingale", d=8, prefixes=20, force=force))
        assert [r["family"] for r in res.rows] == ["goe", "offdiag", "multiblock"]
        assert all(r["max_deviation"] <= 1e-10 for r in res.rows)

    def test_martingale_uneven_split(self):
        dev = martingale_deviations("offdiag", 7, 10, 0, d1=4, d2=3)
        assert dev.max() <= 1e-10

    def test_martingale_unknown_family(self):
        with pytest.raises(ConfigError):
            martingale_deviations("nope", 4, 1, 0)

    def test_doob(self):
        res = run(ExperimentConfig("doob", d=8, n_values=[10, 20], trials=200))
        assert all(r["within_bound"] and r["bound"] == 8 * r["n"] * 8 * 7 for r in res.rows)
        assert "loglog_slope" in res.meta

    def test_kappa_demo(self):
        row = run(ExperimentConfig("kappa-demo", a=0.1, b=0.1, t=4)).rows[0]
        assert row["k_frobenius"] <= 1e-12
        assert row["kappa"] == pytest.approx(100.0, abs=1e-9) and row["expected_kappa"] == pytest.approx(100.0)

    def test_separating_transcript_norms(self):
        Z, W, A, B = separating_transcript(0.2, 0.05, 6)
        q = Z @ (A[0] * Z[0]) + np.einsum("ij,ij->i", W, W) * B[0]
        assert np.allclose(q, 2 * 0.2 * 0.05 / 0.25)

    def test_bound_calc(self, tmp_path):
        row = run(ExperimentConfig("bound-calc", sigma=[0.25] * 4, eps=0.1)).rows[0]
        assert row["lower"] == pytest.approx(800) and row["upper"] == pytest.approx(800)
        f = tmp_path / "state.json"
        f.write_text(json.dumps([0.25] * 4))
        assert run(ExperimentConfig("bound-calc", sigma=str(f), eps=0.1)).rows[0]["lower"] == pytest.approx(800)

    def test_bound_calc_needs_sigma(self):
        with pytest.raises(ConfigError):
            run(ExperimentConfig("bound-calc"))
