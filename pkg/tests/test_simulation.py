import numpy as np
import pandas as pd
import pytest

from hdmed import simulation as sim
from hdmed.distributions import chi2_ppf
from hdmed.simulation import (ErrorLaw, RepOutcome, SimConfig, aggregate_tables, ar_covariance,
                              build_gamma, draw_errors, generate_dataset, outcomes_frame,
                              power_curve, rep_rng, run_replications, theoretical_power)
from hdmed.solver import SolverConfig

SMALL = SimConfig(n=100, p=40, c1=0.5, c2=0.0, n_reps=4, seed=99)


class TestGamma:
    def test_zero_multiplier(self, rng):
        assert np.array_equal(build_gamma(500, 0.0, rng), np.zeros((1, 500)))

    def test_head(self, rng):
        G = build_gamma(500, 0.5, rng)
        np.testing.assert_allclose(G[0, :5], [0.1, 0.2, 0.3, 0.4, 0.5], rtol=1e-15)
        assert G.shape == (1, 500)

    def test_indirect_effect_identity(self, rng):
        a0 = sim.true_alpha0(500)
        for c1 in (-1.0, -0.2, 0.3, 0.5):
            G = build_gamma(500, c1, rng)
            assert (G @ a0)[0] == pytest.approx(1.4 * c1, abs=1e-14)

    def test_tail_spread(self):
        G = build_gamma(20005, 1.0, np.random.default_rng(0))
        assert G[0, 5:].std() == pytest.approx(0.1, rel=0.03)

    def test_requires_five_mediators(self, rng):
        with pytest.raises(ValueError):
            build_gamma(4, 1.0, rng)


class TestDGP:
    def test_null_outcome_uncorrelated_with_exposure(self):
        cfg = SimConfig(c1=0.0, c2=0.0)
        r = []
        for k in range(1000):
            d = generate_dataset(cfg, k)[0]
            r.append(np.corrcoef(d.y, d.X[:, 0])[0, 1])
        assert np.mean(np.abs(r) <= 0.12) >= 0.95

    @pytest.mark.parametrize("law", list(ErrorLaw))
    def test_error_variance(self, law):
        e = draw_errors(law, 100_000, np.random.default_rng(1))
        assert 0.24 <= e.var() <= 0.26

    def test_t6_tails_heavier(self):
        rng = np.random.default_rng(2)
        e = draw_errors(ErrorLaw.SCALED_T6, 200_000, rng)
        kurt = np.mean(e ** 4) / np.mean(e ** 2) ** 2
        assert kurt == pytest.approx(6.0, rel=0.15)  # t_6 kurtosis 3 + 6/(6-4)

    def test_mediator_covariance(self):
        cfg = SimConfig(n=1000, p=10, c1=0.0, n_reps=100)
        M = np.vstack([generate_dataset(cfg, k)[0].M for k in range(100)])
        S = np.cov(M, rowvar=False)
        assert abs(S[0, 1] - 0.5) <= 0.02
        assert np.max(np.abs(S - ar_covariance(10, 0.5))) <= 0.02

    def test_truth_record(self):
        for c1 in (0.0, -0.2, 0.5):
            d, truth = generate_dataset(SimConfig(c1=c1, c2=0.3, n=50, p=10), 0)
            assert truth.beta[0] == 1.4 * c1
            assert truth.alpha1[0] == 0.3
            assert truth.active.tolist() == [0, 1, 2, 3, 4]
            assert (d.n, d.p, d.q) == (50, 10, 1)

    def test_streams_depend_only_on_seed_and_rep(self):
        a = rep_rng(5, 3).standard_normal(4)
        b = rep_rng(5, 3).standard_normal(4)
        c = rep_rng(5, 4).standard_normal(4)
        assert np.array_equal(a, b) and not np.array_equal(a, c)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(rho=1.0)
        with pytest.raises(ValueError):
            SimConfig(n_reps=0)
        with pytest.raises(ValueError):
            SimConfig(alpha_level=1.0)


class TestReplications:
    def test_deterministic(self):
        a = run_replications(SMALL)
        b = run_replications(SMALL)
        pd.testing.assert_frame_equal(a.drop(columns="fit_seconds"), b.drop(columns="fit_seconds"))

    def test_parallel_matches_sequential(self):
        a = run_replications(SMALL, workers=1)
        b = run_replications(SMALL, workers=2)
        pd.testing.assert_frame_equal(a.drop(columns="fit_seconds"), b.drop(columns="fit_seconds"))

    def test_table_layout_and_flags(self):
        df = run_replications(SMALL)
        assert df.rep_id.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]
        assert set(df.method) == {"penalized", "oracle"}
        crit = chi2_ppf(1 - SMALL.alpha_level, 1)
        assert (df.reject_indirect == (df.S_n > crit)).all()
        assert (df.reject_direct == (df.T_n > crit)).all()
        assert (df.active_set_size[df.method == "oracle"] == 5).all()

    def test_failures_are_flagged(self, monkeypatch):
        calls = {"n": 0}
        real = sim.fit_path_select

        def flaky(*a, **k):
            calls["n"] += 1
            if calls["n"] == 1:
                raise RuntimeError("boom")
            return real(*a, **k)

        monkeypatch.setattr(sim, "fit_path_select", flaky)
        df = run_replications(SMALL)
        bad = df[~df.ok]
        assert len(bad) == 1 and "boom" in bad.error.iloc[0]
        assert bad.rep_id.iloc[0] == 0 and bad.method.iloc[0] == "penalized"
        assert df.ok.sum() == 7

    def test_one_method_only(self):
        df = run_replications(SMALL, methods=("oracle",))
        assert set(df.method) == {"oracle"} and len(df) == SMALL.n_reps


class TestAggregate:
    def test_identical_replications(self):
        rows = [RepOutcome(k, "oracle", alpha1_hat=0.1, beta_hat=0.6, se_alpha1=0.03,
                           se_beta=0.1, active_set_size=5, fit_seconds=0.01) for k in range(5)]
        s = aggregate_tables(outcomes_frame(rows), truth_alpha1=0.0, truth_beta=0.7)
        m = s["methods"]["oracle"]
        assert m["alpha1"]["sd"] == 0.0 and m["beta"]["sd"] == 0.0
        assert m["alpha1"]["bias"] == pytest.approx(10.0)
        assert m["beta"]["bias"] == pytest.approx(-10.0)
        assert m["alpha1"]["mean_se"] == pytest.approx(3.0)
        assert s["scale"] == 100.0

    def test_single_replication_has_no_sd(self):
        rows = [RepOutcome(0, "oracle", alpha1_hat=0.1, beta_hat=0.6, se_alpha1=0.03, se_beta=0.1)]
        m = aggregate_tables(outcomes_frame(rows), 0.0, 0.7)["methods"]["oracle"]
        assert m["alpha1"]["sd"] is None and m["beta"]["sd_se"] is None

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_tables(pd.DataFrame(), 0.0, 0.0)


class TestPower:
    def test_zero_point_reproduces_size_run(self):
        cfg = SimConfig(n=100, p=40, c1=0.5, c2=0.3, n_reps=4, seed=11)
        table, out = power_curve(cfg, "c2", [0.0], return_outcomes=True)
        size = run_replications(SimConfig(n=100, p=40, c1=0.5, c2=0.0, n_reps=4, seed=11))
        pd.testing.assert_frame_equal(out.drop(columns=["fit_seconds", "sweep_value"]),
                                      size.drop(columns="fit_seconds"))
        pen = size[size.method == "penalized"]
        assert table.rejection_rate.iloc[0] == pen.reject_direct.mean()
        assert table.theoretical.iloc[0] == cfg.alpha_level

    def test_columns_and_mc_se(self):
        table = power_curve(SMALL, "c1", [0.0, 0.3])
        assert len(table) == 2
        for col in ("value", "rejection_rate", "mc_se", "theoretical", "oracle_rejection_rate"):
            assert col in table
        r, k = table.rejection_rate.to_numpy(), table.n_ok.to_numpy()
        np.testing.assert_allclose(table.mc_se, np.sqrt(r * (1 - r) / k))

    def test_empty_sweep(self):
        with pytest.raises(ValueError):
            power_curve(SMALL, "c1", [])
        with pytest.raises(ValueError):
            power_curve(SMALL, "rho", [0.1])

    def test_theory_level_and_growth(self):
        cfg = SimConfig(c1=0.5, c2=0.0)
        assert theoretical_power(cfg, "c1", 0.0) == cfg.alpha_level
        assert theoretical_power(cfg, "c2", 0.0) == cfg.alpha_level
        w = [theoretical_power(cfg, "c1", v) for v in (0.1, 0.2, 0.4)]
        assert w[0] < w[1] < w[2]
        assert theoretical_power(cfg, "c2", -0.2) > 0.99


def test_fixed_point_gap_recorded():
    df = run_replications(SMALL, SolverConfig(), methods=("penalized",))
    assert (df.lla_fixed_point_gap <= SolverConfig().cd_tol).all()
