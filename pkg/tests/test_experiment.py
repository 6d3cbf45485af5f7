import json
import math

import numpy as np
import pytest

from torusmatch import experiment as ex
from torusmatch.experiment import (CSV_COLUMNS, ExperimentConfig, ExperimentFailedError,
                                   check_concentration, check_dispersion, dispersion_rate_ratio,
                                   format_config, normalisation, parse_config, run_experiment,
                                   run_trial)
from torusmatch.heat import smooth_cloud, sup_deviation
from torusmatch.qpoisson import QPoissonConvergenceError
from torusmatch.sampling import sample_uniform
from torusmatch.wasserstein import brute_force_wp


def small(**kw):
    base = dict(n_values=(16,), trials_per_n=1, grid_N=32, record_timing=False)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(beta=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(p=1.0)
    with pytest.raises(ValueError):
        ExperimentConfig(ot_mode="sinkhorn")
    with pytest.raises(ValueError):
        ExperimentConfig(n_values=(1,))
    cfg = ExperimentConfig(p=3.0, beta=2.0)
    assert cfg.q == pytest.approx(1.5)
    assert cfg.t_n(500) == pytest.approx(math.log(500) ** 2 / 500)
    assert cfg.t_n(500) == pytest.approx(0.0772, abs=1e-4)


def test_config_text_round_trip():
    cfg = ExperimentConfig(p=1.5, n_values=(500, 4000), trials_per_n=7, beta=3.0, root_seed=2**63 - 5,
                           ot_mode="plus_grid_sandwich", record_timing=False)
    assert parse_config(format_config(cfg)) == cfg
    text = "# comment\np = 3   # trailing\nn_values = 100, 200\n\ntrials_per_n = 4\n"
    c2 = parse_config(text, trials_per_n=9)
    assert (c2.p, c2.n_values, c2.trials_per_n) == (3.0, (100, 200), 9)
    with pytest.raises(ValueError):
        parse_config("bogus = 1")
    with pytest.raises(ValueError):
        parse_config("p 2")


def test_n2_smoke():
    cfg = small(n_values=(2,))
    rec = run_trial(cfg, 2, 0)
    X = sample_uniform(2, cfg.root_seed, "X", 0)
    Y = sample_uniform(2, cfg.root_seed, "Y", 0)
    assert rec.w_p_p == brute_force_wp(X, Y, 2).cost_p
    assert rec.ok and math.isfinite(rec.pde_energy) and rec.pde_energy >= 0


def test_trial_determinism():
    cfg = small(n_values=(40,), p=1.5)
    a, b = run_trial(cfg, 40, 3), run_trial(cfg, 40, 3)
    assert a.csv_row() == b.csv_row()
    assert run_trial(cfg, 40, 4).csv_row() != a.csv_row()


def test_single_record_run(tmp_path):
    res = run_experiment(small(), tmp_path / "t.csv", tmp_path / "s.json")
    assert len(res.records) == 1
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[0] == "p,n,trial,seed,t_n,w_p_p,pde_energy,c_measured,residual,solve_ms,ot_ms,status"
    assert len(lines) == 2
    summ = json.loads((tmp_path / "s.json").read_text())
    assert {"n", "mean_wpp", "se_wpp", "mean_energy", "se_energy", "norm_wpp", "norm_energy",
            "norm_gap", "exceed_frac"} <= set(summ[0])


def test_byte_identical_csv_serial_and_parallel(tmp_path):
    cfg = small(n_values=(20, 30), trials_per_n=3)
    run_experiment(cfg, tmp_path / "a.csv")
    run_experiment(cfg, tmp_path / "b.csv")
    run_experiment(ExperimentConfig(**{**cfg.__dict__, "workers": 2}), tmp_path / "c.csv")
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_summary_definitions():
    cfg = small(n_values=(30,), trials_per_n=4, p=3.0)
    res = run_experiment(cfg)
    s = res.summary[0]
    w = [r.w_p_p for r in res.records]
    e = [r.pde_energy for r in res.records]
    k = normalisation(30, 3.0)
    assert k == pytest.approx((30 / math.log(30)) ** 1.5)
    assert s.mean_wpp == pytest.approx(np.mean(w), rel=1e-15)
    assert s.se_wpp == pytest.approx(np.std(w, ddof=1) / 2, rel=1e-12)
    assert s.norm_gap == pytest.approx(abs(np.mean(w) - np.mean(e)) * k, rel=1e-12)
    assert s.trials == 4 and s.failed == 0


def test_failure_policy(monkeypatch, tmp_path):
    real = ex.solve_qpoisson

    def flaky(problem, opts=None):
        raise QPoissonConvergenceError("forced", solution=None)

    monkeypatch.setattr(ex, "solve_qpoisson", flaky)
    cfg = small(n_values=(10,), trials_per_n=3)
    with pytest.raises(ExperimentFailedError) as info:
        run_experiment(cfg, tmp_path / "t.csv")
    assert info.value.summary[0].failed == 3
    assert "solver_failed" in (tmp_path / "t.csv").read_text()

    # one failure in 101 trials is under the 1% limit and is excluded from the means
    calls = {"k": 0}

    def one_bad(problem, opts=None):
        calls["k"] += 1
        if calls["k"] == 1:
            raise QPoissonConvergenceError("forced")
        return real(problem, opts)

    monkeypatch.setattr(ex, "solve_qpoisson", one_bad)
    res = run_experiment(small(n_values=(8,), trials_per_n=101, grid_N=16))
    assert res.summary[0].failed == 1
    good = [r.w_p_p for r in res.records if r.ok]
    assert len(good) == 100 and res.summary[0].mean_wpp == pytest.approx(np.mean(good), rel=1e-15)


def test_sandwich_mode_records_extras():
    cfg = small(n_values=(200,), ot_mode="plus_grid_sandwich", grid_N=64, sandwich_grid_N=32)
    rec = run_trial(cfg, 200, 0)
    assert rec.ok
    assert math.isfinite(rec.grid_w_p_p) and math.isfinite(rec.grid_energy) and rec.grid_c >= 0
    assert rec.dominance_ok is True


def test_c_measured_concentrates_at_n1000():
    cfg = ExperimentConfig(p=2.0, beta=2.0)
    t = cfg.t_n(1000)
    c = [2 * max(sup_deviation(smooth_cloud(sample_uniform(1000, cfg.root_seed, s, k), t, 128))
                 for s in ("X", "Y")) for k in range(100)]
    assert np.mean(np.array(c) < 1) >= 0.99


# --- dispersion and concentration --------------------------------------------------------


def test_dispersion_direct_evaluation_large_t():
    rep = check_dispersion(n=100, t=1.0, seeds=range(3), grid_N=16)
    assert np.all(rep.w_p <= rep.bound) == rep.holds
    assert rep.holds and rep.violations == 0
    assert rep.c0 == pytest.approx(2.0)


def test_dispersion_n500():
    rep = check_dispersion(n=500, t=0.01, p=2.0, seeds=range(20), grid_N=64)
    assert rep.holds, rep.w_p.max()
    assert math.isfinite(rep.rate_diagnostic)


def test_dispersion_rejects_underresolved():
    with pytest.raises(ValueError):
        check_dispersion(n=100, t=0.0005, grid_N=64)


def test_dispersion_rate_alpha():
    r = dispersion_rate_ratio(n=500, alphas=(50.0, 200.0))
    growth = r[200.0] / r[50.0]
    target = math.log(200) / math.log(50)
    assert target / 2 <= growth <= 2 * target


def test_concentration_small():
    rep = check_concentration(n_values=(1000, 2000), K_values=(5.0, 20.0), thresholds=(0.25, 2.0),
                              trials=100, grid_N=64)
    assert rep.frequency(20.0, 1000, 2.0) == 0.0 and rep.frequency(20.0, 2000, 2.0) == 0.0
    for n in (1000, 2000):
        for d in (0.25, 2.0):
            assert rep.monotone_in_K(n, d)


def test_concentration_huge_t_is_flat():
    rep = check_concentration(n_values=(50,), K_values=(1e4,), thresholds=(1e-6, 0.5), trials=5, grid_N=16)
    assert all(v == 0.0 for v in rep.frequencies.values())
