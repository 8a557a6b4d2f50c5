import csv
import json
import math

import numpy as np
import pytest

from vfl_tse import economics as ec
from vfl_tse import game
from vfl_tse.errors import ConfigError
from vfl_tse.game import GameParams, StrategyState

DEFAULT = GameParams()
G_DEFAULT = ec.costs().G


def test_defaults_derive_costs():
    assert DEFAULT.G == pytest.approx(G_DEFAULT, rel=1e-15)
    assert DEFAULT.a == 10.0


@pytest.mark.parametrize("kw,msg", [({"beta": 0.5}, "beta must be ≥ 1"), ({"rho": 0}, "rho"), ({"gamma0": 1.5}, "gamma0")])
def test_param_validation(kw, msg):
    with pytest.raises(ConfigError, match=msg):
        GameParams(**kw)


def test_one_shot_equilibrium():
    eq = game.one_shot_equilibrium(DEFAULT)
    assert eq.gamma == 0.75
    assert eq.epsilon == pytest.approx(G_DEFAULT / 400, rel=1e-12)
    assert not (eq.gamma_clamped or eq.epsilon_clamped)
    far = game.one_shot_equilibrium(GameParams(rho=1e12))
    assert far.gamma < 1e-9 and far.epsilon < 1e-9


def test_equilibrium_clamps():
    eq = game.one_shot_equilibrium(GameParams(rho=50, S=300))
    assert eq.gamma == 1.0 and eq.gamma_clamped


def test_ma_indifferent_at_gamma_star():
    assert abs(game.indifference_residuals(DEFAULT)["ma"]) < 1e-9
    for rho in (100, 250, 400):
        assert abs(game.indifference_residuals(GameParams(rho=rho, S=100))["ma"]) < 1e-9


def test_mp_indifferent_at_g_over_rho():
    # with the caught cell W - H' - rho the MP is indifferent at G / rho
    p = DEFAULT
    assert abs(game.indifference_residuals(p, epsilon=p.G / p.rho)["mp"]) < 1e-12
    assert game.indifference_residuals(p)["mp"] == pytest.approx(p.G * p.W / (p.rho + p.W), rel=1e-9)


def test_worked_recursion_example():
    p = GameParams(S=100)
    st = game.recursion_step(StrategyState(0.4, 0.5), p, "direct")
    assert st.state.gamma == pytest.approx(100 / 750, rel=1e-15)


def test_beta_one_is_memoryless():
    p = GameParams(beta=1, S=100)
    for g, e in ((0.1, 0.9), (0.7, 0.2), (1.0, 1.0)):
        st = game.recursion_step(StrategyState(g, e), p, "direct")
        assert st.state.gamma == pytest.approx(100 / 250, rel=1e-15)
        assert st.state.epsilon == pytest.approx(p.G / 250, rel=1e-15)


def test_fixed_point():
    p = GameParams(S=100)
    g = 0.4
    e = p.W / (g * p.rho * p.a)
    direct = game.recursion_step(StrategyState(g, e), p, "direct").state
    assert direct.gamma == pytest.approx(p.S / (p.rho + p.W), rel=1e-12)
    harm = game.recursion_step(StrategyState(g, e), p, "harmonic").state
    assert harm.gamma == pytest.approx(g, rel=1e-12) and harm.epsilon == pytest.approx(e, rel=1e-12)


def test_forms_agree_at_equilibrium():
    p = GameParams(S=100, rho=250, beta=11, H=1000.0, H_prime=0.0)
    eq = game.one_shot_equilibrium(p)
    s = StrategyState(eq.gamma, eq.epsilon)
    a = game.recursion_step(s, p, "direct").state
    b = game.recursion_step(s, p, "harmonic").state
    assert a.gamma == pytest.approx(b.gamma, rel=1e-12)


def test_unknown_form():
    with pytest.raises(ConfigError):
        game.recursion_step(StrategyState(0.5, 0.5), DEFAULT, "spiral")


def test_gamma_zero_stays_zero():
    st = game.recursion_step(StrategyState(0.0, 0.5), DEFAULT, "harmonic")
    assert st.state.gamma == 0.0


STRESS = dict(H=1000.0, H_prime=0.0)


def test_harmonic_residual_and_stationarity():
    p = GameParams(rho=250, beta=11, **STRESS)
    path = game.strategy_path(p, 200, start=(0.9, 0.6))
    rg, re, excluded = game.harmonic_identity_check(path, p)
    assert rg < 1e-10 and re < 1e-10
    assert path.converged and path.i_star > 10
    frozen = slice(path.i_star - 1, None)
    assert np.all(path.gamma[frozen] == path.gamma[path.i_star - 1])
    assert np.all(path.epsilon[frozen] == path.epsilon[path.i_star - 1])


def test_clamped_step_is_excluded():
    # live harmonic steps only shrink gamma; the direct form clamps once S > q + rho
    p = GameParams(rho=100, beta=11, **STRESS)
    path = game.strategy_path(p, 5, form="direct", start=(0.5, 0.35))
    assert path.gamma_clamped[1] and path.gamma[1] == 1.0
    _, _, excluded = game.harmonic_identity_check(path, p)
    assert excluded and all(path.gamma_clamped[i] or path.epsilon_clamped[i] for i in excluded)


def test_boundary_product():
    assert DEFAULT.W / (DEFAULT.rho * DEFAULT.a) == pytest.approx(0.06)
    p = GameParams(**STRESS)
    path = game.strategy_path(p, 200, start=(0.9, 0.6))
    assert path.i_star > 10
    i = path.i_star - 1
    assert path.gamma[i] * path.epsilon[i] <= 0.06 * (1 + 1e-6)


@pytest.mark.parametrize("rho", [100, 250, 400])
@pytest.mark.parametrize("beta", [2, 6, 11])
def test_bounds_hold_across_grid(rho, beta):
    for extra, starts in (({}, (None, "initial")), (STRESS, ((0.95, 0.95), (0.9, 0.6), (0.6, 0.99)))):
        p = GameParams(rho=rho, beta=beta, **extra)
        for start in starts:
            path = game.strategy_path(p, 500, start=start)
            rep = game.check_bounds(path, p)
            if path.gamma_clamped.any() or path.epsilon_clamped.any() or not path.converged:
                continue
            assert rep.passed, rep.to_json()


def test_stress_grid_has_long_live_paths():
    lengths = []
    for rho in (100, 250, 400):
        for beta in (2, 6, 11):
            p = GameParams(rho=rho, beta=beta, **STRESS)
            lengths.append(game.strategy_path(p, 500, start=(0.9, 0.6)).i_star)
    assert sum(n >= 20 for n in lengths) >= 6


def test_product_decreasing_with_small_inspection_cost():
    p = GameParams(rho=250, beta=2, S=100, **STRESS)
    path = game.strategy_path(p, 100, start=(0.99, 0.99))
    prod = path.gamma[: path.i_star] * path.epsilon[: path.i_star]
    live = prod[:-1] * p.rho * p.a > p.W
    assert live.any() and np.all(np.diff(prod)[live] < 0)


def test_short_path_not_applicable():
    path = game.strategy_path(DEFAULT, 10)
    assert path.i_star == 1
    rep = game.check_bounds(path, DEFAULT)
    assert not rep.applicable and rep.passed and rep.clauses == []


def test_gamma_zero_reported_trivially():
    p = GameParams(**STRESS)
    path = game.strategy_path(p, 10, start=(0.0, 0.9))
    assert path.reason in ("product", "gamma_zero")
    path = game.StrategyPath(np.array([0.9, 0.0]), np.array([0.9, 0.5]), np.zeros(2, bool), np.zeros(2, bool), 2, "gamma_zero")
    rep = game.check_bounds(path, p)
    clause = next(c for c in rep.clauses if c["clause"] == "gamma_bound")
    assert clause["pass"] and "zero" in clause["note"]


def test_bound_report_json(tmp_path):
    p = GameParams(**STRESS)
    rep = game.check_bounds(game.strategy_path(p, 100, start=(0.9, 0.6)), p)
    game.write_bound_report(rep, tmp_path / "b.json")
    doc = json.loads((tmp_path / "b.json").read_text())
    assert {c["clause"] for c in doc["clauses"]} == {"product_decreasing", "gamma_bound", "epsilon_bound"}
    assert set(doc["clauses"][0]) == {"clause", "bound", "observed", "margin", "pass", "note"}


def test_honest_mp_drives_inspection_down():
    p = GameParams(gamma0=0.0)
    t = game.simulate_repeated_game(p, "empirical", 500, seed=3)
    assert t.mp_action.sum() == 0
    assert np.all(np.diff(t.epsilon) < 0) and t.final_epsilon < 0.1


def test_same_seed_same_trajectory():
    a = game.simulate_repeated_game(DEFAULT, cycles=200, seed=5)
    b = game.simulate_repeated_game(DEFAULT, cycles=200, seed=5)
    c = game.simulate_repeated_game(DEFAULT, cycles=200, seed=6)
    assert list(a.rows()) == list(b.rows())
    assert list(a.rows()) != list(c.rows())


def test_bcl_drives_sloth_to_one():
    for seed in range(3):
        t = game.run_baseline("bcl", DEFAULT, 500, seed)
        assert t.final_gamma > 0.9 and t.ma_action.sum() == 0


def test_sgf_has_no_live_recursion():
    # beta = 1 zeroes the escalation term, so the product condition holds at once
    path = game.strategy_path(GameParams(beta=1.0, S=100), 5, start=(0.3, 0.3))
    assert path.i_star == 1 and path.reason == "product"
    assert np.all(path.gamma == 0.3)


def test_escalation_lowers_sloth():
    g11 = np.mean([game.simulate_repeated_game(GameParams(beta=11), cycles=500, seed=s).final_gamma for s in range(10)])
    g2 = np.mean([game.simulate_repeated_game(GameParams(beta=2), cycles=500, seed=s).final_gamma for s in range(10)])
    assert g11 <= g2


def test_escalated_cell_follows_a_catch():
    t = game.simulate_repeated_game(DEFAULT, cycles=500, seed=0)
    caught = (t.mp_action == 1) & (t.ma_action == 1)
    repeat = np.flatnonzero(caught[:-1] & caught[1:]) + 1
    assert len(repeat)
    assert np.allclose(t.u_ma[repeat], 11 * 250 - 300)
    first = np.flatnonzero(caught & ~np.r_[False, caught[:-1]])
    assert np.allclose(t.u_ma[first], 250 - 300)


def test_closed_form_mode_follows_path():
    p = GameParams(gamma0=0.95, epsilon0=0.95, **STRESS)
    t = game.simulate_repeated_game(p, "closed_form", 50, seed=0)
    path = game.strategy_path(p, 50, start="initial")
    assert np.array_equal(t.gamma, path.gamma) and np.array_equal(t.epsilon, path.epsilon)


def test_mae_series_drives_profit():
    trust_honest = GameParams(gamma0=0.0, epsilon0=0.0)
    t = game.simulate_repeated_game(trust_honest, cycles=3, mae_series=[23.0, 25.0, 20.0])
    assert t.u_ma.tolist() == [250.0, -150.0, 850.0]


@pytest.mark.parametrize("kw", [{"mode": "psychic"}, {"cycles": 0}, {"eta": 0}, {"mechanism": "tax"}, {"lazy_mae": 20.0},
                                {"mae_series": [23.0]}])
def test_simulation_errors(kw):
    args = dict(cycles=5)
    args.update(kw)
    with pytest.raises(ConfigError):
        game.simulate_repeated_game(DEFAULT, **args)


def test_trajectory_csv(tmp_path):
    t = game.simulate_repeated_game(DEFAULT, cycles=20, seed=1)
    t.to_csv(tmp_path / "t.csv")
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert list(rows[0]) == ["cycle", "gamma", "epsilon", "mp_action", "ma_action", "u_mp", "u_ma", "cum_u_mp", "cum_u_ma", "clamped_flags"]
    assert [int(r["cycle"]) for r in rows] == list(range(1, 21))
    assert float(rows[-1]["cum_u_ma"]) == pytest.approx(t.u_ma.sum())
    assert all(math.isfinite(float(r["u_mp"])) for r in rows)
