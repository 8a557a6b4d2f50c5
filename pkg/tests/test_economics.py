import dataclasses
import math

import numpy as np
import pytest

from vfl_tse import economics as ec
from vfl_tse.errors import ConfigError

ECON = ec.EconParams()
COST = ec.costs()


def rate_by_hand(d_m):
    pl = 128.1 + 37.5 * math.log10(d_m / 1000)
    snr = 0.1 * 10 ** (-pl / 10) / (10 ** (-20.4) * 10e6)  # -174 dBm/Hz = 10^-20.4 W/Hz
    return 10e6 * math.log2(1 + snr)


def test_rate_matches_hand_formula():
    assert ec.uplink_rate(ec.CommParams()) == pytest.approx(rate_by_hand(300), rel=1e-9)
    assert ec.uplink_rate(d=120) == pytest.approx(rate_by_hand(120), rel=1e-9)


def test_rate_falls_with_distance_and_power():
    assert ec.uplink_rate(d=100) > ec.uplink_rate(d=500)
    assert ec.uplink_rate(ec.CommParams(p=1e-30)) < 1e-6


def test_bad_distance():
    with pytest.raises(ConfigError):
        ec.uplink_rate(d=0)


def test_collection_cost():
    comm = ec.CommParams()
    R = ec.uplink_rate(comm)
    assert ec.collection_cost(comm) == pytest.approx(10 * 0.1 * 640 / (0.4 * R), rel=1e-12)
    assert ec.collection_cost(comm, rate=2 * R) == pytest.approx(ec.collection_cost(comm) / 2, rel=1e-12)
    same = ec.CommParams(dT=0.4)
    assert ec.collection_cost(same) == pytest.approx(0.1 * 640 / R, rel=1e-12)


def test_processing_cost():
    assert ec.processing_cost() == pytest.approx(0.3, rel=1e-12)
    assert ec.processing_cost(ec.CommParams(D=160)) == pytest.approx(0.6, rel=1e-12)
    assert ec.processing_cost(compute=ec.ComputeParams(fc=2e9)) == pytest.approx(1.2, rel=1e-12)


def test_units_are_configurable():
    bits = ec.CommParams(D=640, D_unit="bits")
    assert ec.collection_cost(bits) == pytest.approx(ec.collection_cost(), rel=1e-12)
    assert ec.processing_cost(bits) == pytest.approx(0.3, rel=1e-12)
    metres = ec.CommParams(distance_unit="m")
    assert ec.uplink_rate(metres) < ec.uplink_rate()


def test_cost_aggregates():
    scale = 2.44e-4 * 8640
    assert COST.H == pytest.approx(scale * (COST.E_t + 0.3 + 7.2e-4), rel=1e-12)
    assert COST.H_prime == pytest.approx(scale * 7.2e-4, rel=1e-12)
    assert COST.G == pytest.approx(scale * (COST.E_t + COST.E_p), rel=1e-12)


def test_mp_utilities():
    assert ec.mp_utility("uncaught_lazy", ECON, COST, 250) - ec.mp_utility("honest", ECON, COST, 250) == pytest.approx(COST.G, rel=1e-12)
    assert ec.mp_utility("caught_repeat", ECON, COST, 250, 1) == ec.mp_utility("caught", ECON, COST, 250)
    assert ec.mp_utility("caught", ECON, COST, 250) == pytest.approx(-100.0015, abs=1e-4)
    with pytest.raises(ConfigError):
        ec.mp_utility("bored", ECON, COST, 250)


def test_ma_utilities():
    assert ec.accuracy_profit(ECON, 23) == pytest.approx(400)
    assert ec.ma_utility("trust_honest", ECON, 23, 250) == pytest.approx(250)
    assert ec.ma_utility("trust_honest", ECON, 25, 250) == -150
    assert ec.ma_utility("trust_honest", ECON, 30, 250) == -150
    assert ec.ma_utility("inspect_caught_repeat", ECON, 23, 250, 11) == 2450
    assert ec.ma_utility("inspect_caught", ECON, 23, 250) == -50
    assert ec.ma_utility("uncaught_lazy", ECON, 23, 250) == -150
    assert ec.ma_utility("inspect_honest", ECON, 23, 250) == pytest.approx(-50)


def test_profit_is_right_continuous_at_threshold():
    assert ec.accuracy_profit(ECON, 25 - 1e-9) == pytest.approx(0, abs=1e-6)
    assert ec.accuracy_profit(ECON, 25) == 0


@pytest.mark.parametrize("seed", range(5))
def test_laziness_tempting_for_positive_costs(seed):
    rng = np.random.default_rng(seed)
    comm = ec.CommParams(d=rng.uniform(100, 500), D=rng.uniform(1, 1000))
    compute = ec.ComputeParams(c=rng.uniform(1e2, 1e5), Er=rng.uniform(1e-5, 1e-2))
    c = ec.costs(comm, compute)
    assert ec.mp_utility("uncaught_lazy", ECON, c, 250) > ec.mp_utility("honest", ECON, c, 250)


def test_utilities_are_affine_in_reward_penalty_inspection():
    pts = [(150.0, 250.0, 300.0), (175.0, 300.0, 250.0), (200.0, 350.0, 200.0)]  # collinear in (W, rho, S)
    for variant in ec.MA_VARIANTS:
        v = [ec.ma_utility(variant, dataclasses.replace(ECON, W=w, S=s), 23, r, 3) for w, r, s in pts]
        assert v[1] - v[0] == pytest.approx(v[2] - v[1], abs=1e-9)
    for variant in ec.MP_VARIANTS:
        v = [ec.mp_utility(variant, dataclasses.replace(ECON, W=w, S=s), COST, r, 3) for w, r, s in pts]
        assert v[1] - v[0] == pytest.approx(v[2] - v[1], abs=1e-9)


def test_payoff_table():
    t = ec.payoff_table(ECON, COST, 23, 250)
    assert t[(False, False)] == ec.PayoffCell(250, 150 - COST.H)
    assert t[(True, True)].u_ma == -50
    te = ec.payoff_table(ECON, COST, 23, 250, 11, escalated=True)
    assert te[(True, True)].u_ma == 2450 and te[(True, True)].u_mp == pytest.approx(150 - COST.H_prime - 2750)
    assert te[(False, True)] == t[(False, True)]


def test_non_finite_cell_rejected():
    with pytest.raises(ConfigError):
        ec.PayoffCell(float("inf"), 0)


@pytest.mark.parametrize("kw", [{"B": 0}, {"p": -1}, {"D_unit": "kb"}, {"distance_unit": "mi"}])
def test_bad_comm_params(kw):
    with pytest.raises(ConfigError):
        ec.CommParams(**kw)


def test_cost_summary_keys():
    s = ec.cost_summary()
    assert set(s) == {"R_bps", "E_t", "E_p", "E_r", "H", "H_prime", "H_minus_H_prime"}
    assert s["H_minus_H_prime"] == pytest.approx(0.63251, abs=1e-4)
