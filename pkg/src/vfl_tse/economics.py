"""Provider costs, utilities of both parties, and the payoff cells of the game."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .errors import ConfigError


def _check_positive(obj):
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, (int, float)) and not isinstance(v, bool) and not v > 0:
            raise ConfigError(f"{type(obj).__name__}.{f.name} must be > 0, got {v}")


@dataclass(frozen=True)
class CommParams:
    B: float = 10e6  # bandwidth, Hz
    p: float = 0.1  # vehicle transmit power, W
    d: float = 300.0  # vehicle-provider distance, m
    N0_dbm_hz: float = -174.0  # noise power spectral density
    D: float = 80.0  # bytes per record
    dt: float = 0.4  # vehicle collection interval, s
    dT: float = 10.0  # estimation sampling interval, s
    distance_unit: str = "km"  # unit fed to the path-loss formula
    D_unit: str = "bytes"

    def __post_init__(self):
        for name in ("B", "p", "D", "dt", "dT"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"CommParams.{name} must be > 0, got {getattr(self, name)}")
        if self.distance_unit not in ("km", "m"):
            raise ConfigError(f"distance_unit must be 'km' or 'm', got {self.distance_unit!r}")
        if self.D_unit not in ("bytes", "bits"):
            raise ConfigError(f"D_unit must be 'bytes' or 'bits', got {self.D_unit!r}")

    @property
    def D_bits(self):
        return self.D * 8.0 if self.D_unit == "bytes" else self.D

    @property
    def D_bytes(self):
        return self.D if self.D_unit == "bytes" else self.D / 8.0


@dataclass(frozen=True)
class ComputeParams:
    eta: float = 1e-26  # effective switched capacitance
    c: float = 1.5e4  # CPU cycles per byte
    fc: float = 1e9  # CPU frequency, Hz
    Er: float = 7.2e-4  # sub-model run energy per input, J

    def __post_init__(self):
        _check_positive(self)


@dataclass(frozen=True)
class EconParams:
    tau_e: float = 2.44e-4  # currency per joule
    T_count: int = 8640  # inputs per settlement cycle
    tau_a: float = 1000.0  # currency per unit of accuracy margin
    x_tilde: float = 25.0  # usability MAE threshold
    W: float = 150.0  # reward per cycle
    S: float = 300.0  # inspection cost
    K: int = 5

    def __post_init__(self):
        _check_positive(self)


def path_loss_db(d, unit="km"):
    if not d > 0:
        raise ConfigError(f"distance must be > 0, got {d}")
    d_eff = d / 1000.0 if unit == "km" else d
    return 128.1 + 37.5 * math.log10(d_eff)


def uplink_rate(comm=None, d=None):
    """Shannon rate in bit/s with noise power N0 * B."""
    comm = CommParams() if comm is None else comm
    d = comm.d if d is None else d
    g = 10.0 ** (-path_loss_db(d, comm.distance_unit) / 10.0)
    n0 = 10.0 ** ((comm.N0_dbm_hz - 30.0) / 10.0)  # W/Hz
    return comm.B * math.log2(1.0 + comm.p * g / (n0 * comm.B))


def collection_cost(comm=None, rate=None):
    """Energy E_t (J) to upload one estimation input's worth of records."""
    comm = CommParams() if comm is None else comm
    R = uplink_rate(comm) if rate is None else rate
    return comm.dT * comm.p * comm.D_bits / (comm.dt * R)


def processing_cost(comm=None, compute=None):
    """Energy E_p (J) to process the records behind one input."""
    comm = CommParams() if comm is None else comm
    compute = ComputeParams() if compute is None else compute
    return (comm.dT / comm.dt) * compute.eta * compute.c * comm.D_bytes * compute.fc**2


@dataclass(frozen=True)
class Costs:
    E_t: float
    E_p: float
    E_r: float
    H: float  # honest provider cost per cycle, currency
    H_prime: float  # lazy provider cost per cycle

    @property
    def G(self):
        """Saving from laziness, H - H'."""
        return self.H - self.H_prime


def costs(comm=None, compute=None, econ=None):
    comm = CommParams() if comm is None else comm
    compute = ComputeParams() if compute is None else compute
    econ = EconParams() if econ is None else econ
    e_t = collection_cost(comm)
    e_p = processing_cost(comm, compute)
    scale = econ.tau_e * econ.T_count
    return Costs(e_t, e_p, compute.Er, scale * (e_t + e_p + compute.Er), scale * compute.Er)


MP_VARIANTS = ("honest", "caught", "uncaught_lazy", "caught_repeat")
MA_VARIANTS = ("trust_honest", "inspect_caught", "uncaught_lazy", "inspect_honest", "inspect_caught_repeat")


def mp_utility(variant, econ, cost, rho, beta=1.0):
    if variant == "honest":
        return econ.W - cost.H
    if variant == "caught":
        return econ.W - cost.H_prime - rho
    if variant == "uncaught_lazy":
        return econ.W - cost.H_prime
    if variant == "caught_repeat":
        return econ.W - cost.H_prime - beta * rho
    raise ConfigError(f"unknown MP variant {variant!r}; expected one of {MP_VARIANTS}")


def accuracy_profit(econ, x):
    """MA's profit from an estimator with MAE ``x``: zero at or above the threshold."""
    return econ.tau_a * (econ.x_tilde - x) / econ.K if x < econ.x_tilde else 0.0


def ma_utility(variant, econ, mae_x, rho, beta=1.0):
    """MA utility; profit under a lazy provider is taken as zero."""
    pi = accuracy_profit(econ, mae_x)
    if variant == "trust_honest":
        return pi - econ.W
    if variant == "inspect_caught":
        return rho - econ.S
    if variant == "uncaught_lazy":
        return -econ.W
    if variant == "inspect_honest":
        return pi - econ.W - econ.S
    if variant == "inspect_caught_repeat":
        return beta * rho - econ.S
    raise ConfigError(f"unknown MA variant {variant!r}; expected one of {MA_VARIANTS}")


@dataclass(frozen=True)
class PayoffCell:
    u_ma: float
    u_mp: float

    def __post_init__(self):
        if not (math.isfinite(self.u_ma) and math.isfinite(self.u_mp)):
            raise ConfigError("payoffs must be finite")


def payoff_table(econ, cost, mae_x, rho, beta=1.0, escalated=False):
    """Cells keyed by ``(inspect, sloth)``; ``escalated`` selects the repeat-offence cell."""
    caught_mp = "caught_repeat" if escalated else "caught"
    caught_ma = "inspect_caught_repeat" if escalated else "inspect_caught"
    return {
        (True, True): PayoffCell(ma_utility(caught_ma, econ, mae_x, rho, beta), mp_utility(caught_mp, econ, cost, rho, beta)),
        (False, True): PayoffCell(ma_utility("uncaught_lazy", econ, mae_x, rho), mp_utility("uncaught_lazy", econ, cost, rho)),
        (True, False): PayoffCell(ma_utility("inspect_honest", econ, mae_x, rho), mp_utility("honest", econ, cost, rho)),
        (False, False): PayoffCell(ma_utility("trust_honest", econ, mae_x, rho), mp_utility("honest", econ, cost, rho)),
    }


def cost_summary(comm=None, compute=None, econ=None):
    """Everything ``print-costs`` reports, as plain floats."""
    comm = CommParams() if comm is None else comm
    c = costs(comm, compute, econ)
    return {"R_bps": uplink_rate(comm), "E_t": c.E_t, "E_p": c.E_p, "E_r": c.E_r, "H": c.H, "H_prime": c.H_prime, "H_minus_H_prime": c.G}
