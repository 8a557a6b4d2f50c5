"""Repeated supervision game between the MA (inspector) and one MP (possibly lazy).

Notation: ``p = gamma * eps`` is the chance the MP is caught, ``a = beta - 1``
and ``G = H - H'`` is what the MP saves by being lazy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import economics as econ_mod
from .errors import ConfigError

STOP_TOL = 1e-6
BOUND_RTOL = 1e-12
MECHANISMS = ("proposed", "sgf", "bcl")


@dataclass(frozen=True)
class GameParams:
    rho: float = 250.0
    beta: float = 11.0
    W: float = 150.0
    S: float = 300.0
    H: float | None = None  # honest MP cost per cycle; None means derive from economics defaults
    H_prime: float | None = None
    gamma0: float = 0.5
    epsilon0: float = 0.5

    def __post_init__(self):
        if self.H is None or self.H_prime is None:
            c = econ_mod.costs()
            object.__setattr__(self, "H", c.H if self.H is None else self.H)
            object.__setattr__(self, "H_prime", c.H_prime if self.H_prime is None else self.H_prime)
        if not self.rho > 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if not self.beta >= 1:
            raise ConfigError(f"beta must be ≥ 1, got {self.beta}")
        if not (self.W > 0 and self.S > 0):
            raise ConfigError(f"W and S must be > 0, got W={self.W}, S={self.S}")
        if not self.H > self.H_prime >= 0:
            raise ConfigError(f"need H > H_prime ≥ 0, got H={self.H}, H_prime={self.H_prime}")
        for name in ("gamma0", "epsilon0"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")

    @property
    def G(self):
        return self.H - self.H_prime

    @property
    def a(self):
        return self.beta - 1.0

    @classmethod
    def from_econ(cls, econ=None, cost=None, **kw):
        econ = econ_mod.EconParams() if econ is None else econ
        cost = econ_mod.costs(econ=econ) if cost is None else cost
        return cls(W=econ.W, S=econ.S, H=cost.H, H_prime=cost.H_prime, **kw)


def _clamp(v):
    if v > 1.0:
        return 1.0, True
    if v < 0.0:
        return 0.0, True
    return float(v), False


@dataclass(frozen=True)
class Equilibrium:
    gamma: float
    epsilon: float
    gamma_clamped: bool = False
    epsilon_clamped: bool = False


def one_shot_equilibrium(params):
    if not params.rho + params.W > 0:
        raise ConfigError("rho + W must be > 0")
    g, gc = _clamp(params.S / (params.rho + params.W))
    e, ec = _clamp(params.G / (params.rho + params.W))
    return Equilibrium(g, e, gc, ec)


def indifference_residuals(params, pi=400.0, gamma=None, epsilon=None):
    """Expected-utility gaps (inspect - trust for the MA, sloth - honest for the MP).

    Evaluated at the one-shot equilibrium unless a point is given. The MA gap
    vanishes at gamma*. With the caught-MP cell W - H' - rho the MP gap vanishes
    at eps = G / rho, not at G / (rho + W).
    """
    eq = one_shot_equilibrium(params)
    g = eq.gamma if gamma is None else gamma
    e = eq.epsilon if epsilon is None else epsilon
    W, S, rho, Hp = params.W, params.S, params.rho, params.H_prime
    ma_inspect = g * (rho - S) + (1 - g) * (pi - W - S)
    ma_trust = g * (-W) + (1 - g) * (pi - W)
    mp_sloth = e * (W - Hp - rho) + (1 - e) * (W - Hp)
    mp_honest = W - params.H
    return {"ma": ma_inspect - ma_trust, "mp": mp_sloth - mp_honest}


@dataclass(frozen=True)
class StrategyState:
    gamma: float
    epsilon: float
    caught_last_cycle: bool = False

    def __post_init__(self):
        for name in ("gamma", "epsilon"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class Step:
    state: StrategyState
    gamma_clamped: bool
    epsilon_clamped: bool


def _harmonic(prev, incr):
    if prev == 0.0:
        return 0.0, False
    inv = 1.0 / prev + incr
    return (1.0, True) if inv <= 1.0 else (1.0 / inv, False)


def recursion_step(state, params, form="direct"):
    """One settlement-cycle update of (gamma, eps).

    ``direct`` evaluates S / (p rho a + rho) and G / (p rho a + rho).
    ``harmonic`` adds (p rho a - W) / S to 1/gamma (and the G analog to 1/eps).
    The two agree when the current point is the one-shot equilibrium.
    """
    q = state.gamma * state.epsilon * params.rho * params.a
    if form == "direct":
        g, gc = _clamp(params.S / (q + params.rho))
        e, ec = _clamp(params.G / (q + params.rho))
    elif form == "harmonic":
        g, gc = _harmonic(state.gamma, (q - params.W) / params.S)
        e, ec = _harmonic(state.epsilon, (q - params.W) / params.G)
    else:
        raise ConfigError(f"unknown recursion form {form!r}; expected 'direct' or 'harmonic'")
    return Step(StrategyState(g, e, state.caught_last_cycle), gc, ec)


def stop_reason(gamma, epsilon, params, tol=STOP_TOL):
    """Which stopping condition holds at (gamma, eps), or None."""
    if gamma * epsilon * params.rho * params.a - params.W <= tol * params.W:
        return "product"
    if gamma <= tol:
        return "gamma_zero"
    if epsilon <= tol:
        return "epsilon_zero"
    return None


@dataclass
class StrategyPath:
    gamma: np.ndarray
    epsilon: np.ndarray
    gamma_clamped: np.ndarray
    epsilon_clamped: np.ndarray
    i_star: int  # 1-based cycle where a stop condition first held (final cycle if never)
    reason: str | None  # None when no stop condition was reached
    form: str = "harmonic"

    @property
    def converged(self):
        return self.reason is not None


def strategy_path(params, cycles, form="harmonic", start=None, tol=STOP_TOL):
    """Deterministic (gamma, eps) per cycle; frozen once a stop condition holds.

    ``start`` defaults to the one-shot equilibrium; pass ``"initial"`` to use
    (gamma0, epsilon0) or an explicit (gamma, eps) pair.
    """
    if cycles < 1:
        raise ConfigError(f"cycles must be ≥ 1, got {cycles}")
    if start is None:
        eq = one_shot_equilibrium(params)
        s = StrategyState(eq.gamma, eq.epsilon)
        flags = (eq.gamma_clamped, eq.epsilon_clamped)
    elif start == "initial":
        s, flags = StrategyState(params.gamma0, params.epsilon0), (False, False)
    else:
        s, flags = StrategyState(*start), (False, False)
    g = np.empty(cycles)
    e = np.empty(cycles)
    gc = np.zeros(cycles, dtype=bool)
    ec = np.zeros(cycles, dtype=bool)
    i_star, reason = cycles, None
    for i in range(cycles):
        g[i], e[i] = s.gamma, s.epsilon
        gc[i], ec[i] = flags
        if reason is None:
            reason = stop_reason(s.gamma, s.epsilon, params, tol)
            if reason is not None:
                i_star = i + 1
        if reason is None:
            st = recursion_step(s, params, form)
            s, flags = st.state, (st.gamma_clamped, st.epsilon_clamped)
        else:
            flags = (False, False)
    return StrategyPath(g, e, gc, ec, i_star, reason, form)


def harmonic_identity_check(path, params):
    """Max |residual| of the harmonic identities over live, unclamped steps.

    Returns (max_gamma_residual, max_epsilon_residual, excluded step indices).
    Steps that involve a clamp, a zero probability or a frozen cycle are skipped.
    """
    gamma, eps = np.asarray(path.gamma), np.asarray(path.epsilon)
    rg, re, excluded = 0.0, 0.0, []
    last = min(len(gamma), path.i_star) - 1
    for i in range(last):
        if path.gamma_clamped[i + 1] or path.epsilon_clamped[i + 1] or min(gamma[i], eps[i], gamma[i + 1], eps[i + 1]) <= 0:
            excluded.append(i + 1)
            continue
        q = gamma[i] * eps[i] * params.rho * params.a
        rg = max(rg, abs(1 / gamma[i + 1] - 1 / gamma[i] - (q - params.W) / params.S))
        re = max(re, abs(1 / eps[i + 1] - 1 / eps[i] - (q - params.W) / params.G))
    return rg, re, excluded


@dataclass
class BoundReport:
    applicable: bool
    i_star: int
    converged: bool
    reason: str | None
    clauses: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c["pass"] for c in self.clauses)

    def to_json(self):
        return json.dumps(
            {"applicable": self.applicable, "i_star": self.i_star, "converged": self.converged, "reason": self.reason, "clauses": self.clauses},
            indent=1,
            sort_keys=True,
        )


def _clause(name, bound, observed, ok, note=""):
    return {"clause": name, "bound": float(bound), "observed": float(observed), "margin": float(bound - observed), "pass": bool(ok), "note": note}


def check_bounds(path, params, rtol=BOUND_RTOL):
    """Product monotonicity before i*, and the gamma / eps upper bounds at i*.

    With the products non-increasing, every increment up to i* is at least
    the last one, which gives 1/gamma_{i*} >= 1/gamma_1 + (i*-1)(p_{i*-1} rho a - W)/S.
    The bound holds with equality at i* = 2, so comparisons are non-strict.
    """
    gamma, eps = np.asarray(path.gamma), np.asarray(path.epsilon)
    i_star = path.i_star
    rep = BoundReport(i_star >= 2, i_star, path.converged, path.reason)
    if not rep.applicable:
        return rep
    prod = gamma[:i_star] * eps[:i_star]
    live = prod[:-1] * params.rho * params.a > params.W
    diffs = np.diff(prod)
    worst = float(np.max(np.where(live, diffs, -np.inf))) if live.any() else -np.inf
    rep.clauses.append(_clause("product_decreasing", 0.0, worst if np.isfinite(worst) else 0.0, not (worst >= 0)))
    p_last = prod[-2]
    incr = (i_star - 1) * (p_last * params.rho * params.a - params.W)
    for name, first, final, div in (("gamma_bound", gamma[0], gamma[i_star - 1], params.S), ("epsilon_bound", eps[0], eps[i_star - 1], params.G)):
        if final == 0.0:
            rep.clauses.append(_clause(name, 0.0, 0.0, True, "probability reached zero"))
            continue
        bound = 1.0 / (1.0 / first + incr / div)
        rep.clauses.append(_clause(name, bound, final, final <= bound * (1 + rtol)))
    return rep


# ---- realized play --------------------------------------------------------


@dataclass
class GameTrajectory:
    gamma: np.ndarray  # strategy used in cycle i
    epsilon: np.ndarray
    mp_action: np.ndarray  # 1 = sloth
    ma_action: np.ndarray  # 1 = inspect
    u_mp: np.ndarray
    u_ma: np.ndarray
    gamma_clamped: np.ndarray
    epsilon_clamped: np.ndarray
    final_gamma: float  # strategy after the last update
    final_epsilon: float
    mechanism: str = "proposed"
    mode: str = "empirical"

    @property
    def cycles(self):
        return len(self.gamma)

    @property
    def cum_u_mp(self):
        return np.cumsum(self.u_mp)

    @property
    def cum_u_ma(self):
        return np.cumsum(self.u_ma)

    def rows(self):
        cmp, cma = self.cum_u_mp, self.cum_u_ma
        for i in range(self.cycles):
            flags = "|".join(n for n, f in (("gamma", self.gamma_clamped[i]), ("epsilon", self.epsilon_clamped[i])) if f)
            yield [i + 1, f"{self.gamma[i]:.12g}", f"{self.epsilon[i]:.12g}", int(self.mp_action[i]), int(self.ma_action[i]),
                   f"{self.u_mp[i]:.12g}", f"{self.u_ma[i]:.12g}", f"{cmp[i]:.12g}", f"{cma[i]:.12g}", flags]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cycle", "gamma", "epsilon", "mp_action", "ma_action", "u_mp", "u_ma", "cum_u_mp", "cum_u_ma", "clamped_flags"])
            w.writerows(self.rows())
        return Path(path)


def _mechanism_params(params, mechanism):
    if mechanism == "proposed":
        return params
    if mechanism == "sgf":
        return replace(params, beta=1.0)
    if mechanism == "bcl":
        return params  # penalty is zeroed in the payoff function
    raise ConfigError(f"unknown mechanism {mechanism!r}; expected one of {MECHANISMS}")


def stage_payoffs(params, pi, inspect, sloth, escalated=False, mechanism="proposed"):
    """(u_ma, u_mp) for one cycle; BCL has no penalty."""
    rho = 0.0 if mechanism == "bcl" else params.rho
    beta = 1.0 if mechanism == "sgf" else params.beta
    W, S, H, Hp = params.W, params.S, params.H, params.H_prime
    if sloth and inspect:
        pen = beta * rho if escalated else rho
        return pen - S, W - Hp - pen
    if sloth:
        return -W, W - Hp
    if inspect:
        return pi - W - S, W - H
    return pi - W, W - H


def payoff_spans(params, pi, mechanism="proposed"):
    """Per-agent payoff span over the un-escalated table, used to scale updates."""
    cells = [stage_payoffs(params, pi, i, s, False, mechanism) for i in (True, False) for s in (True, False)]
    if mechanism == "bcl":
        cells = [c for (i, _), c in zip([(i, s) for i in (True, False) for s in (True, False)], cells) if not i]
    sa = float(np.ptp([c[0] for c in cells])) or 1.0
    sm = float(np.ptp([c[1] for c in cells])) or 1.0
    return sa, sm


def simulate_repeated_game(params, mode="empirical", cycles=500, seed=0, mae_series=None, mechanism="proposed",
                           eta=0.05, econ=None, honest_mae=23.0, lazy_mae=30.0, form="harmonic"):
    """Play ``cycles`` settlement cycles and record strategies, actions and payoffs.

    empirical: each side keeps weights over its two actions and multiplies
    them by exp(eta * u / span) after every cycle, where u is the payoff each
    action would have earned against the opponent's realized action.
    closed_form: strategies follow ``strategy_path`` from (gamma0, epsilon0).
    Actions are Bernoulli draws either way. A lazy MP is caught exactly when
    the MA inspects, and the next cycle then uses the escalated cell.
    """
    if cycles < 1:
        raise ConfigError(f"cycles must be ≥ 1, got {cycles}")
    if mode not in ("empirical", "closed_form"):
        raise ConfigError(f"unknown mode {mode!r}; expected 'empirical' or 'closed_form'")
    if not eta > 0:
        raise ConfigError(f"eta must be > 0, got {eta}")
    econ = econ_mod.EconParams(W=params.W, S=params.S) if econ is None else econ
    mp = _mechanism_params(params, mechanism)
    maes = np.full(cycles, honest_mae, dtype=np.float64) if mae_series is None else np.asarray(mae_series, dtype=np.float64)
    if maes.shape != (cycles,):
        raise ConfigError(f"mae_series must have length {cycles}, got shape {maes.shape}")
    if lazy_mae < econ.x_tilde:
        raise ConfigError(f"lazy_mae must be ≥ x_tilde={econ.x_tilde} so lazy cycles earn nothing, got {lazy_mae}")
    rng = np.random.default_rng(seed)

    bcl = mechanism == "bcl"
    if mode == "closed_form":
        path = strategy_path(mp, cycles, form, start="initial")
        g_seq, e_seq = path.gamma, (np.zeros(cycles) if bcl else path.epsilon)
        gc, ec = path.gamma_clamped, path.epsilon_clamped
    else:
        gc = ec = np.zeros(cycles, dtype=bool)
    w_mp = np.array([params.gamma0, 1.0 - params.gamma0])  # sloth, honest
    e0 = 0.0 if bcl else params.epsilon0
    w_ma = np.array([e0, 1.0 - e0])  # inspect, trust

    out = {k: np.empty(cycles) for k in ("g", "e", "u_mp", "u_ma")}
    acts = {k: np.zeros(cycles, dtype=np.int64) for k in ("mp", "ma")}
    escalated = False
    for i in range(cycles):
        if mode == "closed_form":
            g, e = float(g_seq[i]), float(e_seq[i])
        else:
            g, e = w_mp[0] / w_mp.sum(), w_ma[0] / w_ma.sum()
        u1, u2 = rng.random(2)
        sloth, inspect = bool(u1 < g), bool(u2 < e)
        pi = econ_mod.accuracy_profit(econ, maes[i])
        esc = escalated and not bcl
        u_ma, u_mp = stage_payoffs(mp, pi, inspect, sloth, esc, mechanism)
        out["g"][i], out["e"][i], out["u_mp"][i], out["u_ma"][i] = g, e, u_mp, u_ma
        acts["mp"][i], acts["ma"][i] = int(sloth), int(inspect)
        if mode == "empirical":
            sa, sm = payoff_spans(mp, pi, mechanism)
            mp_cf = np.array([stage_payoffs(mp, pi, inspect, s, esc, mechanism)[1] for s in (True, False)])
            w_mp = w_mp * np.exp(eta * (mp_cf - mp_cf.max()) / sm)
            w_mp /= w_mp.sum()
            if not bcl:
                ma_cf = np.array([stage_payoffs(mp, pi, a, sloth, esc, mechanism)[0] for a in (True, False)])
                w_ma = w_ma * np.exp(eta * (ma_cf - ma_cf.max()) / sa)
                w_ma /= w_ma.sum()
        escalated = sloth and inspect

    if mode == "closed_form":
        fg, fe = float(g_seq[-1]), float(e_seq[-1])
    else:
        fg, fe = float(w_mp[0]), float(w_ma[0])
    for name, v in (("u_mp", out["u_mp"]), ("u_ma", out["u_ma"])):
        if not np.isfinite(v).all():
            raise ConfigError(f"non-finite {name} in trajectory")
    return GameTrajectory(out["g"], out["e"], acts["mp"], acts["ma"], out["u_mp"], out["u_ma"], gc, ec, fg, fe, mechanism, mode)


def run_baseline(kind, params, cycles=500, seed=0, **kw):
    if kind not in ("bcl", "sgf"):
        raise ConfigError(f"unknown baseline {kind!r}; expected 'bcl' or 'sgf'")
    return simulate_repeated_game(params, "empirical", cycles, seed, mechanism=kind, **kw)


def converged(traj, gamma_tol=0.05, eps_tol=0.1):
    return traj.final_gamma < gamma_tol and traj.final_epsilon < eps_tol


def write_bound_report(report, path):
    Path(path).write_text(report.to_json() + "\n")
    return Path(path)
