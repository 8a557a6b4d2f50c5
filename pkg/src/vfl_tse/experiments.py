"""Scenario runners: each writes deterministic CSVs, a summary and a manifest.

A scenario returns ``(files, summary)`` where ``summary["checks"]`` maps an
assertion name to ``{"pass": bool, ...details}``. Independent (seed, cell)
jobs can fan out to a process pool; results are sorted before writing so
output bytes do not depend on ``jobs``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, data, game, mi, selection, vfl
from .errors import ConfigError


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return v


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _check(ok, **details):
    return {"pass": bool(ok), **{k: _plain(v) for k, v in details.items()}}


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    return v


def _dataset(cfg, seed, T=None):
    return data.generate_synthetic(T=cfg.data.T if T is None else T, seed=seed, params=cfg.data.dynamics())


def _mean_score(model, view, labels, cfg):
    return float(np.mean([mi.score_provider(model, view, labels, cfg.mi.n, s) for s in cfg.mi.score_seeds]))


def _train_mi(cfg, x, y, seed):
    return mi.train_mi(x, y, steps=cfg.mi.steps, lr=cfg.mi.lr, n=cfg.mi.n, seed=seed, hidden=cfg.mi.hidden, split_layer=cfg.mi.split_layer)


# ---------------------------------------------------------------- mi_grid


def _mi_grid_job(args):
    cfg, seed, k = args
    ds = _dataset(cfg, seed)
    model = _train_mi(cfg, ds.features[k], ds.labels, 1000 * seed + k)
    rows = []
    grid = cfg.mi.noise_grid
    for i, mu in enumerate(grid):
        for j, sigma in enumerate(grid):
            view = data.derive_provider_view(ds, ds.segment(k), data.NoiseProfile(mu, sigma, seed=1000 * seed + k))
            for s in cfg.mi.score_seeds:
                rows.append((seed, k, i * len(grid) + j, mu, sigma, s, mi.score_provider(model, view, ds.labels, cfg.mi.n, s)))
    return rows


def grid_violations(table, max_count=2, max_size=0.05):
    """Increases along rows (sigma up) and columns (mu up) of a mean-score table."""
    t = np.asarray(table)
    out = []
    for i in range(t.shape[0]):
        for j in range(t.shape[1] - 1):
            if t[i, j + 1] > t[i, j]:
                out.append(("row", i, j + 1, float(t[i, j + 1] - t[i, j])))
    for j in range(t.shape[1]):
        for i in range(t.shape[0] - 1):
            if t[i + 1, j] > t[i, j]:
                out.append(("col", i + 1, j, float(t[i + 1, j] - t[i, j])))
    ok = len(out) <= max_count and all(v[3] <= max_size for v in out)
    return out, ok


def mi_grid(cfg, out):
    K = data.default_network().n_segments
    jobs = [(cfg, s, k) for s in cfg.seeds for k in range(K)]
    rows = sorted(r for res in _map(_mi_grid_job, jobs, cfg.jobs) for r in res)
    files = []
    header = ("data_seed", "segment", "provider", "mu", "sigma", "score_seed", "score")
    for s in cfg.seeds:
        files.append(write_csv(out / f"mi_grid_seed{s}.csv", header, [r for r in rows if r[0] == s]))
    grid = cfg.mi.noise_grid
    g = len(grid)
    table = np.zeros((g, g))
    for r in rows:
        table[r[2] // g, r[2] % g] += r[6]
    table /= len(rows) / (g * g)
    files.append(write_csv(out / "mi_grid_table.csv", ("mu", "sigma", "mean_score"),
                           [(grid[i], grid[j], table[i, j]) for i in range(g) for j in range(g)]))
    viol, ok = grid_violations(table)
    top = table[0, 0]
    checks = {
        "monotone": _check(ok, violations=viol),
        "worst_row_below_clean": _check(bool(np.all(table[-1, :] < top)), values=table[-1, :].tolist(), clean=top),
        "worst_col_below_clean": _check(bool(np.all(table[:, -1] < top)), values=table[:, -1].tolist(), clean=top),
    }
    return files, {"table": table.tolist(), "checks": checks}


# ---------------------------------------------------------------- lazy_grid


def _lazy_grid_job(args):
    cfg, seed = args
    ds = _dataset(cfg, seed)
    k = seed % ds.network.n_segments
    model = _train_mi(cfg, ds.features[k], ds.labels, seed)
    view = ds.features[k]
    hist = data.historical_view(view, cfg.data.history_lag)
    rows = [(seed, k, "honest", 0.0, _mean_score(model, view, ds.labels, cfg))]
    for mode in ("random_data", "historical_data"):
        for f in cfg.mi.lazy_fractions:
            v = data.apply_lazy_policy(view, data.LazyPolicy(mode, f), hist, seed=seed)
            rows.append((seed, k, mode, f, _mean_score(model, v, ds.labels, cfg)))
    return rows


def lazy_grid(cfg, out):
    rows = sorted(r for res in _map(_lazy_grid_job, [(cfg, s) for s in cfg.seeds], cfg.jobs) for r in res)
    header = ("seed", "segment", "mode", "lazy_fraction", "score")
    files = [write_csv(out / f"lazy_grid_seed{s}.csv", header, [r for r in rows if r[0] == s]) for s in cfg.seeds]
    honest = {r[0]: r[4] for r in rows if r[2] == "honest"}
    above = [r for r in rows if r[2] != "honest" and not r[4] < honest[r[0]]]
    need = math.ceil(0.9 * len(cfg.seeds))
    checks = {"lazy_below_honest": _check(not above, offending=[list(r) for r in above])}
    for mode in ("random_data", "historical_data"):
        full = [r[4] for r in rows if r[2] == mode and r[3] == 1.0]
        if full:
            neg = sum(v < 0 for v in full)
            checks[f"{mode}_full_negative"] = _check(neg >= need, negative=neg, of=len(full), needed=need)
    return files, {"checks": checks}


# ---------------------------------------------------------------- selection_compare


def _selection_trial(args):
    cfg, t = args
    ds = _dataset(cfg, t, cfg.vfl.T)
    K, N, m = ds.network.n_segments, cfg.selection.providers, cfg.vfl.mi_samples
    profiles = selection.diagonal_profiles(K, N, seed=t, grid=cfg.mi.noise_grid)
    models = [_train_mi(cfg, ds.features[k][:m], ds.labels[:m], 1000 * t + k) for k in range(K)]
    views = [[data.derive_provider_view(ds, ds.segment(k), p)[:m] for p in row] for k, row in enumerate(profiles)]
    table = selection.score_table(models, views, ds.labels[:m], cfg.mi.n, cfg.mi.score_seeds)
    return t, profiles, table.scores


def _selection_views(cfg, t, choices):
    ds = _dataset(cfg, t, cfg.vfl.T)
    profiles = selection.diagonal_profiles(ds.network.n_segments, cfg.selection.providers, seed=t, grid=cfg.mi.noise_grid)
    return ds, [data.derive_provider_view(ds, ds.segment(k), profiles[k][n]) for k, n in enumerate(choices)]


def _selection_vfl(args):
    cfg, t, method, choices = args
    ds, feats = _selection_views(cfg, t, choices)
    vc = cfg.vfl.vfl_config(t)
    _, va = vfl.split_indices(ds.T, vc.train_fraction)
    if method == "central":
        # the centralized twin trained on the clean ground truth of every segment
        model, opts = vfl.init_centralized(list(ds.features), ds.labels, vc)
        tr, _ = vfl.split_indices(ds.T, vc.train_fraction)
        for epoch in range(1, vc.epochs + 1):
            vfl.centralized_train_epoch(model, opts, list(ds.features), ds.labels, tr, vc.batch_size, vc.seed, epoch)
        pred = vfl.central_predict(model, list(ds.features), va).reshape(ds.labels[va].shape)
        metrics = vfl.state_metrics(pred, ds.labels[va])
    else:
        ma, mps, _ = vfl.train_vfl(feats, ds.labels, vc)
        metrics = vfl.state_metrics(vfl.vfl_predict(ma, mps, va), ds.labels[va])
    return t, method, metrics


def selection_compare(cfg, out):
    trials = sorted(_map(_selection_trial, [(cfg, t) for t in range(cfg.selection.trials)], cfg.jobs), key=lambda r: r[0])
    rows, agree, picks = [], 0, {}
    K = None
    for t, profiles, scores in trials:
        K = len(profiles)
        prop = selection.solve_p2(scores).choices
        orc = selection.oracle_selection(profiles).choices
        rnd = selection.random_selection(K, scores.shape[1], seed=t).choices
        agree += int(np.sum(prop == orc))
        picks[t] = {"proposed": prop, "oracle": orc, "random": rnd}
        for k, row in enumerate(profiles):
            for n, p in enumerate(row):
                rows.append((t, k, n, p.mu, p.sigma, scores[k, n], int(prop[k] == n), int(orc[k] == n), int(rnd[k] == n)))
    files = [write_csv(out / "selection_trials.csv",
                       ("trial", "segment", "provider", "mu", "sigma", "score", "proposed", "oracle", "random"), rows)]
    rate = agree / (K * len(trials))
    checks = {"agreement": _check(rate >= 0.9, rate=rate, segments=K * len(trials))}

    seeds = [s for s in cfg.seeds if s in picks]
    if len(seeds) != len(cfg.seeds):
        raise ConfigError(f"every seed must be < selection.trials={cfg.selection.trials}, got {list(cfg.seeds)}")
    # identical selections give identical trainings, so each distinct one runs once
    jobs, alias = [], {}
    for s in seeds:
        done = {}
        for method in ("oracle", "random", "proposed"):
            key = tuple(int(c) for c in picks[s][method])
            if key in done:
                alias[(s, method)] = done[key]
            else:
                done[key] = method
                jobs.append((cfg, s, method, key))
        jobs.append((cfg, s, "central", ()))
    res = {(t, m): met for t, m, met in _map(_selection_vfl, jobs, cfg.jobs)}
    for (s, method), src in alias.items():
        res[(s, method)] = res[(s, src)]
    mrows = []
    for (s, method), met in sorted(res.items()):
        for st in vfl.STATE_NAMES:
            mrows.append((s, method, st, met[("mae", st)], met[("rmse", st)]))
    files.append(write_csv(out / "selection_mae.csv", ("seed", "method", "state", "mae", "rmse"), mrows))

    def mae(s, m):
        return float(np.mean([res[(s, m)][("mae", st)] for st in vfl.STATE_NAMES]))

    wins = sum(mae(s, "proposed") <= mae(s, "random") for s in seeds)
    need = math.ceil(0.9 * len(seeds))
    mean = {m: float(np.mean([mae(s, m) for s in seeds])) for m in ("central", "oracle", "random", "proposed")}
    gap = abs(mean["proposed"] - mean["oracle"])
    span = mean["random"] - mean["oracle"]
    checks["proposed_beats_random"] = _check(wins >= need, wins=wins, of=len(seeds), needed=need)
    checks["proposed_near_oracle"] = _check(span > 0 and gap <= 0.2 * span, gap=gap, random_minus_oracle=span)
    return files, {"mean_mae": mean, "checks": checks}


# ---------------------------------------------------------------- lazy_mae


def _lazy_mae_job(args):
    cfg, seed = args
    ds = _dataset(cfg, seed, cfg.vfl.T)
    vc = cfg.vfl.vfl_config(seed)
    ma, mps, _ = vfl.train_vfl(list(ds.features), ds.labels, vc)
    _, va = vfl.split_indices(ds.T, vc.train_fraction)
    spec = vfl.parse_lazy_spec(cfg.vfl.lazy)
    for j in spec:
        if not 0 <= j < len(mps):
            raise ConfigError(f"lazy spec names mp={j}, but there are {len(mps)} providers")
    rows = []
    variants = {"honest": {}, "as_configured": spec}
    for mode in ("random_data", "historical_data"):
        variants[mode] = {j: data.LazyPolicy(mode, p.lazy_fraction) for j, p in spec.items()}
    for name, pol in variants.items():
        met = vfl.evaluate(ma, mps, va, pol, cfg.data.history_lag, seed)
        for st in vfl.STATE_NAMES:
            rows.append((seed, name, st, met[("mae", st)], met[("rmse", st)]))
    return rows


def lazy_mae(cfg, out):
    rows = sorted(r for res in _map(_lazy_mae_job, [(cfg, s) for s in cfg.seeds], cfg.jobs) for r in res)
    header = ("seed", "policy", "state", "mae", "rmse")
    files = [write_csv(out / f"lazy_mae_seed{s}.csv", header, [r for r in rows if r[0] == s]) for s in cfg.seeds]

    def mae(s, pol):
        return float(np.mean([r[3] for r in rows if r[0] == s and r[1] == pol]))

    worse = [s for s in cfg.seeds if mae(s, "random_data") > mae(s, "honest")]
    mean = {p: float(np.mean([mae(s, p) for s in cfg.seeds])) for p in ("honest", "random_data", "historical_data")}
    checks = {
        "random_worse_every_seed": _check(len(worse) == len(cfg.seeds), worse=len(worse), of=len(cfg.seeds)),
        "historical_milder_than_random": _check(mean["historical_data"] < mean["random_data"], **mean),
    }
    return files, {"mean_mae": mean, "checks": checks}


# ---------------------------------------------------------------- game scenarios


def _game_kw(cfg):
    return {"eta": cfg.game.eta, "econ": cfg.econ, "honest_mae": cfg.game.honest_mae, "lazy_mae": cfg.game.lazy_mae}


def _sweep_job(args):
    cfg, name, value, gamma0, seed = args
    p = cfg.game_params(**{name: value, "gamma0": gamma0})
    tr = game.simulate_repeated_game(p, cfg.game.mode, cfg.game.cycles, seed, **_game_kw(cfg), form=cfg.game.form)
    return (value, gamma0, p.epsilon0, seed, tr.final_gamma, tr.final_epsilon, tr.cum_u_ma[-1], tr.cum_u_mp[-1])


def _sweep(cfg, out, name, values):
    jobs = [(cfg, name, v, g0, s) for v in values for g0 in cfg.sweep.gamma0s for s in cfg.seeds]
    rows = sorted(_map(_sweep_job, jobs, cfg.jobs))
    header = (name, "gamma0", "epsilon0", "seed", "final_gamma", "final_epsilon", "cum_u_ma", "cum_u_mp")
    files = [write_csv(out / f"{name}_sweep.csv", header, rows)]
    mean = {}
    for v in values:
        sel = [r for r in rows if r[0] == v]
        mean[v] = (float(np.mean([r[4] for r in sel])), float(np.mean([r[5] for r in sel])))
    files.append(write_csv(out / f"{name}_sweep_mean.csv", (name, "mean_gamma", "mean_epsilon"),
                           [(v, g, e) for v, (g, e) in sorted(mean.items())]))
    return files, mean


def beta_sweep(cfg, out):
    files, mean = _sweep(cfg, out, "beta", cfg.sweep.betas)
    checks = {}
    if 2.0 in mean and 11.0 in mean:
        checks["escalation_lowers_gamma"] = _check(mean[11.0][0] <= mean[2.0][0], beta11=mean[11.0][0], beta2=mean[2.0][0])
    return files, {"mean": {str(k): v for k, v in mean.items()}, "checks": checks}


def rho_sweep(cfg, out):
    files, mean = _sweep(cfg, out, "rho", cfg.sweep.rhos)
    lo, hi = min(mean), max(mean)
    checks = {"larger_rho_lowers_gamma": _check(mean[hi][0] <= mean[lo][0], low_rho=mean[lo][0], high_rho=mean[hi][0])}
    return files, {"mean": {str(k): v for k, v in mean.items()}, "checks": checks}


def bound_gap(cfg, out):
    rows, fails, worst_res = [], [], 0.0
    cells = [("rho", v) for v in cfg.sweep.rhos] + [("beta", v) for v in cfg.sweep.betas]
    for name, value in cells:
        p = cfg.game_params(**{name: value})
        for g0 in cfg.sweep.bound_gamma0s:
            path = game.strategy_path(p, cfg.game.cycles, "harmonic", start=(g0, p.epsilon0))
            rep = game.check_bounds(path, p)
            rg, re, _ = game.harmonic_identity_check(path, p)
            worst_res = max(worst_res, rg, re)
            c = {x["clause"]: x for x in rep.clauses}
            gb, eb = c.get("gamma_bound", {}), c.get("epsilon_bound", {})
            prod_bound = p.W / (p.rho * p.a) if p.a > 0 else float("inf")
            final_prod = path.gamma[path.i_star - 1] * path.epsilon[path.i_star - 1]
            rows.append((name, value, g0, path.i_star, path.reason or "none", int(rep.applicable),
                         gb.get("bound", float("nan")), gb.get("observed", path.gamma[path.i_star - 1]),
                         eb.get("bound", float("nan")), eb.get("observed", path.epsilon[path.i_star - 1]),
                         prod_bound, final_prod, prod_bound - final_prod, int(rep.passed)))
            if not rep.passed:
                fails.append([name, value, g0])
    header = ("param", "value", "gamma0", "i_star", "stop_reason", "applicable", "gamma_bound", "gamma_final",
              "epsilon_bound", "epsilon_final", "product_boundary", "product_final", "product_gap", "pass")
    files = [write_csv(out / "bound_gap.csv", header, rows)]
    checks = {"bounds": _check(not fails, failing=fails), "harmonic_identity": _check(worst_res < 1e-10, max_residual=worst_res)}
    return files, {"checks": checks}


def _mechanism_job(args):
    cfg, mech, g0, e0, seed = args
    p = cfg.game_params(gamma0=g0, epsilon0=e0)
    tr = game.simulate_repeated_game(p, "empirical", cfg.game.cycles, seed, mechanism=mech, **_game_kw(cfg))
    return (mech, g0, e0, seed), tr


def mechanism_compare(cfg, out):
    g0, e0 = cfg.game.gamma0, cfg.game.epsilon0
    cells = sorted({(g0, e) for e in cfg.sweep.epsilon0s} | {(g, e0) for g in cfg.sweep.gamma0s} | {(g0, e0)})
    jobs = [(cfg, m, g, e, s) for m in game.MECHANISMS for g, e in cells for s in cfg.seeds]
    res = dict(_map(_mechanism_job, jobs, cfg.jobs))
    files, rows = [], []
    for (m, g, e, s), tr in sorted(res.items()):
        files.append(tr.to_csv(_mkdir(out / "trajectories") / f"{m}_g{g:g}_e{e:g}_seed{s}.csv"))
        rows.append((m, g, e, s, tr.final_gamma, tr.final_epsilon, tr.cum_u_ma[-1], tr.cum_u_mp[-1],
                     tr.cum_u_ma[-1] + tr.cum_u_mp[-1], int(game.converged(tr))))
    files.append(write_csv(out / "mechanism_summary.csv",
                           ("mechanism", "gamma0", "epsilon0", "seed", "final_gamma", "final_epsilon", "cum_u_ma", "cum_u_mp", "welfare", "converged"), rows))
    need = math.ceil(0.8 * len(cfg.seeds))
    need9 = math.ceil(0.9 * len(cfg.seeds))
    conv = sum(game.converged(res[("proposed", g0, e0, s)]) for s in cfg.seeds)
    u = {m: [res[(m, g0, e0, s)].cum_u_ma[-1] for s in cfg.seeds] for m in game.MECHANISMS}
    over_sgf = sum(a > b for a, b in zip(u["proposed"], u["sgf"]))
    over_bcl = sum(a > b for a, b in zip(u["proposed"], u["bcl"]))
    bcl_g = [res[("bcl", g0, e0, s)].final_gamma for s in cfg.seeds]
    checks = {
        "proposed_converges": _check(conv >= need, converged=conv, of=len(cfg.seeds), needed=need),
        "bcl_gamma_to_one": _check(min(bcl_g) > 0.95, min_final_gamma=min(bcl_g)),
        "ma_utility_over_sgf": _check(over_sgf >= need9, wins=over_sgf, of=len(cfg.seeds), needed=need9),
        "ma_utility_over_bcl": _check(over_bcl >= need9, wins=over_bcl, of=len(cfg.seeds), needed=need9),
    }
    return files, {"checks": checks}


def _mkdir(p):
    p.mkdir(parents=True, exist_ok=True)
    return p


SCENARIO_FUNCS = {
    "mi_grid": mi_grid,
    "lazy_grid": lazy_grid,
    "selection_compare": selection_compare,
    "lazy_mae": lazy_mae,
    "beta_sweep": beta_sweep,
    "rho_sweep": rho_sweep,
    "bound_gap": bound_gap,
    "mechanism_compare": mechanism_compare,
}


# ---------------------------------------------------------------- manifest


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_experiment(cfg, out_dir=None):
    """Run ``cfg.scenario``; returns the manifest dict. ``manifest["pass"]`` is the verdict."""
    out = Path(cfg.output_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    files, summary = SCENARIO_FUNCS[cfg.scenario](cfg, out)
    failures = sorted(name for name, c in summary["checks"].items() if not c["pass"])
    summary = {"scenario": cfg.scenario, "config_hash": cfg.digest(), "seeds": list(cfg.seeds),
               "pass": not failures, "failures": failures, **_plain(summary)}
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    config_path = out / "config.json"
    config_path.write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")
    files = [Path(f) for f in files] + [summary_path, config_path]
    manifest = {
        "scenario": cfg.scenario,
        "config_hash": cfg.digest(),
        "pass": not failures,
        "failures": failures,
        "files": [{"path": str(f.relative_to(out)), "sha256": sha256(f), "bytes": f.stat().st_size} for f in sorted(files)],
        "versions": {"vfl_tse": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "wall_clock_s": round(time.perf_counter() - t0, 3),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def check_manifest(out_dir):
    """Files whose hash no longer matches (or that vanished); empty when all good."""
    out = Path(out_dir)
    mpath = out / "manifest.json"
    if not mpath.is_file():
        raise ConfigError(f"no manifest.json in {out}")
    manifest = json.loads(mpath.read_text())
    bad = []
    for entry in manifest["files"]:
        f = out / entry["path"]
        if not f.is_file():
            bad.append((entry["path"], "missing"))
        elif sha256(f) != entry["sha256"]:
            bad.append((entry["path"], "hash mismatch"))
    return bad
