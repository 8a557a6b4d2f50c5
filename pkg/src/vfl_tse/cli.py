"""Command-line entry point.

Exit codes: 0 success, 1 a scenario or manifest check failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import data, economics, experiments, game, mi, selection, vfl
from .errors import ConfigError, DimensionError, ParseError, ValidationError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the seed list with a single seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes for independent jobs")
    p.add_argument("--check", action="store_true", help="verify output hashes against the manifest instead of running")
    return p


def _load_config(args):
    cfg = config_mod.validate_config(args.config) if args.config else config_mod.ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seeds"] = (args.seed,)
    if args.jobs is not None:
        over["jobs"] = args.jobs
    if args.out is not None:
        over["output_dir"] = args.out
    if getattr(args, "scenario", None):
        over["scenario"] = args.scenario
    return dataclasses.replace(cfg, **over) if over else cfg


def _out(args, cfg):
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print(obj):
    print(json.dumps(obj, indent=1, sort_keys=True))


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(args, cfg):
    out = _out(args, cfg)
    seed = cfg.seeds[0]
    T = args.T or cfg.data.T
    ds = data.generate_synthetic(T=T, seed=seed, params=cfg.data.dynamics())
    n = cfg.selection.providers if args.providers is None else args.providers
    profiles = selection.diagonal_profiles(ds.network.n_segments, n, seed=seed, grid=cfg.mi.noise_grid) if n else []
    views = {(k, j): data.derive_provider_view(ds, ds.segment(k), p) for k, row in enumerate(profiles) for j, p in enumerate(row)}
    data.save_dataset(ds.with_views(views), out)
    (out / "profiles.json").write_text(json.dumps([[dataclasses.asdict(p) for p in row] for row in profiles], indent=1) + "\n")
    print(f"wrote dataset T={T} seed={seed} with {len(views)} provider views to {out}")
    return EXIT_OK


def cmd_train_mi(args, cfg):
    out = _out(args, cfg)
    ds = data.load_dataset(args.data)
    m = args.samples or ds.T
    for k in range(ds.network.n_segments):
        model = mi.train_mi(ds.features[k][:m], ds.labels[:m], steps=cfg.mi.steps, lr=cfg.mi.lr, n=cfg.mi.n,
                            seed=1000 * cfg.seeds[0] + k, hidden=cfg.mi.hidden, split_layer=cfg.mi.split_layer)
        mi.save_mi_model(model, out / f"mi_segment_{k}.json")
        print(f"segment {k}: best DV estimate {model.best_estimate:.4f} at step {model.best_step}")
    return EXIT_OK


def _profiles(data_dir):
    p = Path(data_dir) / "profiles.json"
    if not p.is_file():
        return None
    return [[data.NoiseProfile(**d) for d in row] for row in json.loads(p.read_text())]


def cmd_score(args, cfg):
    out = _out(args, cfg)
    ds = data.load_dataset(args.data)
    if not ds.views:
        raise ConfigError(f"{args.data} has no provider views; run gen-data with --providers > 0")
    K = ds.network.n_segments
    N = 1 + max(n for _, n in ds.views)
    m = args.samples or ds.T
    models = [mi.load_mi_model(Path(args.models) / f"mi_segment_{k}.json") for k in range(K)]
    views = [[ds.views[(k, n)][:m] for n in range(N)] for k in range(K)]
    profiles = _profiles(args.data)
    rows = []
    for k in range(K):
        for n in range(N):
            mu, sigma = (profiles[k][n].mu, profiles[k][n].sigma) if profiles else (float("nan"), float("nan"))
            for s in cfg.mi.score_seeds:
                rows.append((k, n, mu, sigma, s, mi.score_provider(models[k], views[k][n], ds.labels[:m], cfg.mi.n, s)))
    experiments.write_csv(out / "scores.csv", ("segment", "provider", "mu", "sigma", "seed", "score"), rows)
    table = selection.score_table(models, views, ds.labels[:m], cfg.mi.n, cfg.mi.score_seeds)
    (out / "score_table.json").write_text(json.dumps({"scores": table.scores.tolist(), "seeds": list(table.seeds), "n": table.n}) + "\n")
    print(f"scored {K}x{N} providers; table in {out / 'score_table.json'}")
    return EXIT_OK


def cmd_select(args, cfg):
    out = _out(args, cfg)
    scores = None
    if args.scores:
        raw = json.loads((Path(args.scores) / "score_table.json").read_text())
        scores = selection.ScoreTable(np.array(raw["scores"]), tuple(raw["seeds"]), raw["n"])
    if args.method == "proposed":
        if scores is None:
            raise ConfigError("--method proposed needs --scores <dir with score_table.json>")
        sel = selection.solve_p2(scores)
    elif args.method == "oracle":
        profiles = _profiles(args.data) if args.data else None
        if not profiles:
            raise ConfigError("--method oracle needs --data <dir with profiles.json>")
        sel = selection.oracle_selection(profiles)
    else:
        if scores is not None:
            K, N = scores.scores.shape
        else:
            profiles = _profiles(args.data) if args.data else None
            if not profiles:
                raise ConfigError("--method random needs --scores or --data to know K and N")
            K, N = len(profiles), len(profiles[0])
        sel = selection.random_selection(K, N, seed=cfg.seeds[0])
    table = scores.scores if scores is not None else np.full(sel.shape, np.nan)
    selection.write_selection(sel, table, out)
    print(f"{args.method} selection: {sel.choices.tolist()}")
    return EXIT_OK


def _features(args, ds):
    if args.selection:
        raw = json.loads(Path(args.selection).read_text())
        sel = selection.SelectionMatrix(np.array(raw["matrix"]))
        return vfl.selected_features(ds, sel)
    return list(ds.features)


def cmd_train_vfl(args, cfg):
    out = _out(args, cfg)
    ds = data.load_dataset(args.data)
    feats = _features(args, ds)
    vc = cfg.vfl.vfl_config(cfg.seeds[0])
    if args.mode == "central":
        model, opts = vfl.init_centralized(feats, ds.labels, vc)
        tr, va = vfl.split_indices(ds.T, vc.train_fraction)
        report = vfl.TrainReport(config_hash=vc.digest())
        for epoch in range(1, vc.epochs + 1):
            vfl.centralized_train_epoch(model, opts, feats, ds.labels, tr, vc.batch_size, vc.seed, epoch)
            for split, idx in (("train", tr), ("val", va)):
                pred = vfl.central_predict(model, feats, idx).reshape(ds.labels[idx].shape)
                report.add(epoch, split, vfl.state_metrics(pred, ds.labels[idx]))
        ma, mps = vfl.init_parties(feats, ds.labels, vc)
        ma.net = model.top
        for p, net in zip(mps, model.bottoms):
            p.net = net
    else:
        ma, mps, report = vfl.train_vfl(feats, ds.labels, vc, workers=args.jobs if args.jobs and args.jobs > 1 else None)
    report.to_csv(out / "train_report.csv")
    vfl.save_parties(ma, mps, out / "parties", vc)
    last = {st: report.value(vc.epochs, "val", "mae", st) for st in vfl.STATE_NAMES}
    print(f"{args.mode}: validation MAE after {vc.epochs} epochs {last}")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    out = _out(args, cfg)
    ds = data.load_dataset(args.data)
    feats = _features(args, ds)
    ma, mps = vfl.load_parties(Path(args.model) / "parties" if (Path(args.model) / "parties").is_dir() else args.model, feats, ds.labels)
    policies = vfl.parse_lazy_spec(args.lazy or "")
    for j in policies:
        if not 0 <= j < len(mps):
            raise ConfigError(f"--lazy names mp={j}, but there are {len(mps)} providers")
    _, va = vfl.split_indices(ds.T, cfg.vfl.train_fraction)
    met = vfl.evaluate(ma, mps, va, policies, cfg.data.history_lag, cfg.seeds[0])
    experiments.write_csv(out / "evaluation.csv", ("metric", "state", "value"), [(m, s, v) for (m, s), v in sorted(met.items())])
    _print({f"{m}_{s}": v for (m, s), v in sorted(met.items())})
    return EXIT_OK


def cmd_game(args, cfg):
    out = _out(args, cfg)
    p = cfg.game_params()
    mode = args.mode or cfg.game.mode
    if mode not in ("empirical", "closed_form"):
        raise ConfigError(f"game --mode must be 'empirical' or 'closed_form', got {mode!r}")
    tr = game.simulate_repeated_game(p, mode, cfg.game.cycles, cfg.seeds[0], mechanism=args.mechanism, eta=cfg.game.eta,
                                     econ=cfg.econ, honest_mae=cfg.game.honest_mae, lazy_mae=cfg.game.lazy_mae, form=cfg.game.form)
    tr.to_csv(out / "trajectory.csv")
    path = game.strategy_path(p, cfg.game.cycles, cfg.game.form, start="initial")
    rep = game.check_bounds(path, p)
    game.write_bound_report(rep, out / "bounds.json")
    eq = game.one_shot_equilibrium(p)
    res = {"equilibrium": dataclasses.asdict(eq), "final_gamma": tr.final_gamma, "final_epsilon": tr.final_epsilon,
           "cum_u_ma": float(tr.cum_u_ma[-1]), "cum_u_mp": float(tr.cum_u_mp[-1]), "bounds_pass": rep.passed, "i_star": rep.i_star}
    (out / "game_summary.json").write_text(json.dumps(res, indent=1, sort_keys=True) + "\n")
    _print(res)
    return EXIT_OK


def cmd_experiment(args, cfg):
    out = Path(args.out or cfg.output_dir)
    if args.check:
        bad = experiments.check_manifest(out)
        if bad:
            _print({"check": "failed", "files": [list(b) for b in bad]})
            return EXIT_FAIL
        print(f"manifest OK: {out}")
        return EXIT_OK
    manifest = experiments.run_experiment(cfg, out)
    if not manifest["pass"]:
        summary = json.loads((out / "summary.json").read_text())
        report = {"scenario": cfg.scenario, "failures": {k: summary["checks"][k] for k in manifest["failures"]}}
        print(json.dumps(report, indent=1, sort_keys=True), file=sys.stderr)
        return EXIT_FAIL
    print(f"{cfg.scenario}: all checks passed ({len(manifest['files'])} files, {manifest['wall_clock_s']} s) -> {out}")
    return EXIT_OK


def cmd_print_costs(args, cfg):
    comm = cfg.comm if args.distance is None else dataclasses.replace(cfg.comm, d=args.distance)
    _print(economics.cost_summary(comm, cfg.compute, cfg.econ))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    g = _global_flags()
    parser = argparse.ArgumentParser(prog="vfl-tse", description="Reliable VFL traffic-state-estimation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[g], help="generate a synthetic dataset with noisy provider views")
    p.add_argument("--T", type=int, help="sample count (default: data.T)")
    p.add_argument("--providers", type=int, help="providers per segment (default: selection.providers; 0 for none)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-mi", parents=[g], help="train one MI model per segment on ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, help="train on the first N samples (default: all)")
    p.set_defaults(func=cmd_train_mi)

    p = sub.add_parser("score", parents=[g], help="score every provider view with its segment's MI model")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--samples", type=int, help="score on the first N samples (default: all)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", parents=[g], help="choose one provider per segment")
    p.add_argument("--method", choices=("proposed", "oracle", "random"), default="proposed")
    p.add_argument("--scores", help="directory holding score_table.json")
    p.add_argument("--data", help="dataset directory (profiles.json for oracle)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train-vfl", parents=[g], help="train the split model (or its centralized twin)")
    p.add_argument("--data", required=True)
    p.add_argument("--selection", help="selection.json; ground truth features when omitted")
    p.add_argument("--mode", choices=("vfl", "central"), default="vfl")
    p.set_defaults(func=cmd_train_vfl)

    p = sub.add_parser("evaluate", parents=[g], help="validation metrics with optional lazy providers")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="train-vfl output directory")
    p.add_argument("--selection")
    p.add_argument("--lazy", help='e.g. "mp=3:random:1.0,mp=4:historical:1.0"')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("game", parents=[g], help="simulate the repeated supervision game")
    p.add_argument("--mode", choices=("empirical", "closed_form"))
    p.add_argument("--mechanism", choices=game.MECHANISMS, default="proposed")
    p.set_defaults(func=cmd_game)

    p = sub.add_parser("experiment", parents=[g], help="run a scenario from the config")
    p.add_argument("--scenario", help=f"override the config scenario ({', '.join(config_mod.SCENARIOS)})")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("print-costs", parents=[g], help="print E_t, E_p, E_r, H and H'")
    p.add_argument("--distance", type=float, help="vehicle-provider distance in m")
    p.set_defaults(func=cmd_print_costs)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except (ConfigError, ParseError, ValidationError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
