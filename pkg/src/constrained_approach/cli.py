"""Command-line front end: ``check``, ``run``, ``montecarlo`` and ``scenarios``.

Exit codes: 0 success, 1 bad input or unwritable output, 2 a requested check failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from functools import partial

import numpy as np

from . import config as cfgmod
from .game import (
    GameError,
    check_convex_approachable,
    find_safe_actions,
    pure,
    response_within_region,
    safety_gap,
)
from .geometry import GeometryError, GridOracle, extreme_samples, region_contains
from .scenarios import SCENARIO_NAMES, ScenarioError, build_scenario, scenario_from_dict, scenario_to_dict
from .simulate import SCHEMA_VERSION, atomic_write, monte_carlo, simulate_batch, write_trace_csv
from .strategies import check_waypoint_conditions

EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 1, 2


def _fmt(x):
    if x is None:
        return "n/a"
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    raise TypeError(type(v).__name__)


def _clean(obj):
    """Replace non-finite floats (not valid JSON) by strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def _dump_json(path, payload):
    text = json.dumps(_clean(payload), indent=2, sort_keys=True, default=_json_default)
    atomic_write(path, lambda fh: fh.write(text + "\n"))


# ---------------------------------------------------------------------------
# configuration assembly


def _load_config(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    data = cfg.to_dict()
    if args.scenario:
        data["scenario"] = args.scenario
    for flag, key in (("seed", "base_seed"), ("runs", "runs"), ("horizon", "horizon"), ("out", "output_dir"),
                      ("parallel", "parallel"), ("stride", "trace_stride")):
        val = getattr(args, flag, None)
        if val is not None:
            data[key] = val
    if getattr(args, "strategy", None):
        data["strategy"] = {**data.get("strategy", {}), "name": args.strategy}
    if getattr(args, "adversary", None):
        data["adversary"] = {**data.get("adversary", {}), "name": args.adversary}
    return cfgmod.from_dict(data)


def _scenario(cfg):
    if isinstance(cfg.scenario, dict):
        if cfg.overrides:
            raise ScenarioError("[overrides] applies to built-in scenarios only")
        return scenario_from_dict(cfg.scenario)
    return build_scenario(cfg.scenario, cfg.overrides)


def _strategy_params(cfg, scenario):
    params = {k: v for k, v in cfg.strategy.items() if k != "name"}
    if "safe_action" in params and isinstance(params["safe_action"], str):
        try:
            params["safe_action"] = scenario.game.row_index(params["safe_action"])
        except ValueError:
            raise ScenarioError(f"unknown row action {params['safe_action']!r}") from None
    return cfg.strategy.get("name"), params


def _factories(cfg, scenario):
    name, params = _strategy_params(cfg, scenario)
    adv = dict(cfg.adversary)
    adv_name = adv.pop("name", "uniform")
    scenario.make_strategy(name, **params)
    scenario.make_adversary(adv_name, **adv)
    return partial(scenario.make_strategy, name, **params), partial(scenario.make_adversary, adv_name, **adv)


# ---------------------------------------------------------------------------
# commands


def cmd_scenarios(args):
    for name in SCENARIO_NAMES:
        s = build_scenario(name)
        print(f"{name:32s} {s.expectation.value:28s} {s.description}")
    return EXIT_OK


def check_report(scenario, resolution=400):
    """Plain-data check results for a scenario, plus the overall verdict."""
    game, region, target = scenario.game, scenario.region, scenario.target
    safe = find_safe_actions(game, region)
    report = {
        "scenario": scenario.name,
        "safe_actions": [game.row_names[i] for i in safe],
        "c2": bool(safe),
    }
    mix = None
    if scenario.waypoint_plan is not None:
        mix = scenario.waypoint_plan.safe_mix
    elif safe:
        mix = pure(safe[0], game.num_actions_p1)
    report["delta"] = safety_gap(game, region, mix) if mix is not None else None
    report["response_within_region"] = {
        game.row_names[i]: response_within_region(game, region, pure(i, game.num_actions_p1)) for i in safe
    }
    closed = type(region)(*(getattr(region, f) for f in _region_fields(region)), closed=True)
    if bool(np.all(region_contains(closed, extreme_samples(target, 64)))):
        report["c1"] = check_convex_approachable(game, target)
    else:
        report["c1"] = None
    ok = report["c2"] and report["c1"] is not False
    if scenario.waypoint_plan is not None:
        pts = np.concatenate([game.payoff.reshape(-1, game.dim), extreme_samples(target, 64)])
        oracle = GridOracle.around(pts, margin=0.25, resolution=resolution) if game.dim == 2 else None
        w = check_waypoint_conditions(scenario.waypoint_plan, game, region, oracle)
        report["waypoint"] = {
            "crossing_forced": list(w.crossing_forced),
            "hull_inside_region": list(w.hull_inside),
            "final_target_approachable": w.final_approachable,
            "resolution": w.resolution,
            "all_pass": w.all_pass,
        }
        ok = ok and w.all_pass
    report["all_pass"] = bool(ok)
    return report


def _region_fields(region):
    if hasattr(region, "normals"):
        return ("normals", "offsets")
    return ("lo", "hi")


def cmd_check(args):
    cfg = _load_config(args)
    scenario = _scenario(cfg)
    report = check_report(scenario, cfg.grid_resolution)
    print(f"scenario            {report['scenario']}")
    print(f"safe actions        {', '.join(report['safe_actions']) or 'none'}")
    print(f"C2 (safe action)    {_fmt(report['c2'])}")
    print(f"delta               {_fmt(report['delta'])}")
    for name, inside in report["response_within_region"].items():
        print(f"R1({name}) in D{'':<{max(0, 8 - len(name))}} {_fmt(inside)}")
    print(f"C1 (approximate)    {'unchecked' if report['c1'] is None else _fmt(report['c1'])}")
    if "waypoint" in report:
        w = report["waypoint"]
        for ell, (a, b) in enumerate(zip(w["crossing_forced"], w["hull_inside_region"])):
            print(f"link {ell}: crossing forced {_fmt(a)}, hull inside D {_fmt(b)}")
        print(f"final target approachable {_fmt(w['final_target_approachable'])} (grid {w['resolution']})")
    print(f"all checks pass     {_fmt(report['all_pass'])}")
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        _dump_json(os.path.join(cfg.output_dir, "check.json"), {"schema_version": SCHEMA_VERSION, **report})
    if args.json:
        print(json.dumps(_clean(report), indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK if report["all_pass"] else EXIT_CHECK


def cmd_run(args):
    cfg = _load_config(args)
    scenario = _scenario(cfg)
    strategy, adversary = _factories(cfg, scenario)
    out = cfg.output_dir or "."
    os.makedirs(out, exist_ok=True)
    seeds = list(range(cfg.base_seed, cfg.base_seed + cfg.runs))
    batch = simulate_batch(scenario.game, strategy(), adversary(), cfg.horizon, seeds, scenario.region,
                           scenario.target, cfg.trace_stride)
    files, runs = [], []
    for k, seed in enumerate(seeds):
        trace = batch.trace(k)
        fname = f"run_{seed}.csv"
        write_trace_csv(trace, scenario.game, scenario.target, scenario.region, os.path.join(out, fname))
        files.append(fname)
        runs.append({"seed": seed, "file": fname, "stayed_in_region": trace.stayed_in_region,
                     "exit_stage": trace.exit_stage, "final_distance": float(trace.dist_to_target[-1])})
        print(f"seed {seed}: stayed in D {_fmt(trace.stayed_in_region)}, "
              f"final d(g, A) {_fmt(float(trace.dist_to_target[-1]))} -> {fname}")
    manifest = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), "seeds": seeds, "files": files,
                "runs": runs, "scenario": scenario_to_dict(scenario)}
    _dump_json(os.path.join(out, "manifest.json"), manifest)
    return EXIT_OK


def cmd_montecarlo(args):
    cfg = _load_config(args)
    scenario = _scenario(cfg)
    strategy, adversary = _factories(cfg, scenario)
    workers = cfg.parallel or os.cpu_count() or 1
    labels = {"scenario": scenario.name, "strategy": cfg.strategy.get("name", scenario.default_strategy),
              "adversary": cfg.adversary.get("name", "uniform")}
    report = monte_carlo(scenario.game, strategy, adversary, cfg.horizon, cfg.runs, cfg.base_seed,
                         scenario.region, scenario.target, stride=cfg.trace_stride, workers=workers,
                         chunk_size=max(1, -(-cfg.runs // workers)), labels=labels)
    d = report.to_dict()
    print(f"scenario {labels['scenario']}, strategy {labels['strategy']}, adversary {labels['adversary']}")
    print(f"runs {report.runs}, horizon {report.horizon}, seeds {d['seeds'][0]}..{d['seeds'][1]}")
    print(f"stay-in-D rate      {_fmt(report.stay_in_region_rate)}")
    if report.rate_fit is not None:
        f = report.rate_fit
        print(f"rate fit            slope {_fmt(f.slope)}, intercept {_fmt(f.intercept)}, r2 {_fmt(f.r2)}")
    else:
        print(f"rate fit            unavailable ({report.rate_fit_error})")
    if report.safe_frequency is not None:
        sf = report.safe_frequency
        for k, t in enumerate(sf.checkpoints):
            print(f"f/sqrt(t) at {t:<7d} median {_fmt(float(np.median(sf.normalized[:, k])))}")
    print(f"final d(g, A)       median {_fmt(report.final_distance['median'])}, "
          f"q95 {_fmt(report.final_distance['q95'])}")
    print("epsilon  T(epsilon)")
    for eps, t in report.epsilon_attainment.items():
        print(f"{eps:<8.6g} {t if t is not None else 'not attained'}")
    if cfg.output_dir:
        os.makedirs(cfg.output_dir, exist_ok=True)
        payload = {**d, "config": cfg.to_dict()}
        _dump_json(os.path.join(cfg.output_dir, "report.json"), payload)
    if args.json:
        print(json.dumps(_clean(d), indent=2, sort_keys=True, default=_json_default))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="constrained-approach",
                                     description="Approachability with constraints: checks and simulations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sim=True):
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--scenario", help="built-in scenario name (overrides the config)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--json", action="store_true", help="also print the JSON payload")
        if sim:
            p.add_argument("--seed", type=int, help="base seed")
            p.add_argument("--runs", type=int, help="number of runs")
            p.add_argument("--horizon", type=int, help="stages per run")
            p.add_argument("--stride", type=int, help="record averages every k stages")
            p.add_argument("--strategy", help="player 1 strategy name")
            p.add_argument("--adversary", help="player 2 model name")
            p.add_argument("--parallel", type=int, help="worker processes (default: available cores)")

    common(sub.add_parser("check", help="verify the scenario's conditions"), sim=False)
    common(sub.add_parser("run", help="simulate runs and write per-run CSV traces"))
    common(sub.add_parser("montecarlo", help="aggregate many runs into a report"))
    sub.add_parser("scenarios", help="list built-in scenarios")
    return parser


COMMANDS = {"check": cmd_check, "run": cmd_run, "montecarlo": cmd_montecarlo, "scenarios": cmd_scenarios}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (cfgmod.ConfigError, ScenarioError, GameError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
