"""Command-line entry point: ``netsim run | optimize | export-channel | serve``.

Exit status: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import io, radio, scenarios
from .channel import GridSpec, MultipathProfile, write_jtch
from .core import ConfigError, load_scenario, parse_scenario, write_scenario
from .engine import Action, ActionError, EpisodeSpec, LinkSpec, Mode, RewardWeights, StackParams, run_episode, run_link_channel_sim
from .optimize import Objective, SearchSpace, exhaustive_search, local_search_optimize


def _read_spec_file(path, seed_override=None) -> EpisodeSpec:
    p = Path(path)
    try:
        doc = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("--spec", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--spec", f"malformed JSON in {path}: {exc}") from None
    if seed_override is not None:
        doc = dict(doc, seed_override=seed_override)
    return EpisodeSpec.from_dict(doc, p.parent)


def _load_spec(args, mode: str) -> EpisodeSpec:
    if getattr(args, "spec", None):
        return _read_spec_file(args.spec, args.seed_override)
    if not args.scenario:
        raise ConfigError("--scenario", "one of --scenario or --spec is required")
    scn = load_scenario(args.scenario)
    if args.seed_override is not None:
        scn = scn.with_seed(args.seed_override)
    try:
        weights = RewardWeights.parse(args.weights) if args.weights else RewardWeights()
    except ValueError as exc:
        raise ConfigError("--weights", str(exc)) from None
    stack = StackParams(policy=getattr(args, "policy", "pf"), n_tti=getattr(args, "n_tti", 100))
    return EpisodeSpec(
        scenario=scn,
        horizon_steps=args.steps,
        step_seconds=args.step_seconds,
        weights=weights,
        mode=Mode(mode),
        stack=stack,
        per_user=getattr(args, "per_user", False),
    )


def load_actions(path):
    """A single action document, or ``{"schedule": [action, ...]}`` for per-step actions."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("--action", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--action", f"malformed JSON in {path}: {exc}") from None
    try:
        if isinstance(doc, dict) and "schedule" in doc:
            return [Action.from_dict(a) if a is not None else None for a in doc["schedule"]]
        return Action.from_dict(doc)
    except ActionError as exc:
        raise ConfigError("--action", str(exc)) from None


def cmd_run(args) -> int:
    started = time.time()
    out = Path(args.out)
    if args.mode == "link":
        if not args.scenario:
            raise ConfigError("--scenario", "link mode needs --scenario")
        scn = load_scenario(args.scenario)
        if args.seed_override is not None:
            scn = scn.with_seed(args.seed_override)
        return _run_link(args, scn, out, started)
    spec = _load_spec(args, args.mode)
    actions = load_actions(args.action) if args.action else None
    if isinstance(actions, list):
        for a in actions:
            if a is not None:
                a.validate(spec.scenario)
    elif actions is not None:
        actions.validate(spec.scenario)
    frames = run_episode(spec, actions)
    extra = {}
    out.mkdir(parents=True, exist_ok=True)
    if args.heatmap:
        beams = actions[0] if isinstance(actions, list) else actions
        extra["heatmap"] = _write_heatmap(args, spec, beams, out)
    io.persist(out, spec.scenario, spec.to_dict(), frames, started, extra)
    return 0


def _write_heatmap(args, spec, beams, out: Path) -> str:
    scn = spec.scenario
    cov = radio.grid_frame(scn, beams)
    if args.heatmap_beam:
        cell_id, beam_id = (int(v) for v in args.heatmap_beam.split(":"))
        ci = cov.cell_ids.index(cell_id)
        vals = cov.rsrp[:, ci, beam_id]
    elif args.heatmap == "sinr":
        vals = cov.sinr
    else:
        vals = cov.serving_rsrp
    io.write_heatmap(out / "heatmap.csv", vals, scn.region.height, scn.region.width)
    return "heatmap.csv"


def _grid_spec(args) -> GridSpec:
    return GridSpec(args.n_subcarriers, args.n_symbols, args.spacing)


def _link_spec(args, scn) -> LinkSpec:
    cell = args.cell if args.cell is not None else scn.cells[0].cell_id
    w, h = scn.region.extent
    x = args.x if args.x is not None else w / 2
    y = args.y if args.y is not None else h / 2
    profile = None
    if args.n_taps is not None or args.delay_spread is not None or args.rician_k or args.doppler:
        reg = scn.region
        from .core import SCENARIO_CLASSES

        cls = SCENARIO_CLASSES[int(reg.scenario_class.ravel()[reg.raster_index(x, y)])]
        profile = MultipathProfile(cls, args.n_taps or 8, args.delay_spread or 300e-9, args.rician_k, args.doppler)
    return LinkSpec(cell, (x, y), _grid_spec(args), profile, not args.no_shadowing)


def _run_link(args, scn, out: Path, started: float) -> int:
    out.mkdir(parents=True, exist_ok=True)
    try:
        grid = run_link_channel_sim(scn, _link_spec(args, scn))
    except ValueError as exc:
        raise ConfigError("link", str(exc)) from None
    write_jtch(grid, out / "channel.jtch")
    io.persist(out, scn, {"mode": "link"}, [], started, {"channel": "channel.jtch"})
    return 0


def cmd_export_channel(args) -> int:
    scn = load_scenario(args.scenario)
    if args.seed_override is not None:
        scn = scn.with_seed(args.seed_override)
    try:
        grid = run_link_channel_sim(scn, _link_spec(args, scn))
    except ValueError as exc:
        raise ConfigError("link", str(exc)) from None
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_jtch(grid, args.out)
    return 0


def _parse_grid(text: str):
    try:
        name, lo, hi, step = text.split(":")
        return name, float(lo), float(hi), float(step)
    except ValueError:
        raise ConfigError("--grid", f"expected field:lo:hi:step, got {text!r}") from None


def cmd_optimize(args) -> int:
    spec = _load_spec(args, args.mode)
    name, lo, hi, step = _parse_grid(args.grid)
    try:
        space = SearchSpace.grid(spec, name, lo, hi, step, args.grid_scope)
    except ValueError as exc:
        raise ConfigError("--grid", str(exc)) from None
    if args.budget < 1:
        raise ConfigError("--budget", "must be >= 1")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    objective = Objective(spec)
    res = local_search_optimize(spec, args.budget, space, seed=args.seed, objective=objective)
    (out / "best_action.json").write_text(json.dumps(res.best_action.to_dict(), indent=1), encoding="utf-8")
    io.write_trace(out / "trace.csv", res.trace)
    summary = {"best_reward": res.best_reward, "evaluations": len(res.trace), "space_size": space.size}
    if args.grid_exhaustive:
        ex = exhaustive_search(spec, space, objective)
        (out / "oracle.json").write_text(
            json.dumps({"best_reward": ex.best_reward, "best_action": ex.best_action.to_dict()}, indent=1),
            encoding="utf-8",
        )
        io.write_trace(out / "exhaustive_trace.csv", ex.trace)
        summary["oracle_best_reward"] = ex.best_reward
        summary["ratio"] = res.best_reward / ex.best_reward if ex.best_reward else None
    (out / "summary.json").write_text(json.dumps(summary, indent=1), encoding="utf-8")
    print(json.dumps(summary))
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(message)s")
    try:
        serve(args.bind, args.max_sessions)
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        pass
    return 0


def cmd_scenario(args) -> int:
    builders = {
        "reference": scenarios.reference_doc,
        "three-cell": scenarios.three_cell_doc,
        "two-cell": scenarios.two_cell_doc,
        "single-cell": scenarios.single_cell_doc,
    }
    scn = parse_scenario(builders[args.name]())
    write_scenario(scn, args.out)
    return 0


def _add_common(p, steps_default=288, scenario_required=True):
    p.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
    p.add_argument("--steps", type=int, default=steps_default, help="episode length in steps")
    p.add_argument("--step-seconds", type=float, default=300.0)
    p.add_argument("--weights", help="five comma floats: rsrp,sinr,users,traffic,rate")
    p.add_argument("--seed-override", type=int, help="replace the scenario's master seed")


def _add_link(p):
    p.add_argument("--cell", type=int)
    p.add_argument("--x", type=float)
    p.add_argument("--y", type=float)
    p.add_argument("--n-subcarriers", type=int, default=72)
    p.add_argument("--n-symbols", type=int, default=14)
    p.add_argument("--spacing", type=float, default=30e3)
    p.add_argument("--n-taps", type=int)
    p.add_argument("--delay-spread", type=float)
    p.add_argument("--rician-k", type=float, default=0.0)
    p.add_argument("--doppler", type=float, default=0.0)
    p.add_argument("--no-shadowing", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netsim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run a combination emulator")
    _add_common(p, scenario_required=False)
    p.add_argument("--spec", help="episode spec JSON (the service's reset payload); replaces the other episode flags")
    p.add_argument("--mode", choices=["stack", "coverage", "link"], default="stack")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--action", help="action JSON (single action or {'schedule': [...]})")
    p.add_argument("--policy", choices=["pf", "rr"], default="pf")
    p.add_argument("--n-tti", type=int, default=100)
    p.add_argument("--per-user", action="store_true", help="include per-user records in kpis.jsonl")
    p.add_argument("--heatmap", choices=["rsrp", "sinr"])
    p.add_argument("--heatmap-beam", metavar="CELL:BEAM", help="per-beam RSRP map instead of serving RSRP")
    _add_link(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("optimize", help="search beam parameters")
    _add_common(p, steps_default=1)
    p.add_argument("--mode", choices=["stack", "coverage"], default="coverage")
    p.add_argument("--budget", type=int, default=150)
    p.add_argument("--grid", default="electrical_tilt:0:12:2", help="field:lo:hi:step")
    p.add_argument("--grid-scope", choices=["cell", "beam"], default="cell")
    p.add_argument("--grid-exhaustive", action="store_true", help="also evaluate the full grid (oracle)")
    p.add_argument("--seed", type=int, default=0, help="annealer seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("export-channel", help="write one link's RE-level channel as .jtch")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed-override", type=int)
    p.add_argument("--out", required=True, help="output .jtch file")
    _add_link(p)
    p.set_defaults(func=cmd_export_channel)

    p = sub.add_parser("serve", help="TCP reset/step session service")
    p.add_argument("--bind", default="127.0.0.1:7070")
    p.add_argument("--max-sessions", type=int, default=8)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("scenario", help="write a built-in scenario document")
    p.add_argument("name", choices=["reference", "three-cell", "two-cell", "single-cell"])
    p.add_argument("out")
    p.set_defaults(func=cmd_scenario)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ActionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"runtime error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
