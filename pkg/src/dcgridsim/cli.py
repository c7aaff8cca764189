"""Command line: ``dcgridsim {simulate,score,schedule,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from datetime import datetime, timedelta
from pathlib import Path

from . import engine
from .config import ConfigError, RunManifest, load_config, load_inputs
from .market import performance_score
from .plant import Mode, Plant
from .scheduling import (Forecasts, HorizonModel, Schedule, schedule_rows, stage1_baseline_schedule,
                         stage2_reserve_schedule)
from .timeseries import TimeSeries

log = logging.getLogger("dcgridsim")

FAILED = "FAILED"


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dcgridsim", description="Data center grid-services co-simulation.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = ap.add_subparsers(dest="command", required=True, metavar="{simulate,score,schedule,report}")

    p = sub.add_parser("simulate", help="run one scenario or all of them")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--scenario", required=True, choices=[*engine.SCENARIOS, "all"])
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("score", help="performance score of a response against a regulation signal")
    p.add_argument("--reg", required=True, type=Path)
    p.add_argument("--res", required=True, type=Path)

    p = sub.add_parser("schedule", help="one-shot stage 1 or stage 2 solve")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--stage", required=True, type=int, choices=(1, 2))
    p.add_argument("--hour", required=True, help="hours after the run start, or an ISO timestamp")

    p = sub.add_parser("report", help="cost comparison of finished runs")
    p.add_argument("--runs", required=True, nargs="+", type=Path)
    return ap


def _mark_failed(out: Path, message: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / FAILED).write_text(message + "\n")


def cmd_simulate(args) -> int:
    manifest = load_config(args.config)
    data = load_inputs(manifest)
    scenarios = list(manifest.scenarios) if args.scenario == "all" else [args.scenario]
    cfgs = [manifest.scenario_config(s) for s in scenarios]
    for c in cfgs:
        engine.check_inputs(c, data)
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / FAILED).unlink(missing_ok=True)
    for s in scenarios:
        (out / s / FAILED).unlink(missing_ok=True)
        (out / s / "cost.csv").unlink(missing_ok=True)
    try:
        results = engine.run_scenarios(cfgs, data)
        for name, res in results.items():
            engine.write_run(res, out / name)
            scores = f", mean score {res.average_score:.3f} over {len(res.scores)} h" if res.scores else ""
            print(f"{name}: total ${res.cost.total:,.2f}{scores} -> {out / name}")
        if len(results) > 1:
            rep = engine.report({k: v.cost for k, v in results.items()})
            (out / "report.txt").write_text(rep.text() + "\n")
            rep.to_csv(out / "report.csv")
            print(rep.text())
    except Exception as exc:
        _mark_failed(out, f"{type(exc).__name__}: {exc}")
        raise
    return 0


def cmd_score(args) -> int:
    reg = TimeSeries.from_csv(args.reg)
    res = TimeSeries.from_csv(args.res)
    s = performance_score(reg, res)
    print(f"s={s.s:.6g} s_acc={s.s_acc:.6g} s_del={s.s_del:.6g} s_pre={s.s_pre:.6g} delay={s.delta_star:g}s")
    return 0


def _hour_start(manifest: RunManifest, spec: str) -> datetime:
    try:
        t = manifest.start + timedelta(hours=int(spec))
    except ValueError:
        try:
            t = datetime.fromisoformat(spec)
        except ValueError:
            raise ConfigError(f"--hour: expected an hour offset or ISO timestamp, got {spec!r}") from None
    if (t - manifest.start).total_seconds() % 3600:
        raise ConfigError("--hour must fall on an hour boundary of the run")
    return t


def cmd_schedule(args) -> int:
    manifest = load_config(args.config)
    data = load_inputs(manifest)
    t = _hour_start(manifest, args.hour)
    scenario = "OPBL_MM" if "OPBL_MM" in manifest.scenarios else manifest.scenarios[0]
    sim = engine.Simulation(manifest.scenario_config(scenario), data)
    plant: Plant = sim.plant
    agg = manifest.plant.aggregator
    lam0 = data.workload.value_at(t)
    state = plant.initial_state(manifest.initial_soc, manifest.initial_T_room, Mode.M4,
                                min(lam0 * (agg.b0 + agg.b1 + agg.b2) / 1000, manifest.plant.u_c_max))
    fc: Forecasts = sim.forecasts
    model = HorizonModel(plant, state, t, fc, sim.opt)
    sched: Schedule = stage1_baseline_schedule(fc, sim.opt, plant, state, t, model=model)
    if args.stage == 2:
        sched = stage2_reserve_schedule(sched.P_bas, fc, sim.opt, plant, state, t, init=sched.u_c_set_traj,
                                        model=model)
    print("hour,P_bas_kW,C_reg_kW,u_c_set_bas_kW")
    for j, P, C, u in schedule_rows(sched):
        print(f"{j},{P:.6g},{C:.6g},{u:.6g}")
    return 0


def cmd_report(args) -> int:
    costs = {}
    for d in args.runs:
        if (d / FAILED).exists():
            raise RuntimeError(f"{d}: run failed ({(d / FAILED).read_text().strip()})")
        path = d / "cost.csv"
        if not path.is_file():
            raise RuntimeError(f"{d}: no completed run (cost.csv missing)")
        name, cost = engine.read_cost(path)
        if name in costs:
            name = f"{name}@{d}"
        costs[name] = cost
    print(engine.report(costs).text())
    return 0


COMMANDS = {"simulate": cmd_simulate, "score": cmd_score, "schedule": cmd_schedule, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)  # exits with status 2 on bad usage
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:
        print(f"dcgridsim {args.command}: error: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
