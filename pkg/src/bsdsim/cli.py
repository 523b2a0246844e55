"""Command-line entry point: ``bsdsim <command> [options]``.

Every command writes its CSVs and a ``manifest.ini`` (the full effective
configuration plus versions) into ``--out``.  Exit codes: 0 success, 2
configuration or input error, 3 infeasible or no solution, 4 I/O error.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import pandas as pd

from . import estimator, liftopt, pneumo, replay, synth, vea
from .config import RunConfig, parse_elongation_map, versions
from .controller import WeightClass
from .errors import BSDError, ConfigError, DomainError, NoSolutionError, SchemaError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 2, 3, 4

# flag dest -> (section, key) overrides applied on top of the config file
FLAG_KEYS = {
    "profile": ("bench", "profile"),
    "bench_deflate": ("bench", "deflate_target_psig"),
    "dyn_deflate": ("dynamic", "deflate_target_psig"),
    "p_from": None,  # resolved per command
    "p_to": None,
    "elongation": None,
    "duration": None,
    "n_trials": ("synth", "n_trials"),
    "seed": None,
    "data": ("io", "data"),
    "model": ("io", "model"),
    "trace": ("io", "trace"),
    "weight": ("replay", "weight"),
    "models": ("replay", "models"),
    "phase": ("optimize", "phase"),
    "trial": ("optimize", "trial"),
    "loss_factor": ("device", "loss_factor"),
    "dwell": ("controller", "dwell"),
}
PER_COMMAND = {
    "deflate": {"p_from": "from_psig", "p_to": "to_psig", "elongation": "elongation_mm",
                "duration": "duration_s"},
    "calibrate": {"p_from": "from_psig", "p_to": "to_psig", "elongation": "elongation_mm",
                  "duration": "duration_s"},
}
SEED_SECTION = {"synth": "synth", "train": "forest", "replay": "replay"}


def build_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        name, value = item.split("=", 1)
        section, key = name.split(".", 1)
        cfg.set(section, key, value)
    for dest, target in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if dest in PER_COMMAND.get(args.command, {}):
            target = (args.command, PER_COMMAND[args.command][dest])
        elif dest == "seed" and args.command in SEED_SECTION:
            target = (SEED_SECTION[args.command], "seed")
        if target is None:
            continue
        cfg.set(target[0], target[1], str(value))
    return cfg


def write_manifest(out: Path, cfg: RunConfig, command: str) -> None:
    meta = {"command": command, **{f"version_{k}": v for k, v in versions().items()}}
    (out / "manifest.ini").write_text(cfg.to_ini(meta))


# --- commands ----------------------------------------------------------------

def cmd_bench(cfg, out):
    trace = vea.simulate_quasistatic(cfg.device(), cfg.bench())
    trace.to_csv(out / "bench.csv", index=False)
    sc = cfg.bench()
    lines = [f"profile {cfg['bench']['profile']}"]
    lines.append(f"initial loading slope {vea.loading_slope(trace, 1.0, min(40.0, sc.peak / 2)):.4f} N/mm")
    change = vea.slope_change_point(trace)
    if change is not None:
        lines.append(f"slope change at {change:.2f} mm")
    lines.append(f"cycle energy {vea.cycle_energy(trace):+.4f} J")
    return lines


def cmd_dynamic(cfg, out):
    trace = vea.simulate_dynamic(cfg.device(), cfg.dynamic())
    trace.to_csv(out / "dynamic.csv", index=False)
    return [f"active force peaks at {trace.attrs['peak_active_return_percent']:.1f} % of the return",
            f"cycle energy {vea.cycle_energy(trace):+.4f} J"]


def cmd_deflate(cfg, out):
    d = cfg["deflate"]
    trace = vea.simulate_deflation(cfg.device(), d["elongation_mm"], d["from_psig"], d["to_psig"],
                                   d["duration_s"], d["dt"])
    trace.to_csv(out / "deflate.csv", index=False)
    return [f"force added at 0.8 s: {100 * vea.fraction_of_peak_at(trace, 0.8):.2f} % of peak",
            f"final pressure {trace['pressure_psig'].iloc[-1]:.3f} psig"]


def cmd_calibrate(cfg, out):
    c = cfg["calibrate"]
    dev = cfg.device()
    gas = dev.gas
    V = dev.ipam.volume(c["elongation_mm"] / 1000.0)
    target = pneumo.DeflationTarget(pneumo.psig_to_pa(c["from_psig"], gas.P_atm),
                                    pneumo.psig_to_pa(c["to_psig"], gas.P_atm), c["duration_s"])
    path = pneumo.calibrate_orifice(target, gas, lambda _t: V, Cd=c["cd"], dt=c["dt"])
    achieved = pneumo.time_to_pressure(path.cda, target.P_start, target.P_end, gas, lambda _t: V, c["dt"])
    pd.DataFrame([{"Cd": path.Cd, "A_eff_m2": path.A_eff, "CdA_m2": path.cda,
                   "duration_s": achieved}]).to_csv(out / "calibration.csv", index=False)
    calibrated = RunConfig.from_ini(cfg.to_ini())
    calibrated.set("device", "exhaust_cd", path.Cd)
    calibrated.set("device", "exhaust_area_m2", path.A_eff)
    (out / "calibrated.ini").write_text(calibrated.to_ini())
    return [f"Cd*A_eff = {path.cda:.6g} m^2 (Cd {path.Cd}, A_eff {path.A_eff:.6g} m^2)",
            f"vent time {achieved:.4f} s"]


def _subject(cfg) -> synth.SubjectParams:
    s = cfg["synth"]
    return synth.SubjectParams(rom_max=s["rom_max_deg"], cycle_duration=s["cycle_duration_s"],
                               stand_duration=s["stand_duration_s"], seed=s["seed"])


def cmd_synth(cfg, out):
    s = cfg["synth"]
    ds = synth.generate_dataset(_subject(cfg), [synth.TrialSpec(w, s["n_trials"]) for w in WeightClass],
                                s["train_fraction"])
    index = []
    for split, trials in (("train", ds.train), ("test", ds.test)):
        (out / split).mkdir(exist_ok=True)
        for tr in trials:
            name = f"{split}/trial{tr.attrs['trial']:03d}_{tr.attrs['weight']}.csv"
            synth.write_trace(out / name, tr)
            index.append({"file": name, "split": split, "weight": tr.attrs["weight"]})
    pd.DataFrame(index).to_csv(out / "index.csv", index=False)
    return [f"{len(ds.train)} training and {len(ds.test)} test trials ({ds.n_cycles()} cycles)"]


def _load_split(data: Path, split: str):
    idx = pd.read_csv(data / "index.csv")
    return [synth.read_trace(data / f) for f in idx.loc[idx["split"] == split, "file"]]


def cmd_train(cfg, out):
    if not cfg["io"]["data"]:
        raise ConfigError("train needs --data (a directory written by 'synth')")
    data = Path(cfg["io"]["data"])
    train, test = _load_split(data, "train"), _load_split(data, "test")
    f = cfg["forest"]
    params = estimator.ForestParams(n_trees=f["n_trees"], max_depth=f["max_depth"],
                                    min_leaf=f["min_leaf"], seed=f["seed"])
    lines = []
    for mode in ("state", "weight"):
        t0 = time.perf_counter()
        X, y = estimator.training_set(train, mode, f["stride"])
        model = estimator.train_forest(X, y, params, mode=mode)
        model.save(out / f"{mode}.json")
        lines.append(f"{mode}: {len(X)} windows, trained in {time.perf_counter() - t0:.1f} s")
        if test:
            rep = estimator.evaluate(model, test, mode, cfg["controller"]["dwell"])
            rep.confusion.to_csv(out / f"confusion_{mode}.csv")
            lines.append(rep.summary())
    return lines


def cmd_classify(cfg, out):
    io_ = cfg["io"]
    if not io_["model"] or not io_["trace"]:
        raise ConfigError("classify needs --model and --trace")
    model = estimator.ForestModel.load(io_["model"])
    trace = synth.read_trace(io_["trace"])
    dwell = cfg["controller"]["dwell"]
    ends, labels = estimator.classify_trace(model, trace, dwell=dwell)
    pd.DataFrame({"t": trace["t"].to_numpy()[ends], "label": labels}).to_csv(out / "labels.csv", index=False)
    lines = [f"{len(labels)} labeled frames"]
    col = estimator.MODE_LABEL[model.mode]
    if col in trace.columns:
        rep = estimator.evaluate(model, trace, dwell=dwell)
        rep.confusion.to_csv(out / "confusion.csv")
        lines.append(rep.summary())
    return lines


def cmd_replay(cfg, out):
    r = cfg["replay"]
    if cfg["io"]["trace"]:
        trace = synth.read_trace(cfg["io"]["trace"])
    else:
        trace = synth.generate_trial(_subject(cfg), WeightClass(r["weight"]), r["seed"])
    models = None
    if r["models"]:
        d = Path(r["models"])
        models = replay.ReplayModels(estimator.ForestModel.load(d / "state.json"),
                                     estimator.ForestModel.load(d / "weight.json"))
    rc = replay.ReplayConfig(device=cfg.device(), controller=cfg.controller(),
                             dwell=cfg["controller"]["dwell"])
    emap = parse_elongation_map(r["elongation_map"])
    res = replay.replay(trace, models, rc, emap)
    replay.export(res, out)
    return [res.summary()]


def cmd_optimize(cfg, out):
    o = cfg["optimize"]
    params = cfg.surrogate()
    muscles = params.muscles()
    device = params.device()
    if o["trial"] == "surrogate":
        frames = liftopt.surrogate_trial(params, o["phase"])
    else:
        frames = liftopt.read_trial(o["trial"], [m.name for m in muscles])
    prof = liftopt.solve_trial(frames, muscles, device, o["phase"])
    prof.to_csv(out / f"profile_{o['phase']}.csv", index=False)
    slope, r2 = liftopt.profile_linearity(prof)
    return [f"{o['phase']}: F_total at 0/50/100 % RoM = "
            + "/".join(f"{prof['F_total_N'].iloc[i]:.1f}" for i in (0, len(prof) // 2, -1)) + " N",
            f"linear fit slope {slope:.3f} N per % RoM, R^2 {r2:.4f}",
            f"max equilibrium residual {prof.attrs['max_residual']:.2e} Nm"]


def cmd_energy(cfg, out):
    if not cfg["io"]["trace"]:
        raise ConfigError("energy needs --trace (a CSV with elongation and force columns)")
    df = pd.read_csv(cfg["io"]["trace"])
    force_col = next((c for c in ("force_N", "F_total_N") if c in df.columns), None)
    if "elongation_mm" not in df.columns or force_col is None:
        raise SchemaError("trace needs elongation_mm and force_N (or F_total_N) columns")
    l = df["elongation_mm"].to_numpy(float)
    F = df[force_col].to_numpy(float)
    rows = []
    for k, (s, e) in enumerate(replay.find_cycles(l, on=1.0, off=0.5)):
        seg = pd.DataFrame({"elongation_mm": l[s:e + 1], "force_N": F[s:e + 1]})
        rows.append({"cycle": k, "start": s, "end": e, "energy_J": vea.cycle_energy(seg)})
    res = pd.DataFrame(rows, columns=["cycle", "start", "end", "energy_J"])
    res.to_csv(out / "energy.csv", index=False)
    return [f"cycle {r.cycle}: {r.energy_J:+.4f} J" for r in res.itertuples()] or ["no closed cycles"]


COMMANDS = {
    "bench": cmd_bench, "dynamic": cmd_dynamic, "deflate": cmd_deflate, "calibrate": cmd_calibrate,
    "synth": cmd_synth, "train": cmd_train, "classify": cmd_classify, "replay": cmd_replay,
    "optimize": cmd_optimize, "energy": cmd_energy,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsdsim", description="Back-support device simulation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="INI configuration file (a manifest works too)")
        sp.add_argument("--out", default=None, help="results directory (default results/<command>)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any configuration key; repeatable")
        return sp

    sp = add("bench", "quasi-static force-elongation cycle")
    sp.add_argument("--profile", help="never | always | engaged-at-<mm>mm")
    sp.add_argument("--deflate-target", dest="bench_deflate", type=float, help="vent to this psig at peak")
    sp.add_argument("--loss-factor", type=float)

    sp = add("dynamic", "fast cycle with delayed IPAM venting")
    sp.add_argument("--deflate-target", dest="dyn_deflate", type=float)

    for name, help_ in (("deflate", "vent the IPAM at fixed elongation"),
                        ("calibrate", "fit Cd*A_eff to a vent-time target")):
        sp = add(name, help_)
        sp.add_argument("--from", dest="p_from", type=float, help="start pressure, psig")
        sp.add_argument("--to", dest="p_to", type=float, help="end pressure, psig")
        sp.add_argument("--elongation", type=float, help="mm")
        sp.add_argument("--duration", type=float, help="s")

    sp = add("synth", "generate a labeled synthetic dataset")
    sp.add_argument("--n-trials", type=int)
    sp.add_argument("--seed", type=int)

    sp = add("train", "train state and weight forests")
    sp.add_argument("--data")
    sp.add_argument("--seed", type=int)

    sp = add("classify", "classify a trace with a saved model")
    sp.add_argument("--model")
    sp.add_argument("--trace")
    sp.add_argument("--dwell", type=int)

    sp = add("replay", "closed-loop replay of a trace")
    sp.add_argument("--trace")
    sp.add_argument("--weight", choices=[w.value for w in WeightClass])
    sp.add_argument("--models", help="directory holding state.json and weight.json")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--loss-factor", type=float)
    sp.add_argument("--dwell", type=int)

    sp = add("optimize", "static optimization force profile")
    sp.add_argument("--phase", choices=["lowering", "lifting"])
    sp.add_argument("--trial", help="'surrogate' or a trial CSV")

    sp = add("energy", "energy per closed cycle of a force-elongation CSV")
    sp.add_argument("--trace")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args)
        out = Path(args.out or Path("results") / args.command)
        out.mkdir(parents=True, exist_ok=True)
        lines = COMMANDS[args.command](cfg, out)
        write_manifest(out, cfg, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoSolutionError as exc:
        print(f"no solution: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (OSError, SchemaError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DomainError, BSDError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in lines:
        print(line)
    print(f"results in {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
