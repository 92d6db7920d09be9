"""Command-line front end.

Every subcommand writes its results under ``--out`` and prints a short
summary.  Outputs depend only on the config and seed, so two runs with the
same arguments produce byte-identical files.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .channel_sim import PRESETS, read_mapping, preset, profiles_from_mapping, simulate
from .dataset import Dataset, load_column_map, load_csv, min_gain_table, save_csv
from .errors import UwbDessError
from .evaluation import GAIN_POLICIES, agc_study, dump_json, loo_distance_cv, split_evaluate, transfer_study
from .features import FEATURE_PRESETS, feature_preset
from .protocol import CALIBRATION_PACKETS_PER_CELL, bench, calibrate, calibration_set


class CliError(Exception):
    pass


def derive_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible child seed for one of several datasets."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1, np.uint64)[0])


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        return read_mapping(path)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError(f"cannot parse config {path}: {exc}") from exc


def _pick(flag, cfg: dict, key: str, default):
    """Flags win over the config file, which wins over the default."""
    if flag is not None:
        return flag
    return cfg.get(key, default)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, cfg: dict) -> int:
    return int(_pick(args.seed, cfg, "seed", 0))


def _model(args, cfg: dict, key: str = "model"):
    if getattr(args, key, None) is not None:
        return json.loads(getattr(args, key)) if getattr(args, key).startswith("{") else getattr(args, key)
    return cfg.get(key, "knn")


def _simulated(preset_name: str, cfg: dict, seed: int) -> Dataset:
    env, rx, scenario = profiles_from_mapping({**cfg, "preset": preset_name}, seed)
    return simulate(env, rx, scenario)


def _ingested(paths, cfg: dict) -> list:
    column_map = cfg.get("column_map")
    if isinstance(column_map, str):
        column_map = load_column_map(column_map)
    return [load_csv(p, column_map) for p in paths]


def _counts(ds: Dataset) -> str:
    return (f"{len(ds.records)} records, {len(ds.delivered().records)} delivered, "
            f"{len(ds.distances())} distances, agc {'on' if ds.agc_on else 'off'}")


# --- subcommands -----------------------------------------------------------------

def cmd_simulate(args, cfg: dict) -> int:
    seed = _seed(args, cfg)
    name = _pick(args.preset, cfg, "preset", "hallway_agc_off")
    env, rx, scenario = profiles_from_mapping({**cfg, "preset": name}, seed)
    ds = simulate(env, rx, scenario)
    path = _out_dir(args) / f"{name}_seed{seed}.csv"
    save_csv(ds, path)
    print(f"wrote {path}: {_counts(ds)}")
    return 0


def cmd_ingest(args, cfg: dict) -> int:
    column_map = load_column_map(args.column_map) if args.column_map else cfg.get("column_map")
    if isinstance(column_map, str):
        column_map = load_column_map(column_map)
    out = _out_dir(args)
    for src in args.csv:
        ds = load_csv(src, column_map)
        path = out / (Path(src).stem + ".normalized.csv")
        save_csv(ds, path)
        table = min_gain_table(ds)
        print(f"{src}: {_counts(ds)}")
        print("  min gain per distance: " + ", ".join(f"{d:g} m: {g:g} dB" for d, g in table.items()))
        print(f"  wrote {path}")
    return 0


def cmd_agc_study(args, cfg: dict) -> int:
    seed = _seed(args, cfg)
    if args.csv:
        loaded = _ingested(args.csv, cfg)
        datasets = {("on" if ds.agc_on else "off"): ds for ds in loaded}
        if len(datasets) != 2:
            raise CliError("agc-study needs one AGC-on and one AGC-off dataset")
    else:
        on = _pick(args.on_preset, cfg, "on_preset", "hallway_agc_on")
        off = _pick(args.off_preset, cfg, "off_preset", "hallway_agc_off")
        datasets = {"on": _simulated(on, cfg, seed), "off": _simulated(off, cfg, seed)}
    spec_name = _pick(args.features, cfg, "features", "fppl_gain")
    frac = float(_pick(args.train_fraction, cfg, "train_fraction", 0.75))
    cells = agc_study(datasets, feature_preset(spec_name), _model(args, cfg), frac, seed)

    report = {
        "features": spec_name,
        "seed": seed,
        "train_fraction": frac,
        "cells": [{"agc": agc, "gain_policy": policy, **rep.to_dict()}
                  for (agc, policy), rep in sorted(cells.items())],
    }
    out = _out_dir(args)
    dump_json(report, out / "agc_study.json")
    text = agc_table(report)
    (out / "agc_study.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def agc_table(report: dict) -> str:
    cells = {(c["agc"], c["gain_policy"]): c["averaged_mae"] for c in report["cells"]}
    lines = ["averaged MAE [m]", "agc".ljust(8) + "".join(p.rjust(12) for p in GAIN_POLICIES)]
    for agc in ("on", "off"):
        lines.append(agc.ljust(8) + "".join(f"{cells[(agc, p)]:12.3f}" for p in GAIN_POLICIES))
    return "\n".join(lines)


def cmd_transfer(args, cfg: dict) -> int:
    seed = _seed(args, cfg)
    if args.csv:
        loaded = _ingested(args.csv, cfg)
        datasets = {}
        for ds in loaded:
            if len(ds.env_ids) != 1:
                raise CliError(f"each transfer input must hold one environment, got {ds.env_ids}")
            datasets[ds.env_ids[0]] = ds
        if len(datasets) != len(loaded):
            raise CliError("transfer inputs must carry distinct env_id values")
    else:
        presets = cfg.get("environments", ["hall_agc_off", "hallway_agc_off"])
        datasets = {}
        for i, name in enumerate(presets):
            ds = _simulated(name, cfg, derive_seed(seed, i))
            datasets[ds.env_ids[0]] = ds
    default_spec = "cir32_nogain" if args.no_gain else "cir32_gain"
    spec_name = default_spec if args.no_gain else _pick(args.features, cfg, "features", default_spec)
    spec = feature_preset(spec_name)
    model = _model(args, cfg)
    frac = float(_pick(args.train_fraction, cfg, "train_fraction", 0.75))
    out = _out_dir(args)

    if args.loo:
        result = {"features": spec_name, "seed": seed, "environments": {}}
        lines = ["averaged MAE [m]", "env".ljust(12) + "split".rjust(12) + "loo".rjust(12)]
        for env in sorted(datasets):
            ds = datasets[env].delivered()
            split = split_evaluate(ds, spec, model, frac, seed)
            loo = loo_distance_cv(ds, spec, model)
            result["environments"][env] = {"split": split.to_dict(), "loo": loo.to_dict()}
            lines.append(env.ljust(12) + f"{split.averaged_mae:12.3f}{loo.averaged_mae:12.3f}")
        dump_json(result, out / "loo.json")
        text = "\n".join(lines)
        (out / "loo.txt").write_text(text + "\n", encoding="utf-8")
        print(text)
        return 0

    matrix = transfer_study(datasets, None, spec, model, frac, seed)
    dump_json({"features": spec_name, "seed": seed, **matrix.to_dict()}, out / "transfer.json")
    (out / "transfer.csv").write_text(matrix.to_csv(), encoding="utf-8")
    text = matrix.table(f"averaged MAE [m], {spec_name}")
    (out / "transfer.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_protocol_bench(args, cfg: dict) -> int:
    seed = _seed(args, cfg)
    n = int(_pick(args.n, cfg, "n_trials", 1000))
    if n < 1:
        raise CliError(f"number of trials must be >= 1, got {n}")
    train_name = _pick(args.train_preset, cfg, "train_preset", "hallway_agc_off")
    test_name = _pick(args.test_preset, cfg, "test_preset", "hall_agc_off")
    ppc = int(_pick(args.calibration_packets, cfg, "calibration_packets", CALIBRATION_PACKETS_PER_CELL))
    train_env, train_rx = preset(train_name)
    test_env, test_rx = preset(test_name)
    if train_rx.agc_on or test_rx.agc_on:
        raise CliError("protocol-bench needs AGC-off profiles")
    session = calibrate(
        calibration_set(train_env, train_rx, seed, ppc),
        _pick(args.features, cfg, "features", "fppl_gain"),
        _model(args, cfg),
        fine_spec=_pick(args.fine_features, cfg, "fine_features", None),
        fine_model=_model(args, cfg, "fine_model") if (args.fine_model or "fine_model" in cfg) else None,
    )
    result = bench(session, test_env, test_rx, n, seed)
    out = _out_dir(args)
    result.write_csv(out / "protocol_trials.csv")
    summary = {"train_preset": train_name, "test_preset": test_name, "seed": seed,
               "calibration_packets_per_cell": ppc, **result.summary()}
    dump_json(summary, out / "protocol_summary.json")
    text = protocol_text(summary)
    print(text)
    return 0


def protocol_text(summary: dict) -> str:
    better = summary["refined_averaged_mae"] < summary["baseline_averaged_mae"]
    return "\n".join([
        f"trials: {summary['n_trials']} (sounding lost: {summary['n_sounding_lost']}, retries: {summary['retries']})",
        f"max-gain baseline averaged MAE: {summary['baseline_averaged_mae']:.3f} m",
        f"min-gain refined  averaged MAE: {summary['refined_averaged_mae']:.3f} m",
        f"refined {'<' if better else '>='} baseline",
    ])


_RENDERERS = {
    "agc_study.json": agc_table,
    "protocol_summary.json": protocol_text,
}


def cmd_report(args, cfg: dict) -> int:
    out = _out_dir(args)
    sections = []
    for name in ("agc_study.json", "transfer.json", "loo.json", "protocol_summary.json"):
        path = out / name
        if not path.exists():
            continue
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if name in _RENDERERS:
            body = _RENDERERS[name](data)
        else:
            body = (out / name.replace(".json", ".txt")).read_text(encoding="utf-8").rstrip("\n")
        sections.append(f"== {name} ==\n{body}")
    if not sections:
        raise CliError(f"no study results found in {out}")
    text = "\n\n".join(sections)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML or JSON config file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", "-o", default=argparse.SUPPRESS, help="output directory")

    parser = argparse.ArgumentParser(prog="uwbdess", parents=[common],
                                     description="Distance estimation from UWB signal strength.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a dataset and write it as CSV")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", parents=[common], help="validate recorded CSV files and normalize them")
    p.add_argument("csv", nargs="+")
    p.add_argument("--column-map", help="JSON file mapping source headers to canonical names")
    p.set_defaults(func=cmd_ingest)

    def model_flags(p):
        p.add_argument("--features", choices=sorted(FEATURE_PRESETS))
        p.add_argument("--model", help='regressor name or JSON such as {"name": "knn", "k": 5}')
        p.add_argument("--train-fraction", type=float)

    p = sub.add_parser("agc-study", parents=[common], help="AGC on/off at max gain and over all gains")
    p.add_argument("--on-preset", choices=sorted(PRESETS))
    p.add_argument("--off-preset", choices=sorted(PRESETS))
    p.add_argument("--csv", nargs=2, help="recorded AGC-on and AGC-off datasets instead of simulation")
    model_flags(p)
    p.set_defaults(func=cmd_agc_study)

    p = sub.add_parser("transfer", parents=[common], help="train/test across environments")
    p.add_argument("--csv", nargs="+", help="recorded datasets, one environment each")
    p.add_argument("--no-gain", action="store_true", help="drop the gain from the CIR features")
    p.add_argument("--loo", action="store_true", help="leave-one-distance-out instead of the transfer matrix")
    model_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("protocol-bench", parents=[common], help="benchmark two-phase min-gain ranging")
    p.add_argument("-n", "--n", type=int, help="number of trials (default 1000)")
    p.add_argument("--train-preset", choices=sorted(PRESETS))
    p.add_argument("--test-preset", choices=sorted(PRESETS))
    p.add_argument("--calibration-packets", type=int, help="packets per cell of the calibration sweep")
    p.add_argument("--fine-features", choices=sorted(FEATURE_PRESETS))
    p.add_argument("--fine-model")
    model_flags(p)
    p.set_defaults(func=cmd_protocol_bench)

    p = sub.add_parser("report", parents=[common], help="collect study results found in --out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", ".")):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        cfg = _load_config(args.config)
        return args.func(args, cfg)
    except (CliError, UwbDessError, ValueError, KeyError, OSError) as exc:
        context = f" (config: {args.config})" if args.config else ""
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"uwbdess {args.command}: error{context}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
