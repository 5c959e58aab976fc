"""Command-line front end.

Five subcommands: ``calibrate`` (per-alternative thresholds and benchmark
delays), ``design`` (feasibility regions and operating points), ``evaluate``
(all metrics at explicit thresholds), ``misid-sweep`` (misidentification
versus change point and versus the delay allowance), and ``demo-paths``
(per-step statistic traces and partial-sum curves).

The run configuration is a single YAML file; every default is made explicit
by ``--print-config``.  Reports are a machine-readable JSON document plus
tidy CSV tables, deterministic byte for byte given the same configuration
and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import design as dg
from . import models
from . import montecarlo as mc_mod
from . import statistics as st
from .procedures import GENERALIZED, MIN_CUSUM, ProcedureSpec, VARIANTS

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_UNRELIABLE = 4

SCHEMA_VERSION = 1

_DEFAULT_NU_GRID = [0, 10, 20, 30, 40, 50]


class ConfigError(ValueError):
    """Configuration validation failure; the message names the field."""


# ---------------------------------------------------------------------------
# Configuration loading and normalization
# ---------------------------------------------------------------------------


def _require(section: dict, field: str, where: str):
    if field not in section or section[field] is None:
        raise ConfigError(f"{where}.{field}: required field is missing")
    return section[field]


def _as_number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _model_num_alternatives(model_cfg: dict) -> int:
    ctor = model_cfg["constructor"]
    if ctor == "gaussian_mean_shift":
        return len(model_cfg["thetas"])
    if ctor == "multichannel_single":
        return model_cfg["channels"]
    return 3  # multichannel_simultaneous


def _normalize_model(cfg: dict) -> dict:
    section = _require(cfg, "model", "config")
    if not isinstance(section, dict):
        raise ConfigError("model: expected a mapping")
    ctor = _require(section, "constructor", "model")
    out = {"constructor": ctor}
    if ctor == "gaussian_mean_shift":
        thetas = _require(section, "thetas", "model")
        if not isinstance(thetas, list) or not thetas:
            raise ConfigError("model.thetas: expected a non-empty list of numbers")
        out["thetas"] = [_as_number(t, "model.thetas") for t in thetas]
    elif ctor in ("multichannel_single", "multichannel_simultaneous"):
        channels = section.get("channels", 2)
        out["channels"] = _as_int(channels, "model.channels")
        if ctor == "multichannel_simultaneous" and out["channels"] != 2:
            raise ConfigError("model.channels: simultaneous faults are supported for 2 channels only")
        out["pre_mean"] = _as_number(section.get("pre_mean", 0.0), "model.pre_mean")
        out["post_mean"] = _as_number(section.get("post_mean", 1.0), "model.post_mean")
    else:
        raise ConfigError(f"model.constructor: unknown constructor {ctor!r}")
    return out


def build_model(model_cfg: dict) -> models.ChangeModel:
    ctor = model_cfg["constructor"]
    if ctor == "gaussian_mean_shift":
        return models.gaussian_mean_shift(model_cfg["thetas"])
    d = model_cfg["channels"]
    pre = [models.gaussian_density(model_cfg["pre_mean"]) for _ in range(d)]
    post = [models.gaussian_density(model_cfg["post_mean"]) for _ in range(d)]
    return models.multichannel(d, pre, post, simultaneous=ctor == "multichannel_simultaneous")


def _normalize_procedures(cfg: dict) -> list[dict]:
    raw = cfg.get("procedures")
    if raw is None and "procedure" in cfg:
        raw = [cfg["procedure"]]
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ConfigError("procedures: expected a list of procedure mappings")
    out = []
    for idx, entry in enumerate(raw):
        where = f"procedures[{idx}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: expected a mapping")
        variant = _require(entry, "variant", where)
        if variant not in VARIANTS:
            raise ConfigError(f"{where}.variant: unknown variant {variant!r} (choose from {', '.join(VARIANTS)})")
        item = {"variant": variant, "m": None, "b": None, "h": None}
        if entry.get("m") is not None:
            item["m"] = _as_int(entry["m"], f"{where}.m")
            if item["m"] < 1:
                raise ConfigError(f"{where}.m: window must be a positive integer")
        if variant == GENERALIZED and item["m"] is None:
            raise ConfigError(f"{where}.m: the window-limited generalized variant needs a window")
        for key in ("b", "h"):
            if entry.get(key) is not None:
                item[key] = _as_number(entry[key], f"{where}.{key}")
                if item[key] < 0:
                    raise ConfigError(f"{where}.{key}: thresholds must be non-negative")
        out.append(item)
    return out


def _normalize_grid_axis(section: dict, name: str, defaults: dict, cap: float) -> dict:
    axis = section.get(name, {}) or {}
    if not isinstance(axis, dict):
        raise ConfigError(f"grids.{name}: expected a mapping with start/step/stop")
    start = _as_number(axis.get("start", defaults["start"]), f"grids.{name}.start")
    step = _as_number(axis.get("step", defaults["step"]), f"grids.{name}.step")
    stop = axis.get("stop")
    stop = cap if stop is None else _as_number(stop, f"grids.{name}.stop")
    if step <= 0:
        raise ConfigError(f"grids.{name}.step: must be positive")
    if stop < start:
        raise ConfigError(f"grids.{name}.stop: must not precede start")
    return {"start": start, "step": step, "stop": stop}


def _normalize(cfg: dict) -> dict:
    """Fill every default so the echoed configuration is fully explicit.
    Normalization is idempotent: re-parsing an echo reproduces it."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected a mapping at the top level")
    out = {}
    out["model"] = _normalize_model(cfg)
    out["procedures"] = _normalize_procedures(cfg)

    mc_section = cfg.get("mc", {}) or {}
    if "base_seed" not in mc_section or mc_section["base_seed"] is None:
        raise ConfigError("mc.base_seed: a seed is mandatory (no wall-clock seeding)")
    out["mc"] = {
        "num_paths": _as_int(mc_section.get("num_paths", 50_000), "mc.num_paths"),
        "horizon": _as_int(mc_section.get("horizon", 100_000), "mc.horizon"),
        "base_seed": _as_int(mc_section["base_seed"], "mc.base_seed"),
        "workers": _as_int(mc_section.get("workers", 1), "mc.workers"),
        "arl_paths": (
            None
            if mc_section.get("arl_paths") is None
            else _as_int(mc_section["arl_paths"], "mc.arl_paths")
        ),
    }
    if out["mc"]["base_seed"] < 0:
        raise ConfigError("mc.base_seed: must be non-negative")

    design_section = cfg.get("design", {}) or {}
    alpha = _as_number(design_section.get("alpha", 0.01), "design.alpha")
    if not 0.0 < alpha < 1.0:
        raise ConfigError("design.alpha: must lie strictly between 0 and 1")
    r_list = design_section.get("r", [2.0])
    if not isinstance(r_list, list):
        r_list = [r_list]
    r_values = [_as_number(r, "design.r") for r in r_list]
    for r in r_values:
        if r <= 1.0:
            raise ConfigError("design.r: every delay allowance factor must exceed 1")
    out["design"] = {
        "alpha": alpha,
        "r": r_values,
        "mirror_symmetric": bool(design_section.get("mirror_symmetric", False)),
        "conservative": bool(design_section.get("conservative", False)),
        "selection": design_section.get("selection", "largest_h"),
        "max_candidates": _as_int(design_section.get("max_candidates", 16), "design.max_candidates"),
    }
    if out["design"]["selection"] not in ("largest_h", "misid_optimal"):
        raise ConfigError("design.selection: choose 'largest_h' or 'misid_optimal'")

    K = _model_num_alternatives(out["model"])
    cap = abs(math.log(alpha)) + math.log(K) + 2.0
    cap = math.ceil(cap * 20) / 20
    grids = cfg.get("grids", {}) or {}
    nu = grids.get("nu", _DEFAULT_NU_GRID)
    if not isinstance(nu, list) or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in nu):
        raise ConfigError("grids.nu: expected a list of non-negative integers")
    out["grids"] = {
        "b": _normalize_grid_axis(grids, "b", {"start": 0.0, "step": 0.01}, cap),
        "h": _normalize_grid_axis(grids, "h", {"start": 0.05, "step": 0.05}, cap),
        "nu": list(nu),
    }

    demo = cfg.get("demo", {}) or {}
    out["demo"] = {
        "nu": _as_int(demo.get("nu", 50), "demo.nu"),
        "true_alternative": _as_int(demo.get("true_alternative", min(2, K)), "demo.true_alternative"),
        "steps": _as_int(demo.get("steps", 100), "demo.steps"),
        "fixed_time": _as_int(demo.get("fixed_time", 75), "demo.fixed_time"),
        "windows": [_as_int(w, "demo.windows") for w in demo.get("windows", [15])],
    }
    if any(w < 1 for w in out["demo"]["windows"]) or out["demo"]["steps"] < 1:
        raise ConfigError("demo: steps and window sizes must be positive integers")

    output = cfg.get("output", {}) or {}
    out["output"] = {"dir": str(output.get("dir", "out"))}
    return out


def load_config(path: str | Path, seed_override=None, out_override=None) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at the top level")
    if seed_override is not None:
        raw.setdefault("mc", {})
        raw["mc"]["base_seed"] = seed_override
    if out_override is not None:
        raw.setdefault("output", {})
        raw["output"]["dir"] = str(out_override)
    return _normalize(raw)


def _mc_config(cfg: dict) -> mc_mod.MCConfig:
    m = cfg["mc"]
    return mc_mod.MCConfig(
        base_seed=m["base_seed"],
        num_paths=m["num_paths"],
        horizon=m["horizon"],
        workers=m["workers"],
        arl_paths=m["arl_paths"],
    )


def _threshold_grid(cfg: dict) -> dg.ThresholdGrid:
    g = cfg["grids"]
    return dg.ThresholdGrid(
        b_start=g["b"]["start"], b_step=g["b"]["step"], b_stop=g["b"]["stop"],
        h_start=g["h"]["start"], h_step=g["h"]["step"], h_stop=g["h"]["stop"],
    )


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _echo_config(cfg: dict) -> dict:
    """Config echo for reports: everything that identifies the run.

    The worker count is an execution hint with no effect on any result (per
    the per-path random stream contract), so it is omitted; a re-parsed echo
    therefore reproduces the run bit for bit at any parallelism level.
    """
    echo = json.loads(json.dumps(cfg))
    echo["mc"].pop("workers", None)
    return echo


def _write_json(out_dir: Path, command: str, cfg: dict, results: dict) -> Path:
    report = {
        "schema_version": SCHEMA_VERSION,
        "toolkit": {"name": "changediag", "version": __version__},
        "command": command,
        "config": _echo_config(cfg),
        "results": results,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{command.replace('-', '_')}_report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _estimate_dict(mean: float, se: float, censored: int, n: int) -> dict:
    return {"mean": mean, "se": se, "censored": censored, "n": n}


def _calibration_dict(summary: dg.CalibrationSummary, arl_paths: int, num_paths: int) -> dict:
    return {
        "alpha": summary.alpha,
        "max_delay": summary.max_delay,
        "max_delay_se": summary.max_delay_se,
        "alternatives": [
            {
                "alternative": r.alternative,
                "threshold": r.threshold,
                "arl": _estimate_dict(r.arl, r.arl_se, 0, arl_paths),
                "delay": _estimate_dict(r.delay, r.delay_se, r.delay_censored, num_paths),
                "mirrored_from": r.mirrored_from,
            }
            for r in summary.results
        ],
    }


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_calibrate(cfg: dict) -> int:
    model = build_model(cfg["model"])
    mc = _mc_config(cfg)
    grid = _threshold_grid(cfg)
    summary = dg.calibrate_all(
        model, cfg["design"]["alpha"], grid.b_values, mc,
        mirror_symmetric=cfg["design"]["mirror_symmetric"],
    )
    out_dir = Path(cfg["output"]["dir"])
    results = _calibration_dict(summary, mc.effective_arl_paths, mc.num_paths)
    _write_json(out_dir, "calibrate", cfg, results)
    _write_csv(
        out_dir / "calibration.csv",
        ["alternative", "threshold", "arl", "arl_se", "delay", "delay_se", "delay_censored", "mirrored_from"],
        [
            (r.alternative, r.threshold, r.arl, r.arl_se, r.delay, r.delay_se, r.delay_censored,
             "" if r.mirrored_from is None else r.mirrored_from)
            for r in summary.results
        ],
    )
    for r in summary.results:
        note = f" (mirrored from {r.mirrored_from})" if r.mirrored_from else ""
        print(
            f"alternative {r.alternative}: threshold {r.threshold:.2f}, "
            f"delay {r.delay:.4f} ({r.delay_se:.4f}){note}"
        )
    print(f"worst benchmark delay: {summary.max_delay:.4f}")
    return EXIT_OK


def _region_rows(region: dg.RegionMask):
    K = len(region.delay)
    for bi, b in enumerate(region.b_values):
        for hi, h in enumerate(region.h_values):
            row = [float(b), float(h), int(region.false_alarm[bi, hi])]
            row += [int(region.delay[i][bi, hi]) for i in range(K)]
            row.append(int(region.feasible[bi, hi]))
            yield row


def _design_one(cfg, model, mc, grid, summary, proc, r, tables=None):
    scheme = dg.design_procedure(
        proc["variant"], model, cfg["design"]["alpha"], r, grid, mc,
        window=proc["m"], calibration=summary,
        conservative=cfg["design"]["conservative"],
        mirror_symmetric=cfg["design"]["mirror_symmetric"],
        tables=tables,
    )
    if scheme.feasible and cfg["design"]["selection"] == "misid_optimal":
        (b, h), _rows = dg.misid_optimal_thresholds(
            proc["variant"], model, scheme.region, cfg["grids"]["nu"], mc,
            window=proc["m"], max_candidates=cfg["design"]["max_candidates"],
            mirror_symmetric=cfg["design"]["mirror_symmetric"],
        )
        scheme = dg.SchemeDesign(
            scheme.variant, scheme.window, scheme.alpha, scheme.r, (b, h),
            scheme.region, scheme.calibration,
        )
    return scheme


def cmd_design(cfg: dict) -> int:
    model = build_model(cfg["model"])
    mc = _mc_config(cfg)
    grid = _threshold_grid(cfg)
    if not cfg["procedures"]:
        raise ConfigError("procedures: the design command needs at least one procedure")
    summary = dg.calibrate_all(
        model, cfg["design"]["alpha"], grid.b_values, mc,
        mirror_symmetric=cfg["design"]["mirror_symmetric"],
    )
    out_dir = Path(cfg["output"]["dir"])
    designs = []
    any_infeasible = False
    for proc in cfg["procedures"]:
        tables = dg.estimate_region_tables(
            proc["variant"], model, grid, mc, proc["m"], cfg["design"]["mirror_symmetric"]
        )
        for r in cfg["design"]["r"]:
            scheme = _design_one(cfg, model, mc, grid, summary, proc, r, tables)
            tag = proc["variant"]
            if proc["m"] is not None:
                tag += f"_m{proc['m']}"
            tag += f"_r{r:g}"
            _write_csv(
                out_dir / f"regions_{tag}.csv",
                ["b", "h", "in_false_alarm"]
                + [f"in_delay_{i + 1}" for i in range(model.num_alternatives)]
                + ["feasible"],
                _region_rows(scheme.region),
            )
            entry = {
                "variant": proc["variant"],
                "m": proc["m"],
                "r": r,
                "selected": None if scheme.selected is None else {"b": scheme.selected[0], "h": scheme.selected[1]},
                "feasible_cells": int(scheme.region.feasible.sum()),
                "false_alarm_cells": int(scheme.region.false_alarm.sum()),
                "delay_cells": [int(m.sum()) for m in scheme.region.delay],
                "delay_cap": scheme.region.delay_cap,
                "delay_is_proxy": scheme.region.delay_is_proxy,
                "region_csv": f"regions_{tag}.csv",
            }
            designs.append(entry)
            if scheme.selected is None:
                any_infeasible = True
                print(f"{proc['variant']} r={r:g}: INFEASIBLE (empty feasible region)")
            else:
                b, h = scheme.selected
                print(f"{proc['variant']} r={r:g}: selected b={b:.2f} h={h:.2f}")
    results = {
        "calibration": _calibration_dict(summary, mc.effective_arl_paths, mc.num_paths),
        "designs": designs,
    }
    _write_json(out_dir, "design", cfg, results)
    return EXIT_INFEASIBLE if any_infeasible else EXIT_OK


def cmd_evaluate(cfg: dict) -> int:
    model = build_model(cfg["model"])
    mc = _mc_config(cfg)
    if not cfg["procedures"]:
        raise ConfigError("procedures: the evaluate command needs at least one procedure")
    for idx, proc in enumerate(cfg["procedures"]):
        if proc["b"] is None:
            raise ConfigError(f"procedures[{idx}].b: evaluate needs explicit thresholds")
        if proc["h"] is None and proc["variant"] != MIN_CUSUM:
            raise ConfigError(f"procedures[{idx}].h: evaluate needs explicit thresholds")
    out_dir = Path(cfg["output"]["dir"])
    unreliable = False
    procedures = []
    misid_rows = []
    for proc in cfg["procedures"]:
        b = proc["b"]
        h = proc["h"] if proc["h"] is not None else 0.0
        spec = ProcedureSpec(proc["variant"], b, h, model.num_alternatives, proc["m"])
        arl_table = mc_mod.estimate_arl_false_alarm(
            proc["variant"], model, np.array([b]), np.array([h]), mc, proc["m"]
        )
        arl_mean, arl_se, arl_cens = arl_table.at(b, h)
        unreliable = unreliable or bool(arl_table.unreliable[0, 0])
        delays = []
        for i in range(1, model.num_alternatives + 1):
            table = mc_mod.estimate_delay_at_zero(
                proc["variant"], model, i, np.array([b]), np.array([h]), mc, proc["m"]
            )
            m_, s_, c_ = table.at(b, h)
            unreliable = unreliable or bool(table.unreliable[0, 0])
            delays.append(
                {"alternative": i, "metric": table.metric, **_estimate_dict(m_, s_, c_, table.num_paths)}
            )
        misid = []
        for nu in cfg["grids"]["nu"]:
            per_j = []
            for j in range(1, model.num_alternatives + 1):
                est = mc_mod.estimate_misid(spec, model, nu, j, mc)
                per_j.append(
                    {
                        "j": j,
                        "probability": est.probability,
                        "se": est.se,
                        "retained": est.retained,
                        "censored": est.censored,
                        "false_alarms": est.false_alarms,
                        "low_power": est.low_power,
                    }
                )
                misid_rows.append(
                    (proc["variant"], b, h, nu, j, est.probability, est.se, est.retained, int(est.low_power))
                )
            worst = max(per_j, key=lambda e: -1.0 if math.isnan(e["probability"]) else e["probability"])
            misid.append({"nu": nu, "per_alternative": per_j, "worst": worst})
        procedures.append(
            {
                "variant": proc["variant"],
                "m": proc["m"],
                "b": b,
                "h": h,
                "arl": _estimate_dict(arl_mean, arl_se, arl_cens, arl_table.num_paths),
                "delays": delays,
                "misid": misid,
            }
        )
    _write_csv(
        out_dir / "evaluate_misid.csv",
        ["variant", "b", "h", "nu", "j", "probability", "se", "retained", "low_power"],
        misid_rows,
    )
    _write_json(out_dir, "evaluate", cfg, {"procedures": procedures})
    for proc in procedures:
        print(
            f"{proc['variant']} (b={proc['b']:g}, h={proc['h']:g}): "
            f"arl {proc['arl']['mean']:.2f} ({proc['arl']['se']:.2f})"
            + (", UNRELIABLE" if unreliable else "")
        )
    return EXIT_UNRELIABLE if unreliable else EXIT_OK


def cmd_misid_sweep(cfg: dict) -> int:
    model = build_model(cfg["model"])
    mc = _mc_config(cfg)
    grid = _threshold_grid(cfg)
    if not cfg["procedures"]:
        raise ConfigError("procedures: the misid-sweep command needs at least one procedure")
    out_dir = Path(cfg["output"]["dir"])
    need_design = any(p["b"] is None for p in cfg["procedures"])
    summary = None
    if need_design:
        summary = dg.calibrate_all(
            model, cfg["design"]["alpha"], grid.b_values, mc,
            mirror_symmetric=cfg["design"]["mirror_symmetric"],
        )
    mirror_pair = model.symmetric_pair if cfg["design"]["mirror_symmetric"] else None
    sweeps = []
    rows = []
    worst_rows = []
    any_infeasible = False
    for proc in cfg["procedures"]:
        r_values = cfg["design"]["r"] if proc["b"] is None else [None]
        tables = None
        if proc["b"] is None and len(r_values) > 1:
            tables = dg.estimate_region_tables(
                proc["variant"], model, grid, mc, proc["m"], cfg["design"]["mirror_symmetric"]
            )
        for r in r_values:
            if proc["b"] is None:
                scheme = _design_one(cfg, model, mc, grid, summary, proc, r, tables)
                if not scheme.feasible:
                    any_infeasible = True
                    sweeps.append(
                        {"variant": proc["variant"], "m": proc["m"], "r": r, "selected": None, "by_nu": []}
                    )
                    print(f"{proc['variant']} r={r:g}: INFEASIBLE")
                    continue
                b, h = scheme.selected
            else:
                b, h = proc["b"], proc["h"] if proc["h"] is not None else 0.0
            spec = ProcedureSpec(proc["variant"], b, h, model.num_alternatives, proc["m"])
            by_nu = []
            overall = None
            for nu in cfg["grids"]["nu"]:
                worst = None
                for j in range(1, model.num_alternatives + 1):
                    if mirror_pair is not None and j == mirror_pair[1]:
                        continue
                    est = mc_mod.estimate_misid(spec, model, nu, j, mc)
                    rows.append(
                        (proc["variant"], "" if proc["m"] is None else proc["m"],
                         "" if r is None else r, b, h, nu, j,
                         est.probability, est.se, est.retained, int(est.low_power))
                    )
                    if est.retained and (worst is None or est.probability > worst["probability"]):
                        worst = {"j": j, "probability": est.probability, "se": est.se,
                                 "retained": est.retained, "low_power": est.low_power}
                by_nu.append({"nu": nu, "worst": worst})
                if worst is not None and (overall is None or worst["probability"] > overall["probability"]):
                    overall = {"nu": nu, **worst}
            sweeps.append(
                {
                    "variant": proc["variant"],
                    "m": proc["m"],
                    "r": r,
                    "selected": {"b": b, "h": h},
                    "by_nu": by_nu,
                    "worst_overall": overall,
                }
            )
            if overall is None:
                print(
                    f"{proc['variant']}{'' if r is None else f' r={r:g}'}: "
                    "no retained paths at any change point (all censored or false alarms)"
                )
                continue
            worst_rows.append(
                (proc["variant"], "" if proc["m"] is None else proc["m"],
                 "" if r is None else r, b, h,
                 overall["nu"], overall["j"], overall["probability"], overall["se"])
            )
            print(
                f"{proc['variant']}{'' if r is None else f' r={r:g}'}: "
                f"worst misid {overall['probability']:.3f} ({overall['se']:.3f}) at nu={overall['nu']}"
            )
    _write_csv(
        out_dir / "misid_sweep.csv",
        ["variant", "m", "r", "b", "h", "nu", "j", "probability", "se", "retained", "low_power"],
        rows,
    )
    _write_csv(
        out_dir / "misid_worst.csv",
        ["variant", "m", "r", "b", "h", "worst_nu", "worst_j", "probability", "se"],
        worst_rows,
    )
    _write_json(out_dir, "misid-sweep", cfg, {"sweeps": sweeps})
    return EXIT_INFEASIBLE if any_infeasible else EXIT_OK


def cmd_demo_paths(cfg: dict) -> int:
    if cfg["model"]["constructor"] != "gaussian_mean_shift":
        raise ConfigError("model.constructor: demo-paths expects the gaussian_mean_shift model")
    model = build_model(cfg["model"])
    K = model.num_alternatives
    if K < 2:
        raise ConfigError("model.thetas: demo-paths needs at least two alternatives")
    demo = cfg["demo"]
    nu, j, steps, fixed_time = demo["nu"], demo["true_alternative"], demo["steps"], demo["fixed_time"]
    if not 1 <= j <= K:
        raise ConfigError(f"demo.true_alternative: outside 1..{K}")
    if fixed_time > steps:
        raise ConfigError("demo.fixed_time: must not exceed demo.steps")
    rng = mc_mod.rng_stream(cfg["mc"]["base_seed"], 0, (1, j, nu))

    xs = np.empty(steps)
    llr = np.empty((steps, K))
    for n in range(steps):
        density = model.f if n + 1 <= nu else model.alternatives[j - 1]
        x = density.sampler(rng, 1)
        xs[n] = x[0, 0]
        llr[n] = models.llr_matrix(model, x)[0]

    cus = st.CusumVector.zeros(K)
    clock = st.ResetClock.zeros(K)
    pair = st.PairMatrix.zeros(st.MATRIX, K)
    adaptive = st.PairMatrix.zeros(st.ADAPTIVE, K)
    windows = list(demo["windows"])
    gens = {w: st.GeneralizedBuffer.empty(K, w) for w in windows}
    gens["full"] = st.GeneralizedBuffer.empty(K, st.UNBOUNDED)

    header = ["time", "x"]
    header += [f"cusum_{i + 1}" for i in range(K)]
    header += [f"pair_{i + 1}{jj + 1}" for i in range(K) for jj in range(K) if i != jj]
    header += [f"adaptive_{i + 1}{jj + 1}" for i in range(K) for jj in range(K) if i != jj]
    header += [f"reset_{i + 1}" for i in range(K)]
    for w in windows:
        header += [f"gen_m{w}_{i + 1}" for i in range(K)]
    header += [f"gen_full_{i + 1}" for i in range(K)]

    trace_rows = []
    for n in range(steps):
        st.update_cusum(cus, llr[n])
        st.update_reset_clock(clock, cus)
        p = st.pair_llrs_from_vector(llr[n])
        st.update_pair_matrix(pair, cus, p)
        st.update_pair_matrix(adaptive, cus, p)
        gen_vals = {}
        for key, buf in gens.items():
            _, gen_vals[key] = st.update_generalized(buf, llr[n])
        row = [n + 1, xs[n]]
        row += [cus.values[i] for i in range(K)]
        row += [pair.values[i, jj] for i in range(K) for jj in range(K) if i != jj]
        row += [adaptive.values[i, jj] for i in range(K) for jj in range(K) if i != jj]
        row += [int(clock.last_zero[i]) for i in range(K)]
        for w in windows:
            row += list(gen_vals[w])
        row += list(gen_vals["full"])
        trace_rows.append(row)

    out_dir = Path(cfg["output"]["dir"])
    _write_csv(out_dir / "trace.csv", header, trace_rows)

    # Partial sums over u in k+1..fixed_time as a function of the lower limit
    # k, for the first alternative against the pre-change density and against
    # its first rival.
    cum = np.vstack([np.zeros(K), np.cumsum(llr[:fixed_time], axis=0)])
    ks = np.arange(0, fixed_time + 1)
    own = cum[fixed_time, 0] - cum[ks, 0]
    rival = j - 1 if j != 1 else 1  # alternative 1 against the true one (0-based)
    pair_sum = own - (cum[fixed_time, rival] - cum[ks, rival])
    _write_csv(
        out_dir / "partial_sums.csv",
        ["k", "own_sum_1", f"pair_sum_1{rival + 1}"],
        [(int(k), float(o), float(p)) for k, o, p in zip(ks, own, pair_sum)],
    )
    results = {
        "nu": nu,
        "true_alternative": j,
        "steps": steps,
        "fixed_time": fixed_time,
        "trace_csv": "trace.csv",
        "partial_sums_csv": "partial_sums.csv",
    }
    _write_json(out_dir, "demo-paths", cfg, results)
    print(f"wrote {steps}-step trace and partial sums at time {fixed_time} (change at {nu})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "calibrate": cmd_calibrate,
    "design": cmd_design,
    "evaluate": cmd_evaluate,
    "misid-sweep": cmd_misid_sweep,
    "demo-paths": cmd_demo_paths,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="changediag",
        description="Sequential change diagnosis: calibration, design and Monte Carlo evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run-config YAML file")
        p.add_argument("--seed", type=int, default=None, help="override mc.base_seed")
        p.add_argument("--out", default=None, help="override output.dir")
        p.add_argument(
            "--print-config",
            action="store_true",
            help="print the fully resolved configuration and exit",
        )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed, out_override=args.out)
        if args.print_config:
            print(yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False), end="")
            return EXIT_OK
        return _COMMANDS[args.command](cfg)
    except (ConfigError, models.ModelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except dg.GridExhaustedError as exc:
        print(f"design error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
