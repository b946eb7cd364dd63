"""Config-file driven command line front end.

Experiments are described by a sectioned key=value file ([section] headers,
# comments, one key per line) so acceptance runs are reviewable diffs.
Unknown sections or keys, type mismatches and constraint violations are
rejected with the offending line number.  Exit codes: 0 success, 1
validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from . import io as mio
from .ldp import RareEventSpec, mc_rare_event, minimize_rate
from .mvsolve import (BlowupError, PicardConvergenceError, moment_report,
                      particle_system, solve_mckean_vlasov)
from .prm import Control
from .skeleton import solve_controlled, solve_limit, solve_skeleton
from .triple import MODEL_IDS, MarkSpace, ModelConfig, check_hypotheses, make_triple

SUBCOMMANDS = ("simulate", "limit", "skeleton", "controlled", "rate", "ldp",
               "particles", "verify")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


# key -> (type tag, default); None defaults are "absent unless given"
SCHEMA = {
    "model": {
        "model": ("choice:" + ",".join(MODEL_IDS), "linear_sde"),
        "n": ("int", 1),
        "h": ("float", None),
        "T": ("float", 1.0),
        "exponent": ("float", 2.0),
        "kappa": ("float", 0.0),
        "rate": ("float", 1.0),
        "sigma": ("float", 0.5),
        "mark_points": ("float_list", [1.0, -1.0]),
        "mark_weights": ("float_list", [1.0, 1.0]),
        "envelope_l1": ("float", None),
        "envelope_l2": ("float", None),
        "x0": ("float_list", [1.0]),
        "delta": ("float", None),
        "c_mono": ("float", None),
    },
    "discretization": {
        "K_steps": ("int", 256),
        "picard_tol": ("float", 1e-3),
        "picard_window": ("float", None),
        "max_outer": ("int", 25),
        "replicas": ("int", 256),
        "step_guard": ("bool", True),
    },
    "noise": {
        "eps": ("float", 1.0),
        "eps_list": ("float_list", None),
    },
    "control": {
        "cells": ("int", 1),
        "values": ("float_list", None),
        "values_file": ("str", None),
    },
    "ldp": {
        "event": ("choice:terminal_threshold,sup_deviation", "terminal_threshold"),
        "threshold": ("float", 0.3),
        "direction": ("float_list", None),
        "budget": ("int", 400),
    },
    "verify": {
        "samples": ("int", 10000),
    },
    "output": {
        "directory": ("str", "out"),
        "formats": ("str", "csv,json"),
    },
    "seed": {
        "base_seed": ("int", 0),
    },
}

_BOOL_WORDS = {"on": True, "true": True, "yes": True, "1": True,
               "off": False, "false": False, "no": False, "0": False}


def _convert(tag: str, raw: str, line: int):
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "bool":
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError
            return _BOOL_WORDS[raw.lower()]
        if tag == "str":
            return raw
        if tag == "float_list":
            return [float(p) for p in raw.split(",") if p.strip() != ""]
        if tag.startswith("choice:"):
            options = tag.split(":", 1)[1].split(",")
            if raw not in options:
                raise ConfigError(f"value {raw!r} not in {options}", line)
            return raw
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {tag}", line) from None
    raise ConfigError(f"unknown type tag {tag}", line)


@dataclass
class RunConfig:
    """Fully resolved configuration tree with defaults applied."""

    values: dict
    key_lines: dict

    def get(self, section: str, key: str):
        return self.values[section][key]

    def to_dict(self) -> dict:
        return {s: dict(kv) for s, kv in self.values.items()}

    def to_text(self) -> str:
        lines = []
        for section in SCHEMA:
            lines.append(f"[{section}]")
            for key, (tag, _default) in SCHEMA[section].items():
                val = self.values[section][key]
                if val is None:
                    continue
                if tag == "bool":
                    out = "on" if val else "off"
                elif tag == "float_list":
                    out = ", ".join(repr(float(v)) for v in val)
                elif tag == "float":
                    out = repr(float(val))
                else:
                    out = str(val)
                lines.append(f"{key} = {out}")
            lines.append("")
        return "\n".join(lines)

    def model_config(self) -> ModelConfig:
        m = self.values["model"]
        pts = np.asarray(m["mark_points"], dtype=float)
        wts = np.asarray(m["mark_weights"], dtype=float)
        line = self.key_lines.get(("model", "mark_weights"))
        if pts.size != wts.size:
            raise ConfigError("mark_points and mark_weights differ in length", line)
        try:
            marks = MarkSpace(points=pts, weights=wts)
            x0 = m["x0"]
            return ModelConfig(
                model_id=m["model"], n=m["n"], T=m["T"], mark_space=marks,
                h=m["h"], exponent=m["exponent"], kappa=m["kappa"],
                linear_rate=m["rate"], sigma=m["sigma"],
                envelope_l1=m["envelope_l1"], envelope_l2=m["envelope_l2"],
                initial_state=(x0[0] if len(x0) == 1 else np.asarray(x0)),
            )
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}",
                              self.key_lines.get(("model", "model"))) from exc

    def build_triple(self):
        return make_triple(self.model_config(),
                           delta=self.values["model"]["delta"],
                           c_mono=self.values["model"]["c_mono"])

    def control(self, n_marks: int) -> Control:
        c = self.values["control"]
        cells = c["cells"]
        T = self.values["model"]["T"]
        if c["values_file"] is not None:
            vals = np.loadtxt(c["values_file"], delimiter=",", ndmin=2)
        elif c["values"] is not None:
            flat = np.asarray(c["values"], dtype=float)
            if flat.size != cells * n_marks:
                raise ConfigError(
                    f"[control] values needs cells*marks = {cells * n_marks} entries, "
                    f"got {flat.size}", self.key_lines.get(("control", "values")))
            vals = flat.reshape(cells, n_marks)
        else:
            vals = np.ones((cells, n_marks))
        try:
            return Control(time_cells=np.linspace(0.0, T, cells + 1), values=vals)
        except ValueError as exc:
            raise ConfigError(f"[control] {exc}",
                              self.key_lines.get(("control", "cells"))) from exc

    def event(self) -> RareEventSpec:
        l = self.values["ldp"]
        direction = None if l["direction"] is None else np.asarray(l["direction"], float)
        return RareEventSpec(kind=l["event"], threshold=l["threshold"],
                             direction=direction)

    def eps_values(self) -> list:
        noise = self.values["noise"]
        if noise["eps_list"]:
            return [float(e) for e in noise["eps_list"]]
        return [float(noise["eps"])]


def parse_config(text: str) -> RunConfig:
    """Parse and validate the sectioned key=value format."""
    values = {s: {k: v[1] for k, v in kv.items()} for s, kv in SCHEMA.items()}
    key_lines: dict = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("malformed section header", lineno)
            name = line[1:-1].strip()
            if name not in SCHEMA:
                raise ConfigError(f"unknown section [{name}]", lineno)
            section = name
            continue
        if "=" not in line:
            raise ConfigError("expected key = value", lineno)
        if section is None:
            raise ConfigError("key outside any section", lineno)
        key, _, rawval = line.partition("=")
        key = key.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        tag = SCHEMA[section][key][0]
        values[section][key] = _convert(tag, rawval, lineno)
        key_lines[(section, key)] = lineno
    cfg = RunConfig(values=values, key_lines=key_lines)
    cfg.model_config()  # surfaces constraint violations with locations
    if values["discretization"]["K_steps"] < 1:
        raise ConfigError("[discretization] K_steps must be >= 1",
                          key_lines.get(("discretization", "K_steps")))
    if values["discretization"]["replicas"] < 1:
        raise ConfigError("[discretization] replicas must be >= 1",
                          key_lines.get(("discretization", "replicas")))
    if any(e <= 0 for e in cfg.eps_values()):
        raise ConfigError("[noise] eps values must be positive",
                          key_lines.get(("noise", "eps")))
    return cfg


def _echo(cfg: RunConfig) -> dict:
    return cfg.to_dict()


def _formats(cfg: RunConfig) -> set:
    return {f.strip() for f in cfg.get("output", "formats").split(",") if f.strip()}


def _dispatch(command: str, cfg: RunConfig, out_dir: FsPath, quiet: bool) -> int:
    triple = cfg.build_triple()
    disc = cfg.values["discretization"]
    seed = cfg.get("seed", "base_seed")
    eps = cfg.eps_values()[0]
    echo = _echo(cfg)
    fmts = _formats(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    def say(msg):
        if not quiet:
            print(msg)

    if command == "simulate":
        ens = solve_mckean_vlasov(triple, eps, disc["replicas"], tol=disc["picard_tol"],
                                  seed=seed, K_steps=disc["K_steps"],
                                  max_outer=disc["max_outer"],
                                  window=disc["picard_window"],
                                  step_guard=disc["step_guard"])
        rep = moment_report(triple, ens)
        mio.ensemble_to_dir(ens, out_dir, echo, rep, formats=fmts)
        tm = ens.states[:, -1, :].mean(axis=0)
        say(f"simulate: eps={eps:g} replicas={ens.replicas} "
            f"terminal_mean={np.array2string(tm, precision=6)} "
            f"sup_moment={rep.sup_H_moment:.6g} -> {out_dir}")
        return 0

    if command == "limit":
        path = solve_limit(triple, disc["K_steps"], step_guard=disc["step_guard"])
        if "csv" in fmts:
            mio.path_to_csv(path, out_dir / "limit.csv")
        if "json" in fmts:
            mio.write_json(out_dir / "limit.json",
                           {"version": mio.VERSION_STRING, "config": echo,
                            "terminal": [float(v) for v in path.terminal]})
        say(f"limit: K={disc['K_steps']} terminal="
            f"{np.array2string(path.terminal, precision=6)} -> {out_dir}")
        return 0

    if command == "skeleton":
        control = cfg.control(triple.config.mark_space.size)
        limit = solve_limit(triple, disc["K_steps"], step_guard=disc["step_guard"])
        sol = solve_skeleton(triple, control, limit, step_guard=disc["step_guard"])
        mio.skeleton_to_files(sol, out_dir / "skeleton", echo, formats=fmts)
        say(f"skeleton: Q={sol.q_cost:.6g} terminal="
            f"{np.array2string(sol.path.terminal, precision=6)} -> {out_dir}")
        return 0

    if command == "controlled":
        control = cfg.control(triple.config.mark_space.size)
        ens = solve_mckean_vlasov(triple, eps, disc["replicas"], tol=disc["picard_tol"],
                                  seed=seed, K_steps=disc["K_steps"],
                                  max_outer=disc["max_outer"],
                                  window=disc["picard_window"],
                                  step_guard=disc["step_guard"])
        path = solve_controlled(triple, eps, control, ens.law_flow,
                                disc["K_steps"], seed, step_guard=disc["step_guard"])
        if "csv" in fmts:
            mio.path_to_csv(path, out_dir / "controlled.csv")
        if "json" in fmts:
            mio.write_json(out_dir / "controlled.json",
                           {"version": mio.VERSION_STRING, "config": echo,
                            "eps": eps, "terminal": [float(v) for v in path.terminal]})
        say(f"controlled: eps={eps:g} terminal="
            f"{np.array2string(path.terminal, precision=6)} -> {out_dir}")
        return 0

    if command == "rate":
        event = cfg.event()
        res = minimize_rate(triple, event, cfg.get("control", "cells"),
                            cfg.get("ldp", "budget"), seed,
                            K_steps=disc["K_steps"])
        mio.rate_result_to_files(res, out_dir / "rate", echo, formats=fmts)
        if not res.feasible:
            print(f"rate: no feasible control found (best slack "
                  f"{res.constraint_violation:.3g}) -> {out_dir}", file=sys.stderr)
            return 2
        say(f"rate: I_grid={res.i_value:.6g} slack={res.constraint_violation:.3g} "
            f"evals={len(res.optimizer_trace)} -> {out_dir}")
        return 0

    if command == "ldp":
        event = cfg.event()
        table = mc_rare_event(triple, event, cfg.eps_values(), disc["replicas"],
                              seed, K_steps=disc["K_steps"],
                              picard_tol=disc["picard_tol"])
        extra = {}
        budget = cfg.get("ldp", "budget")
        if budget > 0:
            res = minimize_rate(triple, event, cfg.get("control", "cells"),
                                budget, seed, K_steps=disc["K_steps"])
            extra = {"i_grid": (float(res.i_value) if res.feasible else "inf"),
                     "minus_i_grid": (-float(res.i_value) if res.feasible else "-inf")}
        mio.rare_event_table_to_files(table, out_dir / "ldp", echo, extra,
                                      formats=fmts)
        say(f"ldp: eps_log_p={[round(r.eps_log_p, 6) for r in table.rows]} "
            + (f"minus_I_grid={extra.get('minus_i_grid')}" if extra else "")
            + f" -> {out_dir}")
        return 0

    if command == "particles":
        ens = particle_system(triple, disc["replicas"], eps, seed=seed,
                              K_steps=disc["K_steps"], step_guard=disc["step_guard"])
        mio.ensemble_to_dir(ens, out_dir, echo, moment_report(triple, ens),
                            formats=fmts)
        tm = ens.states[:, -1, :].mean(axis=0)
        say(f"particles: N={ens.replicas} terminal_mean="
            f"{np.array2string(tm, precision=6)} -> {out_dir}")
        return 0

    if command == "verify":
        report = check_hypotheses(triple, cfg.get("verify", "samples"), seed)
        mio.hypothesis_report_to_files(report, out_dir / "verify", echo,
                                       formats=fmts)
        say(f"verify: {report.total_violations} violations over "
            f"{cfg.get('verify', 'samples')} samples -> {out_dir}")
        return 0

    raise ConfigError(f"unknown subcommand {command!r}")


def run(argv) -> int:
    parser = argparse.ArgumentParser(
        prog="mvjump",
        description="mean-field jump equation solvers and rare-event diagnostics")
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="path to the run config file")
    parser.add_argument("--seed", type=int, default=None, help="override base seed")
    parser.add_argument("--out", default=None, help="override output directory")
    parser.add_argument("--quiet", action="store_true")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    try:
        text = FsPath(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 1

    try:
        cfg = parse_config(text)
        if args.seed is not None:
            cfg.values["seed"]["base_seed"] = int(args.seed)
        out_dir = FsPath(args.out if args.out else cfg.get("output", "directory"))
        return _dispatch(args.command, cfg, out_dir, args.quiet)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BlowupError, PicardConvergenceError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
