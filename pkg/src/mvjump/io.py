"""Deterministic file emission for runs and diagnostics.

All floats are written with shortest round-trip repr and all JSON keys are
sorted, so identical inputs produce byte-identical files regardless of
worker count.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path as FsPath

import numpy as np

from . import __version__
from .measure import EmpiricalMeasure
from .mvsolve import Ensemble, MomentReport, Path
from .prm import Control, JumpStream
from .skeleton import SkeletonSolution
from .triple import HypothesisReport

VERSION_STRING = f"mvjump-{__version__}"


def _f(x) -> str:
    return repr(float(x))


def write_csv(path, header, rows) -> None:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_f(v) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def write_json(path, obj) -> None:
    path = FsPath(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def measure_to_csv(mu: EmpiricalMeasure, path) -> None:
    n = mu.dim
    header = ["weight"] + [f"coord_{i}" for i in range(n)]
    rows = [[float(w)] + [float(c) for c in atom]
            for w, atom in zip(mu.weights, mu.atoms)]
    write_csv(path, header, rows)


def jumpstream_to_csv(stream: JumpStream, mark_points: np.ndarray, path) -> None:
    rows = [[float(t), int(m), float(mark_points[m])]
            for t, m in zip(stream.times, stream.marks)]
    write_csv(path, ["t", "mark_index", "z_value"], rows)


def path_to_csv(p: Path, path) -> None:
    n = p.states.shape[1]
    header = ["t"] + [f"coord_{i}" for i in range(n)]
    rows = [[float(t)] + [float(c) for c in s]
            for t, s in zip(p.time_grid, p.states)]
    write_csv(path, header, rows)


def control_to_dict(g: Control) -> dict:
    return {"time_cells": [float(t) for t in g.time_cells],
            "values": [[float(v) for v in row] for row in g.values]}


def ensemble_to_dir(ens: Ensemble, out_dir, config_echo: dict,
                    moments: MomentReport | None = None,
                    formats=("csv", "json")) -> None:
    out = FsPath(out_dir)
    if "csv" in formats:
        n = ens.states.shape[2]
        header = ["replica", "t"] + [f"coord_{i}" for i in range(n)]
        rows = []
        for r in range(ens.replicas):
            for t, s in zip(ens.time_grid, ens.states[r]):
                rows.append([r, float(t)] + [float(c) for c in s])
        write_csv(out / "paths.csv", header, rows)
        for k, mu in enumerate(ens.law_flow.measures):
            measure_to_csv(mu, out / "law_flow" / f"node_{k:05d}.csv")
    if "json" not in formats:
        return
    summary = {
        "version": VERSION_STRING,
        "config": config_echo,
        "eps": float(ens.eps),
        "replicas": int(ens.replicas),
        "seeds": [[int(a), int(b)] for a, b in ens.seeds],
        "residual_history": [list(w) for w in ens.residual_history],
        "terminal_mean": [float(v) for v in ens.states[:, -1, :].mean(axis=0)],
    }
    if moments is not None:
        summary["moments"] = {"sup_H_moment": moments.sup_H_moment,
                              "v_energy": moments.v_energy,
                              "bound_rhs": moments.bound_rhs}
    write_json(out / "summary.json", summary)


def skeleton_to_files(sol: SkeletonSolution, base, config_echo: dict,
                      formats=("csv", "json")) -> None:
    base = FsPath(base)
    if "csv" in formats:
        path_to_csv(sol.path, base.with_suffix(".csv"))
    if "json" not in formats:
        return
    write_json(base.with_suffix(".json"), {
        "version": VERSION_STRING,
        "config": config_echo,
        "q_cost": float(sol.q_cost),
        "control": control_to_dict(sol.control),
    })


def rate_result_to_files(res, base, config_echo: dict,
                         formats=("csv", "json")) -> None:
    base = FsPath(base)
    if "csv" in formats:
        write_csv(base.with_suffix(".csv"), ["eval", "q", "slack"],
                  [[int(i), float(q), float(s)] for i, q, s in res.optimizer_trace])
    if "json" not in formats:
        return
    write_json(base.with_suffix(".json"), {
        "version": VERSION_STRING,
        "config": config_echo,
        "i_value": float(res.i_value) if res.feasible else "inf",
        "feasible": res.feasible,
        "constraint_violation": float(res.constraint_violation),
        "argmin_control": control_to_dict(res.argmin_control),
        "evaluations": len(res.optimizer_trace),
    })


def rare_event_table_to_files(table, base, config_echo: dict,
                              extra: dict | None = None,
                              formats=("csv", "json")) -> None:
    base = FsPath(base)
    if "csv" in formats:
        write_csv(base.with_suffix(".csv"),
                  ["eps", "replicas", "hit_count", "p_hat", "eps_log_p",
                   "wilson_lo", "wilson_hi", "bound_only"],
                  [[float(r.eps), int(r.replicas), int(r.hit_count), float(r.p_hat),
                    float(r.eps_log_p), float(r.wilson_lo), float(r.wilson_hi),
                    int(r.bound_only)] for r in table.rows])
    if "json" not in formats:
        return
    payload = {
        "version": VERSION_STRING,
        "config": config_echo,
        "event": {"kind": table.event.kind,
                  "threshold": float(table.event.threshold),
                  "description": table.event.description},
        "rows": [{"eps": float(r.eps), "replicas": int(r.replicas),
                  "hit_count": int(r.hit_count), "p_hat": float(r.p_hat),
                  "eps_log_p": float(r.eps_log_p),
                  "wilson": [float(r.wilson_lo), float(r.wilson_hi)],
                  "bound_only": bool(r.bound_only)} for r in table.rows],
    }
    if extra:
        payload.update(extra)
    write_json(base.with_suffix(".json"), payload)


def hypothesis_report_to_files(report: HypothesisReport, base,
                               config_echo: dict,
                               formats=("csv", "json")) -> None:
    base = FsPath(base)
    if "csv" in formats:
        write_csv(base.with_suffix(".csv"),
                  ["hypothesis", "samples_tested", "violations", "worst_margin"],
                  [[name, r.samples_tested, r.violations, float(r.worst_margin)]
                   for name, r in sorted(report.records.items())])
    if "json" not in formats:
        return
    write_json(base.with_suffix(".json"), {
        "version": VERSION_STRING,
        "config": config_echo,
        "total_violations": report.total_violations,
        "records": {name: {"samples_tested": r.samples_tested,
                           "violations": r.violations,
                           "worst_margin": float(r.worst_margin)}
                    for name, r in report.records.items()},
    })
