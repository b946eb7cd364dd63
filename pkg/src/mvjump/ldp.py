"""Rate functional, rare-event Monte Carlo, and small-noise diagnostics.

The rate of a path is estimated from above by minimizing the entropy cost
over piecewise-constant controls whose skeleton solution realizes a target
event; the Monte Carlo side estimates eps * log P(event) with Wilson
intervals so the two can be compared in the small-noise limit.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .mvsolve import Path, solve_mckean_vlasov
from .prm import Control, control_cost_Q, derive_rng
from .skeleton import solve_controlled_batch, solve_limit, solve_skeleton, solve_skeleton_batch
from .triple import DiscretizedTriple, h_norm_batch

WILSON_Z = 1.959963984540054  # two-sided 95%


def _n_workers() -> int:
    env = os.environ.get("MVJUMP_WORKERS", "").strip()
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class RareEventSpec:
    """Concrete measurable event on paths.

    ``terminal_threshold`` tests <X(T), e>_H >= threshold along a direction
    ``e`` (default: the unit-norm constant direction); ``sup_deviation``
    tests sup_t |X(t) - X0(t)|_H >= threshold.
    """

    kind: str
    threshold: float
    direction: Optional[np.ndarray] = None
    description: str = ""

    def __post_init__(self):
        if self.kind not in ("terminal_threshold", "sup_deviation"):
            raise ValueError(f"unsupported event kind {self.kind!r}")
        if self.direction is not None:
            d = np.asarray(self.direction, dtype=float)
            d.setflags(write=False)
            object.__setattr__(self, "direction", d)

    def _dir(self, triple) -> np.ndarray:
        return triple.jump_dir if self.direction is None else self.direction

    def values(self, triple, states: np.ndarray,
               limit_path: Optional[Path] = None) -> np.ndarray:
        """Event statistic per trajectory of a (B, nodes, n) block."""
        if self.kind == "terminal_threshold":
            e = self._dir(triple)
            return states[:, -1, :] @ (triple.h_gram @ e)
        if limit_path is None:
            raise ValueError("sup_deviation events need the limit path")
        B, nodes, n = states.shape
        diff = (states - limit_path.states[None, :, :]).reshape(B * nodes, n)
        return h_norm_batch(triple, diff).reshape(B, nodes).max(axis=1)

    def slack(self, triple, path: Path, limit_path: Optional[Path] = None) -> float:
        """Missed margin: positive means the event did not occur."""
        v = float(self.values(triple, path.states[None, :, :], limit_path)[0])
        return self.threshold - v

    def hits(self, triple, states: np.ndarray,
             limit_path: Optional[Path] = None) -> np.ndarray:
        return self.values(triple, states, limit_path) >= self.threshold


@dataclass(frozen=True)
class RareEventRow:
    eps: float
    replicas: int
    hit_count: int
    p_hat: float
    eps_log_p: float
    wilson_lo: float
    wilson_hi: float
    bound_only: bool


@dataclass(frozen=True)
class RareEventTable:
    event: RareEventSpec
    rows: tuple

    def eps_log_p(self) -> np.ndarray:
        return np.array([r.eps_log_p for r in self.rows])


@dataclass
class RateResult:
    i_value: float
    argmin_control: Control
    constraint_violation: float
    optimizer_trace: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.i_value)


def rate_of_control(triple: DiscretizedTriple, control: Control,
                    limit_path: Path) -> tuple[float, Path]:
    """Entropy cost of a control and its skeleton path (an upper-bound pair)."""
    sol = solve_skeleton(triple, control, limit_path)
    return sol.q_cost, sol.path


def wilson_interval(hits: int, n: int, z: float = WILSON_Z) -> tuple[float, float]:
    if n < 1:
        raise ValueError("need at least one trial")
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def mc_rare_event(triple: DiscretizedTriple, event: RareEventSpec,
                  eps_list: Sequence[float], replicas: int, seed: int,
                  K_steps: int = 256, picard_tol: float = 1e-3) -> RareEventTable:
    """Hit-frequency table of the event under the small-noise ensembles.

    Zero-hit rows are kept but flagged: their eps log p entry uses the
    Wilson upper limit, which keeps the table finite and one-sided.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    if any(e <= 0 for e in eps_list):
        raise ValueError("all eps must be positive")
    limit = solve_limit(triple, K_steps) if event.kind == "sup_deviation" else None

    def one(idx_eps):
        idx, eps = idx_eps
        ens = solve_mckean_vlasov(triple, eps, replicas, tol=picard_tol,
                                  seed=seed * 1000003 + idx, K_steps=K_steps)
        return int(np.sum(event.hits(triple, ens.states, limit)))

    with ThreadPoolExecutor(max_workers=_n_workers()) as ex:
        counts = list(ex.map(one, enumerate(eps_list)))

    rows = []
    for eps, hits in zip(eps_list, counts):
        lo, hi = wilson_interval(hits, replicas)
        p = hits / replicas
        if hits == 0:
            elp = eps * math.log(hi)
            rows.append(RareEventRow(eps, replicas, 0, 0.0, elp, lo, hi, True))
        else:
            rows.append(RareEventRow(eps, replicas, hits, p, eps * math.log(p),
                                     lo, hi, False))
    return RareEventTable(event=event, rows=tuple(rows))


def _feasibility_polish(eval_control, time_cells, dev: np.ndarray,
                        trace, budget_left: int) -> Optional[Control]:
    """Scale the deviation g - 1 onto the feasible side of the constraint.

    Bisects the scale while keeping a strictly feasible upper bracket, so
    the returned control always realizes the event.
    """

    def make(s):
        return Control(time_cells=time_cells, values=np.maximum(1.0 + s * dev, 0.0))

    def slack_of(s):
        q, sl = eval_control(make(s))
        trace.append((q, sl))
        return sl

    s_hi, used = 1.0, 0
    while slack_of(s_hi) > 0.0:
        s_hi *= 2.0
        used += 1
        if s_hi > 64.0 or used >= budget_left:
            return None
    s_lo = 0.0
    best = s_hi
    for _ in range(min(60, max(0, budget_left - used))):
        mid = 0.5 * (s_lo + s_hi)
        if slack_of(mid) <= 0.0:
            best = mid
            s_hi = mid
        else:
            s_lo = mid
    return make(best)


def minimize_rate(triple: DiscretizedTriple, event: RareEventSpec,
                  control_grid: int, budget: int, seed: int,
                  K_steps: int = 4000, n_starts: int = 5,
                  rho_schedule: Sequence[float] = (1e2, 1e4, 1e6)) -> RateResult:
    """Smallest entropy cost found for a control whose skeleton hits the event.

    Exterior penalty Q(g) + rho * slack^2 with escalating rho, derivative-free
    simplex search over log intensities, multiple seeded starts, and a final
    bisection polish to the constraint boundary.  If no feasible control is
    found within the budget the result reports an infinite rate candidate
    instead of raising.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if control_grid < 1:
        raise ValueError("need at least one control cell")
    cfg = triple.config
    marks = cfg.mark_space.size
    limit_path = solve_limit(triple, K_steps)
    cells = np.linspace(0.0, cfg.T, control_grid + 1)

    def control_of(u):
        return Control(time_cells=cells,
                       values=np.exp(u).reshape(control_grid, marks))

    def eval_control(g: Control):
        # raw-state evaluation keeps the inner loop free of per-node objects
        states = solve_skeleton_batch(triple, [g], limit_path)
        q = control_cost_Q(g, cfg)
        sl = float(event.threshold - event.values(triple, states, limit_path)[0])
        return q, sl

    def penalized(u, rho, sink):
        q, sl = eval_control(control_of(u))
        sink.append((q, sl))
        return q + rho * max(sl, 0.0) ** 2, q, sl

    rng = derive_rng(seed, 0x247E)
    starts = [np.zeros(control_grid * marks)]
    for _ in range(n_starts - 1):
        starts.append(0.5 * rng.standard_normal(control_grid * marks))

    per_call = max(40, budget // max(1, n_starts * len(rho_schedule)))
    best_feas = None       # (q, control, slack)
    best_candidate = None  # (penalty at last rho, u)

    def run_start(u0):
        # private evaluation log per start keeps the merged trace deterministic
        local: list = []
        u = u0.copy()
        local_best = None
        for rho in rho_schedule:
            res = minimize(lambda v: penalized(v, rho, local)[0], u,
                           method="Nelder-Mead",
                           options={"maxfev": per_call, "xatol": 1e-10,
                                    "fatol": 1e-12, "disp": False})
            u = res.x
            local_best = (res.fun, u.copy())
        return local_best, local

    with ThreadPoolExecutor(max_workers=_n_workers()) as ex:
        outcomes = list(ex.map(run_start, starts))

    trace: list = []
    for (_, local) in outcomes:
        trace.extend(local)
    for fun, u in (o[0] for o in outcomes):
        _, q, sl = penalized(u, rho_schedule[-1], trace)
        if sl <= 0.0 and (best_feas is None or q < best_feas[0]):
            best_feas = (q, control_of(u), sl)
        if best_candidate is None or fun < best_candidate[0]:
            best_candidate = (fun, u)

    # drive the best candidate onto the constraint boundary from the feasible side
    if best_candidate is not None:
        dev = np.exp(best_candidate[1]).reshape(control_grid, marks) - 1.0
        polished = _feasibility_polish(eval_control, cells, dev, trace,
                                       budget_left=max(10, budget - len(trace)))
        if polished is not None:
            q, sl = eval_control(polished)
            if sl <= 0.0 and (best_feas is None or q < best_feas[0]):
                best_feas = (q, polished, sl)

    indexed = [(i, q, sl) for i, (q, sl) in enumerate(trace)]
    if best_feas is None:
        fallback = Control(time_cells=cells, values=np.ones((control_grid, marks)))
        worst = min((t[1] for t in trace), default=math.inf)
        return RateResult(i_value=math.inf, argmin_control=fallback,
                          constraint_violation=float(worst), optimizer_trace=indexed)
    q, g, sl = best_feas
    return RateResult(i_value=float(q), argmin_control=g,
                      constraint_violation=float(max(sl, 0.0)), optimizer_trace=indexed)


def condition_a_diagnostic(triple: DiscretizedTriple, g: Control,
                           perturbation: np.ndarray, n_list: Sequence[int],
                           limit_path: Optional[Path] = None,
                           K_steps: int = 2000):
    """Skeleton response to vanishing control perturbations g + p / n.

    Returns rows (n, sup_t distance to the unperturbed skeleton), the
    desk-scale form of sequential continuity of the control-to-path map.
    """
    pert = np.asarray(perturbation, dtype=float)
    if pert.shape != g.values.shape:
        raise ValueError("perturbation must match the control value grid")
    if limit_path is None:
        limit_path = solve_limit(triple, K_steps)
    controls = [g]
    for n in n_list:
        vals = g.values + pert / n
        if np.any(vals < 0):
            raise ValueError(f"g + perturbation/{n} leaves the admissible cone")
        controls.append(Control(time_cells=g.time_cells, values=vals))
    states = solve_skeleton_batch(triple, controls, limit_path)
    base = states[0]
    rows = []
    for i, n in enumerate(n_list):
        diff = states[i + 1] - base
        dist = float(h_norm_batch(triple, diff).max())
        rows.append((int(n), dist))
    return rows


def condition_b_diagnostic(triple: DiscretizedTriple, control: Control,
                           eps_list: Sequence[float], replicas: int, seed: int,
                           K_steps: int = 256, picard_tol: float = 1e-3):
    """Mean sup distance between controlled solutions and their skeleton.

    For each eps the uncontrolled law flow is solved first, the controlled
    equation is driven by the tilted jump measure, and the distance to the
    deterministic skeleton of the same control is averaged over replicas.
    Rows are (eps, mean sup distance, standard error).
    """
    limit_path = solve_limit(triple, K_steps)
    y = solve_skeleton(triple, control, limit_path).path

    def one(idx_eps):
        idx, eps = idx_eps
        ens = solve_mckean_vlasov(triple, eps, replicas, tol=picard_tol,
                                  seed=seed * 1000003 + 17 * idx, K_steps=K_steps)
        states = solve_controlled_batch(triple, eps, control, ens.law_flow,
                                        K_steps, seed * 1000003 + 17 * idx + 1,
                                        replicas)
        B, nodes, n = states.shape
        diff = (states - y.states[None, :, :]).reshape(B * nodes, n)
        sup = h_norm_batch(triple, diff).reshape(B, nodes).max(axis=1)
        return float(sup.mean()), float(sup.std(ddof=1) / math.sqrt(B)) if B > 1 else 0.0

    with ThreadPoolExecutor(max_workers=_n_workers()) as ex:
        stats = list(ex.map(one, enumerate(eps_list)))
    return [(float(e), m, s) for e, (m, s) in zip(eps_list, stats)]
