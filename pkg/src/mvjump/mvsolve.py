"""Time stepping for the jump equation and the law-flow fixed point.

The small-noise equation is integrated by tamed explicit Euler with exact
per-cell jump sampling.  The law of the solution is produced by iterating
the frozen-law map on empirical measure flows window by window, with common
random numbers across iterations so the contraction of the deterministic
map is visible under the Monte Carlo noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .measure import EmpiricalMeasure, MeasureFlow, _quantile_coupling_w2sq, wasserstein2
from .prm import Control, collect_step_zsum, derive_rng, max_abs_deviation_given_cost, sample_prm
from .triple import DiscretizedTriple, drift_A, h_norm_batch, jump_f, norm, v_norm_batch

BLOWUP_THRESHOLD = 1e12
PICARD_SAFETY = 0.9


class BlowupError(RuntimeError):
    """State escaped the admissible region during stepping."""

    def __init__(self, step_index: Optional[int], replica: Optional[int] = None):
        self.step_index = step_index
        self.replica = replica
        where = f" at step {step_index}" if step_index is not None else ""
        who = f" (replica {replica})" if replica is not None else ""
        super().__init__(f"state blow-up{where}{who}")


class PicardConvergenceError(RuntimeError):
    """Fixed-point iteration exhausted max_outer without meeting tol."""

    def __init__(self, window: int, residual_history):
        self.window = window
        self.residual_history = residual_history
        last = residual_history[-1][-1] if residual_history and residual_history[-1] else float("nan")
        super().__init__(f"law-flow iteration did not converge in window {window} "
                         f"(last residual {last:.3e})")


@dataclass(frozen=True)
class Path:
    """Trajectory on a uniform grid; one state row per node."""

    time_grid: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.time_grid, dtype=float)
        st = np.atleast_2d(np.asarray(self.states, dtype=float))
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("need at least two grid nodes")
        dt = np.diff(grid)
        if np.any(np.abs(dt - dt[0]) > 1e-9 * max(dt[0], 1e-300)):
            raise ValueError("time grid must be uniform")
        if st.shape[0] != grid.size:
            raise ValueError("one state per grid node required")
        if not np.all(np.isfinite(st)):
            raise ValueError("path states must be finite")
        grid.setflags(write=False)
        st.setflags(write=False)
        object.__setattr__(self, "time_grid", grid)
        object.__setattr__(self, "states", st)

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0])

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class Ensemble:
    """Replica trajectories plus their empirical law flow."""

    time_grid: np.ndarray
    states: np.ndarray            # (replicas, nodes, n)
    law_flow: MeasureFlow
    eps: float
    seeds: np.ndarray             # (replicas, 2): base seed and stream index
    residual_history: tuple = ()

    @property
    def replicas(self) -> int:
        return self.states.shape[0]

    def path(self, i: int) -> Path:
        return Path(time_grid=self.time_grid, states=self.states[i])

    def paths(self):
        return [self.path(i) for i in range(self.replicas)]


@dataclass(frozen=True)
class MomentReport:
    sup_H_moment: float
    v_energy: float
    bound_rhs: float


def uniform_grid(T: float, K: int) -> np.ndarray:
    if K < 1:
        raise ValueError("need at least one step")
    return np.linspace(0.0, T, K + 1)


def check_step_guard(triple: DiscretizedTriple, dt: float, enabled: bool = True) -> None:
    """Stability guard for the superlinear PDE drifts."""
    if not enabled or not triple.config.is_pde:
        return
    cap = triple.config.h ** triple.alpha
    if triple.c_mono != 0.0:
        cap = min(cap, 0.1 / abs(triple.c_mono))
    if dt > cap * (1.0 + 1e-9):
        raise ValueError(f"step {dt:.3e} exceeds the stability guard {cap:.3e} "
                         "for this PDE model (disable via step_guard=off to override)")


def law_flow_from_states(triple: DiscretizedTriple, grid: np.ndarray,
                         states: np.ndarray) -> MeasureFlow:
    """Empirical measure per node from a (replicas, nodes, n) state array."""
    ms = tuple(EmpiricalMeasure.uniform(states[:, k, :]) for k in range(grid.size))
    return MeasureFlow(time_grid=grid, measures=ms)


def _stats_from_states(triple: DiscretizedTriple, states: np.ndarray):
    """Per-node (mean, second moment) of the empirical replica law."""
    means = states.mean(axis=0)
    M, nodes, n = states.shape
    flat = states.reshape(M * nodes, n)
    m2 = (h_norm_batch(triple, flat) ** 2).reshape(M, nodes).mean(axis=0)
    return means, m2


def flow_stats_for_grid(triple: DiscretizedTriple, law_flow: MeasureFlow,
                        grid: np.ndarray):
    """Left-continuous node statistics of ``law_flow`` on the solver steps."""
    means, m2 = law_flow.stats(triple)
    idx = np.clip(np.searchsorted(law_flow.time_grid, grid[:-1] + 1e-12,
                                  side="right") - 1, 0, means.shape[0] - 1)
    return np.ascontiguousarray(means[idx]), np.ascontiguousarray(m2[idx])


def _run_evolve(triple, x0_batch, grid, mode, mean_flow, m2_flow,
                ctrl_weight, comp_weight, jump_zsum, eps):
    """Kernel wrapper; converts the blow-up sentinel into an exception."""
    dt = float(grid[1] - grid[0])
    args = _kernels.kernel_args(triple)
    paths, bad_k, bad_b = _kernels.evolve(
        np.ascontiguousarray(x0_batch, dtype=float), dt,
        args["code"], args["a"], args["kappa"], args["expo"], args["h"],
        args["stiff"], args["stiff_inv"], args["gram"], args["sigma"],
        args["u_dir"], args["state_dep"], mode,
        np.ascontiguousarray(mean_flow, dtype=float),
        np.ascontiguousarray(m2_flow, dtype=float),
        np.ascontiguousarray(ctrl_weight, dtype=float),
        np.ascontiguousarray(comp_weight, dtype=float),
        np.ascontiguousarray(jump_zsum, dtype=float),
        float(eps), BLOWUP_THRESHOLD)
    if bad_k >= 0:
        raise BlowupError(step_index=int(bad_k), replica=int(bad_b))
    return paths


def _plain_comp_weight(triple, B: int, K: int) -> np.ndarray:
    """Compensator mark aggregate sum_j z_j theta_j for unit control."""
    ms = triple.config.mark_space
    w = float(np.sum(ms.points * ms.weights))
    return np.full((B, K), w)


def _sample_zsums(triple, grid, eps, base_seed, replicas, purpose) -> np.ndarray:
    """Per-step event z-sums for ``replicas`` independent unit-rate streams."""
    cfg = triple.config
    K = grid.size - 1
    unit = Control.constant(cfg.T, cfg.mark_space.size, 1.0)
    out = np.zeros((replicas, K))
    for r in range(replicas):
        stream = sample_prm(cfg, unit, 1.0 / eps, _child_seed(base_seed, purpose, r))
        out[r] = collect_step_zsum(cfg, stream, grid)
    return out


def _child_seed(base_seed: int, purpose: int, index: int) -> int:
    # stable scalar sub-seed; streams themselves split again via derive_rng
    return int((base_seed * 1_000_003 + purpose) * 1_000_003 + index) % (2**63)


# ---------------------------------------------------------------------------
# public operations


def euler_step_frozen(triple: DiscretizedTriple, t: float, x: np.ndarray,
                      mu_t: EmpiricalMeasure, jump_increments: Sequence[int],
                      eps: float, dt: float) -> np.ndarray:
    """One tamed Euler step of the frozen-law equation (reference form).

    ``jump_increments`` lists mark indices realized in (t, t+dt]; the jump
    sum is taken at the pre-jump state and the compensator of the scaled
    compensated measure is subtracted exactly.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    cfg = triple.config
    A = drift_A(triple, t, x, mu_t)
    tame = 1.0 / (1.0 + dt * norm(triple, "V_star", A))
    pts, wts = cfg.mark_space.points, cfg.mark_space.weights
    jump = np.zeros_like(x)
    for j in jump_increments:
        jump = jump + jump_f(triple, t, x, mu_t, pts[int(j)])
    comp = np.zeros_like(x)
    for j in range(pts.size):
        comp = comp + jump_f(triple, t, x, mu_t, pts[j]) * wts[j]
    x_new = x + dt * A * tame + eps * jump - dt * comp
    if not np.all(np.isfinite(x_new)) or float(h_norm_batch(triple, x_new)[0]) > BLOWUP_THRESHOLD:
        raise BlowupError(step_index=None)
    return x_new


def solve_frozen(triple: DiscretizedTriple, law_flow: MeasureFlow, eps: float,
                 K_steps: int, seed: int, step_guard: bool = True) -> Path:
    """Integrate the equation with the law frozen to ``law_flow``."""
    grid = uniform_grid(triple.config.T, K_steps)
    check_step_guard(triple, grid[1] - grid[0], step_guard)
    means, m2 = flow_stats_for_grid(triple, law_flow, grid)
    zsum = _sample_zsums(triple, grid, eps, seed, 1, purpose=1)
    comp = _plain_comp_weight(triple, 1, K_steps)
    x0 = triple.config.initial_state[None, :]
    paths = _run_evolve(triple, x0, grid, _kernels.MODE_EXTERNAL, means, m2,
                        np.zeros((1, K_steps)), comp, zsum, eps)
    return Path(time_grid=grid, states=paths[0])


def default_picard_window(triple: DiscretizedTriple) -> float:
    """Window below the contraction threshold 1/(2c), with a safety factor."""
    return min(triple.config.T,
               PICARD_SAFETY / (2.0 * max(triple.c_mono, 1e-6)))


def _window_slices(K: int, steps_per_window: int):
    out = []
    k = 0
    while k < K:
        out.append((k, min(k + steps_per_window, K)))
        k += steps_per_window
    return out


def _node_w2(triple, xs: np.ndarray, ys: np.ndarray) -> float:
    """W2 between two uniform clouds given as (M, n) state blocks."""
    if triple.n == 1:
        scale = math.sqrt(float(triple.h_gram[0, 0]))
        w = np.full(xs.shape[0], 1.0 / xs.shape[0])
        return scale * math.sqrt(_quantile_coupling_w2sq(xs[:, 0], w, ys[:, 0], w))
    return wasserstein2(triple, EmpiricalMeasure.uniform(xs), EmpiricalMeasure.uniform(ys))


def _picard_states(triple: DiscretizedTriple, eps: float, replicas: int,
                   tol: float, max_outer: int, window: Optional[float],
                   seed: int, K_steps: int, step_guard: bool = True):
    """Window-by-window fixed-point iteration; returns replica states and residuals."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if replicas < 1:
        raise ValueError("need at least one replica")
    cfg = triple.config
    grid = uniform_grid(cfg.T, K_steps)
    dt = float(grid[1] - grid[0])
    check_step_guard(triple, dt, step_guard)
    t0 = default_picard_window(triple) if window is None else float(window)
    if triple.c_mono > 0 and t0 >= 1.0 / (2.0 * triple.c_mono):
        raise ValueError("window must satisfy t0 < 1/(2 c) for the contraction")
    steps_per_window = max(1, int(t0 / dt + 1e-9))

    zsum = _sample_zsums(triple, grid, eps, seed, replicas, purpose=1)
    comp = _plain_comp_weight(triple, replicas, K_steps)
    states = np.empty((replicas, K_steps + 1, cfg.n))
    states[:, 0, :] = cfg.initial_state

    history = []
    for w, (k0, k1) in enumerate(_window_slices(K_steps, steps_per_window)):
        kw = k1 - k0
        sub_grid = grid[k0:k1 + 1]
        x0 = states[:, k0, :]
        # initial guess: law frozen at the window-opening empirical measure
        guess = np.repeat(x0[:, None, :], kw + 1, axis=1)
        res_hist = []
        converged = False
        for _ in range(max_outer):
            means, m2 = _stats_from_states(triple, guess)
            new = _run_evolve(triple, x0, sub_grid, _kernels.MODE_EXTERNAL,
                              means[:-1], m2[:-1], np.zeros((replicas, kw)),
                              comp[:, k0:k1], zsum[:, k0:k1], eps)
            residual = max(_node_w2(triple, new[:, k, :], guess[:, k, :])
                           for k in range(kw + 1))
            res_hist.append(float(residual))
            guess = new
            if residual < tol:
                converged = True
                break
        history.append(res_hist)
        if not converged:
            raise PicardConvergenceError(window=w, residual_history=history)
        states[:, k0:k1 + 1, :] = guess
    return states, history, grid


def picard_law_flow(triple: DiscretizedTriple, eps: float, replicas: int,
                    tol: float, max_outer: int = 25,
                    window: Optional[float] = None, seed: int = 0,
                    K_steps: int = 256, step_guard: bool = True):
    """Fixed-point construction of the law flow.

    Iterates "solve the frozen equation, re-freeze to the new empirical
    law" over windows short enough for the contraction, reusing the jump
    streams across iterations.  Returns the converged flow and the residual
    history (one list of sup-node W2 residuals per window).
    """
    states, history, grid = _picard_states(
        triple, eps, replicas, tol, max_outer, window, seed, K_steps, step_guard)
    return law_flow_from_states(triple, grid, states), history


def solve_mckean_vlasov(triple: DiscretizedTriple, eps: float, replicas: int,
                        tol: float = 1e-3, seed: int = 0, K_steps: int = 256,
                        max_outer: int = 25, window: Optional[float] = None,
                        step_guard: bool = True) -> Ensemble:
    """Solve the distribution-dependent equation to a replica ensemble.

    One extra frozen solve is run under the converged law so the returned
    ensemble's law flow is exactly the empirical flow of its own paths.
    """
    states, history, grid = _picard_states(
        triple, eps, replicas, tol, max_outer, window, seed, K_steps, step_guard)
    means, m2 = _stats_from_states(triple, states)
    zsum = _sample_zsums(triple, grid, eps, seed, replicas, purpose=1)
    comp = _plain_comp_weight(triple, replicas, K_steps)
    x0 = np.repeat(triple.config.initial_state[None, :], replicas, axis=0)
    final = _run_evolve(triple, x0, grid, _kernels.MODE_EXTERNAL,
                        means[:-1], m2[:-1], np.zeros((replicas, K_steps)),
                        comp, zsum, eps)
    seeds = np.array([[seed, r] for r in range(replicas)], dtype=np.int64)
    return Ensemble(time_grid=grid, states=final,
                    law_flow=law_flow_from_states(triple, grid, final),
                    eps=eps, seeds=seeds, residual_history=tuple(map(tuple, history)))


def particle_system(triple: DiscretizedTriple, N_particles: int, eps: float,
                    seed: int = 0, K_steps: int = 256,
                    step_guard: bool = True) -> Ensemble:
    """Interacting copies with the law replaced by the running empirical measure.

    Serves as an independent oracle for the law flow: drifts and jump
    profiles read the live particle cloud instead of a pre-solved flow.
    """
    if N_particles < 2:
        raise ValueError("need at least two particles")
    cfg = triple.config
    grid = uniform_grid(cfg.T, K_steps)
    check_step_guard(triple, grid[1] - grid[0], step_guard)
    zsum = _sample_zsums(triple, grid, eps, seed, N_particles, purpose=2)
    comp = _plain_comp_weight(triple, N_particles, K_steps)
    x0 = np.repeat(cfg.initial_state[None, :], N_particles, axis=0)
    dummy = np.zeros((K_steps, cfg.n))
    paths = _run_evolve(triple, x0, grid, _kernels.MODE_BATCH_EMPIRICAL,
                        dummy, np.zeros(K_steps), np.zeros((N_particles, K_steps)),
                        comp, zsum, eps)
    seeds = np.array([[seed, r] for r in range(N_particles)], dtype=np.int64)
    return Ensemble(time_grid=grid, states=paths,
                    law_flow=law_flow_from_states(triple, grid, paths),
                    eps=eps, seeds=seeds)


def moment_bound_constant(triple: DiscretizedTriple, control_budget: float = 0.0) -> float:
    """Gronwall constant for the a-priori energy bound, assembled conservatively.

    Three contributions per unit time: the coercivity constant acting on
    (sup + 1), the jump quadratic variation 3 l2^2 theta(Z) (g + 1), and the
    maximal-martingale term absorbing a quarter of the supremum (hence the
    outer factor 2).  A positive control budget inflates the jump integrals
    by the worst intensity compatible with that entropy cost.
    """
    cfg = triple.config
    mass = cfg.mark_space.total_mass
    l2sq = triple.envelope_l2 ** 2
    inflow = mass * cfg.T
    if control_budget > 0:
        inflow += max_abs_deviation_given_cost(control_budget, mass, cfg.T)
    per_time = l2sq * (inflow + mass * cfg.T) / cfg.T
    return 2.0 * (2.0 * max(triple.c_mono, 0.0) + 27.0 * per_time + 1.0)


def moment_report(triple: DiscretizedTriple, ensemble: Ensemble,
                  control_budget: float = 0.0) -> MomentReport:
    """Monte Carlo energy estimates next to the assembled analytic bound."""
    if ensemble.replicas < 1:
        raise ValueError("empty ensemble")
    states = ensemble.states
    M, nodes, n = states.shape
    dt = float(ensemble.time_grid[1] - ensemble.time_grid[0])
    flat = states.reshape(M * nodes, n)
    h2 = (h_norm_batch(triple, flat) ** 2).reshape(M, nodes)
    sup_est = float(h2.max(axis=1).mean())
    v = v_norm_batch(triple, flat).reshape(M, nodes)
    v_energy = float((v[:, :-1] ** triple.alpha).sum(axis=1).mean() * dt)
    C = moment_bound_constant(triple, control_budget)
    x0n = float(h_norm_batch(triple, triple.config.initial_state)[0])
    bound = C * math.exp(C * triple.config.T) * (x0n**2 + 1.0)
    return MomentReport(sup_H_moment=sup_est, v_energy=v_energy, bound_rhs=bound)
