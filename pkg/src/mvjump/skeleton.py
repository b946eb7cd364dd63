"""Deterministic limit, control-driven skeleton, and controlled equations.

The skeleton equation replaces the noise with the mark-integrated control
drift and, deliberately, freezes its measure argument to the law of the
noiseless limit path; the solver takes that path as an explicit input so
the dependency cannot silently become self-referential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .measure import EmpiricalMeasure, MeasureFlow
from .mvsolve import (Path, _run_evolve, check_step_guard, flow_stats_for_grid,
                      uniform_grid, _child_seed)
from .prm import Control, collect_step_zsum, control_cost_Q, max_abs_deviation_given_cost, sample_prm
from .triple import DiscretizedTriple, h_norm_batch


@dataclass(frozen=True)
class SkeletonSolution:
    path: Path
    control: Control
    limit_flow: MeasureFlow
    q_cost: float


def solve_limit(triple: DiscretizedTriple, K_steps: int,
                step_guard: bool = True) -> Path:
    """Noise-free limit equation with the law collapsed to the moving Dirac."""
    cfg = triple.config
    grid = uniform_grid(cfg.T, K_steps)
    check_step_guard(triple, grid[1] - grid[0], step_guard)
    x0 = cfg.initial_state[None, :]
    zeros = np.zeros((1, K_steps))
    dummy = np.zeros((K_steps, cfg.n))
    paths = _run_evolve(triple, x0, grid, _kernels.MODE_SELF_DIRAC,
                        dummy, np.zeros(K_steps), zeros, zeros, zeros, 0.0)
    return Path(time_grid=grid, states=paths[0])


def _limit_flow(triple: DiscretizedTriple, limit_path: Path) -> MeasureFlow:
    ms = tuple(EmpiricalMeasure.dirac(s) for s in limit_path.states)
    return MeasureFlow(time_grid=limit_path.time_grid, measures=ms)


def _limit_stats(triple: DiscretizedTriple, limit_path: Path):
    means = limit_path.states[:-1]
    m2 = h_norm_batch(triple, means) ** 2
    return np.ascontiguousarray(means), np.ascontiguousarray(m2)


def _control_weights(triple: DiscretizedTriple, control: Control,
                     grid: np.ndarray, shifted: bool):
    """Per-step mark aggregates: sum_j z_j (g_j - 1) theta_j (and with g)."""
    ms = triple.config.mark_space
    rows = control.rows_for_grid(grid)
    ctrl = (rows - 1.0) @ (ms.points * ms.weights)
    comp = rows @ (ms.points * ms.weights) if shifted else None
    return ctrl, comp


def _check_alignment(control: Control, grid: np.ndarray):
    if abs(control.horizon - grid[-1]) > 1e-9:
        raise ValueError("control horizon does not match the path grid")
    if not control.aligned_with(grid):
        raise ValueError("control cells must align to path-node boundaries")


def solve_skeleton_batch(triple: DiscretizedTriple, controls, limit_path: Path,
                         step_guard: bool = True) -> np.ndarray:
    """Skeleton trajectories for several controls on the limit path's grid."""
    grid = limit_path.time_grid
    K = grid.size - 1
    check_step_guard(triple, grid[1] - grid[0], step_guard)
    means, m2 = _limit_stats(triple, limit_path)
    ctrl = np.empty((len(controls), K))
    for i, g in enumerate(controls):
        _check_alignment(g, grid)
        ctrl[i], _ = _control_weights(triple, g, grid, shifted=False)
    B = len(controls)
    x0 = np.repeat(triple.config.initial_state[None, :], B, axis=0)
    zeros = np.zeros((B, K))
    return _run_evolve(triple, x0, grid, _kernels.MODE_EXTERNAL,
                       means, m2, ctrl, zeros, zeros, 0.0)


def solve_skeleton(triple: DiscretizedTriple, control: Control,
                   limit_path: Path, step_guard: bool = True) -> SkeletonSolution:
    """Deterministic controlled equation along the frozen limit law.

    A unit control has zero mark drift, so its solution reproduces the
    limit path through an identical recursion.
    """
    states = solve_skeleton_batch(triple, [control], limit_path, step_guard)[0]
    return SkeletonSolution(
        path=Path(time_grid=limit_path.time_grid, states=states),
        control=control,
        limit_flow=_limit_flow(triple, limit_path),
        q_cost=control_cost_Q(control, triple.config),
    )


def solve_controlled_batch(triple: DiscretizedTriple, eps: float,
                           control: Control, law_flow: MeasureFlow,
                           K_steps: int, seed: int, replicas: int,
                           step_guard: bool = True) -> np.ndarray:
    """Replica trajectories of the stochastic controlled equation.

    The drift and jump coefficient read the externally supplied law flow;
    jumps are thinned at the control-tilted intensity and compensated at
    that same intensity, with the explicit (g - 1) drift on top.
    """
    cfg = triple.config
    grid = uniform_grid(cfg.T, K_steps)
    check_step_guard(triple, grid[1] - grid[0], step_guard)
    _check_alignment(control, grid)
    means, m2 = flow_stats_for_grid(triple, law_flow, grid)
    ctrl_row, comp_row = _control_weights(triple, control, grid, shifted=True)
    ctrl = np.repeat(ctrl_row[None, :], replicas, axis=0)
    comp = np.repeat(comp_row[None, :], replicas, axis=0)
    # same stream purpose as the frozen solver, so a unit control with
    # matching cells reproduces the uncontrolled realizations exactly
    zsum = np.zeros((replicas, K_steps))
    for r in range(replicas):
        stream = sample_prm(cfg, control, 1.0 / eps, _child_seed(seed, 1, r))
        zsum[r] = collect_step_zsum(cfg, stream, grid)
    x0 = np.repeat(cfg.initial_state[None, :], replicas, axis=0)
    return _run_evolve(triple, x0, grid, _kernels.MODE_EXTERNAL,
                       means, m2, ctrl, comp, zsum, eps)


def solve_controlled(triple: DiscretizedTriple, eps: float, control: Control,
                     law_flow: MeasureFlow, K_steps: int, seed: int,
                     step_guard: bool = True) -> Path:
    states = solve_controlled_batch(triple, eps, control, law_flow, K_steps,
                                    seed, replicas=1, step_guard=step_guard)
    grid = uniform_grid(triple.config.T, K_steps)
    return Path(time_grid=grid, states=states[0])


def skeleton_energy_bound(triple: DiscretizedTriple, budget: float,
                          limit_path: Path) -> float:
    """A finite bound on sup |X^g|_H^2 + 2 delta int |X^g|_V^alpha.

    Assembled along the standard Gronwall route: the control drift is
    bounded through the largest mark-integrated deviation compatible with
    the entropy budget, the limit-law moments enter through the computed
    limit path, and a factor two absorbs the half-supremum Young step.
    """
    cfg = triple.config
    kdev = max_abs_deviation_given_cost(budget, cfg.mark_space.total_mass, cfg.T)
    l2 = triple.envelope_l2
    m0 = float(np.max(h_norm_batch(triple, limit_path.states) ** 2))
    cp = max(triple.c_mono, 0.0)
    x0n2 = float(h_norm_batch(triple, cfg.initial_state)[0]) ** 2
    return 2.0 * (x0n2 + (cp * cfg.T + l2 * kdev) * (m0 + 1.0)) \
        * math.exp(cp * cfg.T + 4.0 * l2 * kdev) + 1.0
