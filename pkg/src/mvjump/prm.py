"""Controlled Poisson random measures on a finite time x mark grid.

Controls are nonnegative piecewise-constant intensity multipliers; their
entropy cost is an exact finite sum.  Sampling uses per-cell thinning
(Poisson count plus uniform times), which is exact for piecewise-constant
intensities and reproducible from a counter-based generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq


def derive_rng(base_seed: int, *stream) -> np.random.Generator:
    """Independent generator for (base_seed, stream...) via Philox key splitting.

    Parallel workers must derive their own generator this way; generators are
    never shared across tasks.
    """
    seq = np.random.SeedSequence((int(base_seed),) + tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(seq))


def entropy_l(r):
    """Pointwise entropy cost r log r - r + 1, with l(0) = 1 by continuity."""
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise ValueError("entropy cost is only defined for r >= 0")
    out = np.ones_like(arr)
    pos = arr > 0
    ap = arr[pos]
    out[pos] = ap * np.log(ap) - ap + 1.0
    if np.isscalar(r) or np.ndim(r) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Control:
    """Piecewise-constant intensity g(t, z) on time cells x mark points."""

    time_cells: np.ndarray        # m+1 increasing breakpoints, 0 .. T
    values: np.ndarray            # (m, k) nonnegative

    def __post_init__(self):
        cells = np.asarray(self.time_cells, dtype=float)
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if cells.ndim != 1 or cells.size < 2:
            raise ValueError("need at least one time cell")
        if np.any(np.diff(cells) <= 0):
            raise ValueError("cell breakpoints must be strictly increasing")
        if abs(cells[0]) > 1e-12:
            raise ValueError("cells must start at 0")
        if vals.shape[0] != cells.size - 1:
            raise ValueError("one value row per time cell required")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("control values must be finite and nonnegative")
        cells.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "time_cells", cells)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, T: float, n_marks: int, value: float = 1.0,
                 n_cells: int = 1) -> "Control":
        cells = np.linspace(0.0, T, n_cells + 1)
        return cls(time_cells=cells, values=np.full((n_cells, n_marks), float(value)))

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_marks(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.time_cells[-1])

    def cell_index(self, t: float) -> int:
        idx = int(np.searchsorted(self.time_cells, t, side="right") - 1)
        return max(0, min(idx, self.n_cells - 1))

    def value_row(self, t: float) -> np.ndarray:
        return self.values[self.cell_index(t)]

    def rows_for_grid(self, grid: np.ndarray) -> np.ndarray:
        """Control row per solver step (evaluated at left endpoints)."""
        idx = np.clip(np.searchsorted(self.time_cells, grid[:-1] + 1e-12,
                                      side="right") - 1, 0, self.n_cells - 1)
        return self.values[idx]

    def aligned_with(self, grid: np.ndarray, atol: float = 1e-9) -> bool:
        """True when every cell breakpoint coincides with a grid node."""
        pos = np.searchsorted(grid, self.time_cells)
        pos = np.clip(pos, 0, grid.size - 1)
        left = np.abs(grid[pos] - self.time_cells) <= atol
        right = np.abs(grid[np.maximum(pos - 1, 0)] - self.time_cells) <= atol
        return bool(np.all(left | right))


@dataclass(frozen=True)
class JumpStream:
    """Time-sorted jump realizations of a controlled random measure."""

    times: np.ndarray
    marks: np.ndarray             # indices into the mark space
    intensity_scale: float        # 1/eps
    control: Optional[Control] = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        m = np.asarray(self.marks, dtype=np.int64)
        if t.shape != m.shape or t.ndim != 1:
            raise ValueError("times and marks must be matching 1-d arrays")
        if self.intensity_scale <= 0:
            raise ValueError("intensity scale must be positive")
        t.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "marks", m)

    def __len__(self) -> int:
        return int(self.times.size)


def control_cost_Q(control: Control, config) -> float:
    """Exact entropy cost of a piecewise-constant control.

    Sum over cells and marks of l(g) * theta_j * dt; exact because both the
    control and the mark measure are piecewise constant / finite.
    """
    theta = config.mark_space.weights
    if theta.size != control.n_marks:
        raise ValueError("control mark dimension does not match the mark space")
    dt = np.diff(control.time_cells)
    return float(np.sum(entropy_l(control.values) * theta[None, :] * dt[:, None]))


def sample_prm(config, control: Control, intensity_scale: float, seed: int) -> JumpStream:
    """Thin a controlled Poisson random measure cell by cell.

    Each (cell, mark) pair receives a Poisson(scale * g * theta * dt) count
    with uniform times; ties are broken by mark index then insertion order.
    Identical inputs give byte-identical streams.
    """
    if intensity_scale <= 0:
        raise ValueError("intensity scale must be positive")
    theta = config.mark_space.weights
    k = theta.size
    rng = derive_rng(seed, 0x9143)
    if k == 0 or control.n_cells == 0:
        return JumpStream(times=np.empty(0), marks=np.empty(0, dtype=np.int64),
                          intensity_scale=intensity_scale, control=control)
    if control.n_marks != k:
        raise ValueError("control mark dimension does not match the mark space")
    dts = np.diff(control.time_cells)
    all_t, all_m = [], []
    for i in range(control.n_cells):
        for j in range(k):
            lam = intensity_scale * control.values[i, j] * theta[j] * dts[i]
            cnt = int(rng.poisson(lam)) if lam > 0 else 0
            if cnt:
                t = rng.uniform(control.time_cells[i], control.time_cells[i + 1], size=cnt)
                all_t.append(t)
                all_m.append(np.full(cnt, j, dtype=np.int64))
    if not all_t:
        return JumpStream(times=np.empty(0), marks=np.empty(0, dtype=np.int64),
                          intensity_scale=intensity_scale, control=control)
    t = np.concatenate(all_t)
    m = np.concatenate(all_m)
    order = np.lexsort((np.arange(t.size), m, t))
    return JumpStream(times=t[order], marks=m[order],
                      intensity_scale=intensity_scale, control=control)


def collect_step_zsum(config, stream: JumpStream, grid: np.ndarray) -> np.ndarray:
    """Sum of mark values z over the events of each solver step.

    Events in (t_k, t_{k+1}] belong to step k, matching the predictable
    (left-state) convention of the Euler stepping.
    """
    K = grid.size - 1
    out = np.zeros(K)
    if len(stream) == 0:
        return out
    idx = np.clip(np.searchsorted(grid, stream.times, side="left") - 1, 0, K - 1)
    np.add.at(out, idx, config.mark_space.points[stream.marks])
    return out


def compensator_drift(triple, t: float, x: np.ndarray, mu,
                      control_value_row: np.ndarray) -> np.ndarray:
    """Mark-integrated drift sum_j f(t, x, mu, z_j) (g_j - 1) theta_j."""
    from .triple import jump_profile_batch
    cfg = triple.config
    row = np.asarray(control_value_row, dtype=float)
    if row.shape != (cfg.mark_space.size,):
        raise ValueError("control row length must equal the mark count")
    prof = jump_profile_batch(triple, np.asarray(x, float),
                              np.sqrt(mu.second_moment(triple)))[0]
    weight = float(np.sum(cfg.mark_space.points * (row - 1.0) * cfg.mark_space.weights))
    return cfg.sigma * prof * weight * triple.jump_dir


def max_abs_deviation_given_cost(budget: float, theta_mass: float, T: float) -> float:
    """Largest integral of |g - 1| d(theta x dt) over controls with cost <= budget.

    The extremum concentrates the budget on a constant level, so it reduces
    to a scalar equation l(g) = budget / m on either side of 1, with the
    mass m = theta(Z) * T.  Used as the reference bound in the deviation
    property tests.
    """
    m = theta_mass * T
    if m <= 0 or budget <= 0:
        return 0.0
    level = budget / m
    # downward branch: l decreases from l(0)=1 to l(1)=0
    if level >= 1.0:
        down = 1.0
    else:
        g_lo = brentq(lambda g: entropy_l(g) - level, 0.0, 1.0, xtol=1e-14)
        down = 1.0 - g_lo
    # upward branch: l increases without bound on [1, inf)
    hi = 2.0
    while entropy_l(hi) < level:
        hi *= 2.0
    g_hi = brentq(lambda g: entropy_l(g) - level, 1.0, hi, xtol=1e-12)
    up = g_hi - 1.0
    return m * max(down, up)
