import numpy as np
import pytest

import mvjump as mj
from mvjump.skeleton import skeleton_energy_bound, solve_skeleton_batch
from mvjump.mvsolve import uniform_grid
from conftest import linear_config, porous_config, single_mark


def unit_control(T=1.0, marks=1, value=1.0, cells=1):
    return mj.Control.constant(T, marks, value, n_cells=cells)


class TestSolveLimit:
    def test_exponential(self):
        tr = mj.make_triple(linear_config(kappa=0.0, sigma=0.0))
        p = mj.solve_limit(tr, 10_000)
        assert abs(p.terminal[0] - np.exp(-1.0)) < 1e-3

    def test_mean_field_shifts_rate(self):
        # mean of the moving Dirac is the state itself: X' = -(a - kappa) X
        tr = mj.make_triple(linear_config(kappa=0.4, sigma=0.0))
        p = mj.solve_limit(tr, 10_000)
        assert abs(p.terminal[0] - np.exp(-0.6)) < 1e-3

    def test_porous_zero_equilibrium(self):
        tr = mj.make_triple(porous_config(initial_state=0.0))
        p = mj.solve_limit(tr, 300)
        assert np.all(p.states == 0.0)


class TestSolveSkeleton:
    def test_unit_control_reproduces_limit(self):
        tr = mj.make_triple(linear_config(kappa=0.3, sigma=0.5))
        lim = mj.solve_limit(tr, 500)
        sol = mj.solve_skeleton(tr, unit_control(marks=2), lim)
        assert np.max(np.abs(sol.path.states - lim.states)) < 1e-12
        assert sol.q_cost == 0.0

    def test_affine_ode_oracle(self):
        # a=1, kappa=0, sigma=1, one mark, g = 2, x0 = 0: X' = -X + 1
        tr = mj.make_triple(linear_config(
            kappa=0.0, sigma=1.0, mark_space=single_mark(), initial_state=0.0))
        lim = mj.solve_limit(tr, 10_000)
        sol = mj.solve_skeleton(tr, unit_control(value=2.0), lim)
        assert abs(sol.path.terminal[0] - (1.0 - np.exp(-1.0))) < 1e-3

    def test_control_drift_superposition(self):
        # doubling g - 1 doubles the terminal deviation for the linear drift
        tr = mj.make_triple(linear_config(
            kappa=0.0, sigma=1.0, mark_space=single_mark(), initial_state=0.0))
        lim = mj.solve_limit(tr, 4000)
        s = 0.002
        d1 = mj.solve_skeleton(tr, unit_control(value=1.0 + s), lim).path.terminal[0]
        d2 = mj.solve_skeleton(tr, unit_control(value=1.0 + 2 * s), lim).path.terminal[0]
        assert abs(d2 - 2.0 * d1) <= 1e-6 * abs(d2)

    def test_misaligned_control_rejected(self):
        tr = mj.make_triple(linear_config())
        lim = mj.solve_limit(tr, 10)
        bad = mj.Control(time_cells=np.array([0.0, 0.33, 1.0]),
                         values=np.ones((2, 2)))
        with pytest.raises(ValueError):
            mj.solve_skeleton(tr, bad, lim)

    def test_batch_matches_single(self):
        tr = mj.make_triple(linear_config(sigma=0.6))
        lim = mj.solve_limit(tr, 100)
        controls = [unit_control(marks=2, value=v, cells=2) for v in (0.5, 1.0, 2.5)]
        batch = solve_skeleton_batch(tr, controls, lim)
        for i, g in enumerate(controls):
            single = mj.solve_skeleton(tr, g, lim)
            assert np.array_equal(batch[i], single.path.states)

    def test_grid_refinement_first_order(self):
        tr = mj.make_triple(linear_config(
            kappa=0.2, sigma=1.0, mark_space=single_mark(), initial_state=0.5))
        gmk = lambda: unit_control(value=2.0)
        ref = mj.solve_skeleton(tr, gmk(), mj.solve_limit(tr, 16_000)).path.terminal[0]
        errs = []
        for K in (250, 500, 1000):
            term = mj.solve_skeleton(tr, gmk(), mj.solve_limit(tr, K)).path.terminal[0]
            errs.append(abs(term - ref))
        orders = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 0.9


class TestSolveControlled:
    def test_unit_control_reproduces_frozen(self):
        tr = mj.make_triple(linear_config(sigma=0.5))
        grid = uniform_grid(1.0, 80)
        flow = mj.MeasureFlow.constant(grid, mj.EmpiricalMeasure.dirac([1.0]))
        frozen = mj.solve_frozen(tr, flow, eps=0.5, K_steps=80, seed=17)
        controlled = mj.solve_controlled(tr, 0.5, unit_control(marks=2), flow,
                                         K_steps=80, seed=17)
        assert frozen.states.tobytes() == controlled.states.tobytes()

    def test_noiseless_collapse_matches_skeleton(self):
        tr = mj.make_triple(linear_config(kappa=0.3, sigma=0.0))
        lim = mj.solve_limit(tr, 120)
        flow = mj.MeasureFlow(time_grid=lim.time_grid,
                              measures=tuple(mj.EmpiricalMeasure.dirac(s)
                                             for s in lim.states))
        g = unit_control(marks=2, value=3.0)
        ske = mj.solve_skeleton(tr, g, lim)
        ctl = mj.solve_controlled(tr, 0.7, g, flow, K_steps=120, seed=18)
        assert np.max(np.abs(ctl.states - ske.path.states)) < 1e-12


class TestConcentration:
    def test_controlled_paths_concentrate_on_tilted_drift(self):
        # as eps shrinks, controlled realizations close in on the deterministic
        # recursion driven by the same tilted drift and the frozen law flow
        from mvjump import _kernels
        from mvjump.mvsolve import _run_evolve, flow_stats_for_grid
        from mvjump.skeleton import _control_weights, solve_controlled_batch

        tr = mj.make_triple(linear_config(
            kappa=0.1, sigma=1.0, mark_space=single_mark(), initial_state=0.0))
        K, R = 256, 64
        grid = uniform_grid(1.0, K)
        phi = unit_control(value=2.0)
        sup_means = []
        for i, eps in enumerate((0.1, 0.03, 0.01)):
            ens = mj.solve_mckean_vlasov(tr, eps, replicas=R, tol=1e-3,
                                         seed=60 + i, K_steps=K)
            means, m2 = flow_stats_for_grid(tr, ens.law_flow, grid)
            ctrl, _ = _control_weights(tr, phi, grid, shifted=False)
            ref = _run_evolve(tr, tr.config.initial_state[None, :], grid,
                              _kernels.MODE_EXTERNAL, means, m2,
                              ctrl[None, :], np.zeros((1, K)), np.zeros((1, K)),
                              0.0)[0]
            states = solve_controlled_batch(tr, eps, phi, ens.law_flow, K,
                                            seed=70 + i, replicas=R)
            sup = np.abs(states[:, :, 0] - ref[None, :, 0]).max(axis=1)
            sup_means.append(float(sup.mean()))
        assert sup_means[0] > sup_means[1] > sup_means[2], sup_means


class TestEnergyBound:
    def test_random_controls_below_bound(self):
        tr = mj.make_triple(linear_config(sigma=0.5))
        lim = mj.solve_limit(tr, 200)
        rng = np.random.default_rng(20)
        budget = 5.0
        bound = skeleton_energy_bound(tr, budget, lim)
        for _ in range(10):
            vals = rng.uniform(0.0, 2.5, size=(4, 2))
            g = mj.Control(time_cells=np.linspace(0, 1, 5), values=vals)
            if mj.control_cost_Q(g, tr.config) > budget:
                continue
            sol = mj.solve_skeleton(tr, g, lim)
            from mvjump.triple import h_norm_batch, v_norm_batch
            sup2 = float((h_norm_batch(tr, sol.path.states) ** 2).max())
            dt = sol.path.dt
            ven = float((v_norm_batch(tr, sol.path.states[:-1]) ** tr.alpha).sum() * dt)
            assert sup2 + 2 * tr.delta * ven <= bound
