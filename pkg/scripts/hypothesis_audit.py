#!/usr/bin/env python3
"""Audit the structural conditions for every bundled model family.

Prints one block per model with the sampled worst margins; a negative
control (coercivity constant deliberately too strong) is run last to show
what a violating report looks like.
"""

import argparse

import numpy as np

import mvjump as mj


def bundled_configs():
    sym = mj.MarkSpace(points=[1.0, -1.0], weights=[1.0, 1.0])
    half = mj.MarkSpace(points=[1.0, -1.0], weights=[0.5, 0.5])
    bump = np.sin(np.pi * np.arange(1, 8) / 8.0)
    return {
        "linear_sde": mj.ModelConfig(model_id="linear_sde", n=1, T=1.0,
                                     mark_space=sym, kappa=0.1, sigma=0.5),
        "mv_sde": mj.ModelConfig(model_id="mv_sde", n=2, T=1.0, mark_space=half,
                                 kappa=0.3, sigma=0.4, initial_state=[1.0, 0.0]),
        "p_laplace": mj.ModelConfig(model_id="p_laplace", n=7, h=0.125, T=0.5,
                                    mark_space=half, exponent=3.0, kappa=0.2,
                                    sigma=0.3, initial_state=bump),
        "porous_media": mj.ModelConfig(model_id="porous_media", n=7, h=0.125,
                                       T=0.5, mark_space=half, exponent=3.0,
                                       sigma=0.3, initial_state=bump),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    for name, cfg in bundled_configs().items():
        tr = mj.make_triple(cfg)
        report = mj.check_hypotheses(tr, args.samples, args.seed)
        print(f"== {name} (alpha={tr.alpha:g}, delta={tr.delta:g}, c={tr.c_mono:g})")
        print(report)
        print()

    print("== negative control: linear_sde with delta forced to 50")
    broken = mj.make_triple(bundled_configs()["linear_sde"], delta=50.0)
    print(mj.check_hypotheses(broken, min(args.samples, 2000), args.seed))


if __name__ == "__main__":
    main()
