"""Command line entry point ``inchworm-lab``.

Subcommands run the experiment recipes (``ode-convergence``,
``ode-error-growth``, ``inchworm-convergence``, ``inchworm-error-growth``,
``observable``, ``bounds-overlay``), single solves (``inchworm-solve``)
and small dumps (``bounds-eval``, ``bath-dump``).  Exit codes: 0 on
success, 2 on configuration errors, 3 when too many replications
diverge.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import bounds as bounds_mod
from . import harness
from .bath import build_bath
from .inchworm import DivergenceError, SchemeConfig, observable_trace, solve_grid
from .rng import root_sequence

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 2, 3


def _build_parser():
    p = argparse.ArgumentParser(
        prog="inchworm-lab",
        description="Inchworm Monte Carlo and stochastic Runge-Kutta experiments",
    )
    p.add_argument("--config", type=Path, help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", type=Path, default=Path("out"),
                   help="output directory (default ./out)")
    p.add_argument("--workers", type=int, default=1,
                   help="worker processes for replication chunks")
    sub = p.add_subparsers(dest="command", required=True)

    for name in harness.EXPERIMENT_NAMES:
        sub.add_parser(name, help=f"run the {name} experiment recipe")

    solve = sub.add_parser("inchworm-solve", help="single propagator solve")
    solve.add_argument("--N", type=int, default=8, help="steps up to t")
    solve.add_argument("--t", type=float, default=1.0, help="observable time")
    solve.add_argument("--ns", type=int, default=10000, help="samples per stage")
    solve.add_argument("--mbar", type=int, default=1, choices=(1, 3))
    solve.add_argument("--mode", choices=("mc", "det"), default="mc")
    solve.add_argument("--out-csv", dest="out_csv", type=Path,
                       help="observable CSV path (default <out>/solve.csv)")

    be = sub.add_parser("bounds-eval", help="emit an error envelope table")
    be.add_argument("--t-max", type=float, default=5.0)
    be.add_argument("--points", type=int, default=101)

    sub.add_parser("bath-dump", help="emit the discretized bath modes")
    return p


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.parse_config({})
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except harness.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command in harness.EXPERIMENT_NAMES:
            cfg.experiment = args.command
            summary = harness.run_experiment(cfg, args.out, workers=args.workers)
            for f in summary.get("files", []):
                print(f"wrote {Path(args.out) / f}")
            return EXIT_OK
        if args.command == "inchworm-solve":
            return _solve(cfg, args)
        if args.command == "bounds-eval":
            return _bounds_eval(cfg, args)
        if args.command == "bath-dump":
            return _bath_dump(cfg, args)
    except harness.ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (harness.DivergenceRateError, DivergenceError) as err:
        print(f"divergence failure: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    raise AssertionError("unreachable")


def _solve(cfg, args) -> int:
    config = SchemeConfig(n_steps=args.N, t_obs=args.t, ns=args.ns,
                          mbar=args.mbar, seed=cfg.seed, mode=args.mode)
    grid = solve_grid(cfg.system, cfg.bath, config,
                      rng=root_sequence(cfg.seed, 6, args.mbar, args.ns))
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out_csv or (args.out / "solve.csv")
    sigma = np.array([observable_trace(grid, j) for j in range(args.N + 1)])
    ts = np.arange(args.N + 1) * (args.t / args.N)
    harness.write_csv(path, ("j", "t_j", "re_sigma_z", "im_sigma_z"),
                      zip(range(args.N + 1), ts, np.real(sigma), np.imag(sigma)))
    print(f"wrote {path}")
    return EXIT_OK


def _bounds_eval(cfg, args) -> int:
    block = dict(w=np.sqrt(2.0), g=np.sqrt(2.0), lbar=1.0, mbar=1,
                 h=0.125, ns=100, kind="mc", h_s=0.0, gpp=0.0, gppp=0.0)
    harness._check_keys(cfg.bounds, tuple(block), "bounds")
    block.update(cfg.bounds)
    kind = block.pop("kind")
    h, ns = block.pop("h"), int(block.pop("ns"))
    consts = bounds_mod.BoundConstants(**block)
    ts = np.linspace(0.0, args.t_max, args.points)
    if kind == "mc":
        env = bounds_mod.error_envelope_mc(consts, ts, h, ns)
    elif kind == "full":
        env = bounds_mod.error_envelope_full(consts, ts, h, ns)
    else:
        raise harness.ConfigError(f"unknown envelope kind {kind!r}")
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "bounds_eval.csv"
    harness.write_csv(path, ("t", "envelope"), zip(ts, env))
    print(f"wrote {path}")
    return EXIT_OK


def _bath_dump(cfg, args) -> int:
    bath = cfg.bath if cfg.bath is not None else build_bath()
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "bath.csv"
    harness.write_csv(path, ("l", "omega_l", "c_l"),
                      zip(range(1, bath.l_modes + 1), bath.omega, bath.coupling))
    print(f"wrote {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
