"""Experiment harness: replicated runs, statistics and file emission.

Experiments fan replications out in fixed-size chunks.  Each chunk owns
a tagged substream (seed, experiment tag, chunk index) and is vectorized
internally; chunk results are reduced in chunk order, so a given
configuration produces byte-identical output files for any worker count.

Error statistics follow two conventions:

* ODE runs compare each stochastic trajectory against the deterministic
  Runge-Kutta trajectory: ``mu_n = mean |u_n - u~_n|^2``.
* Inchworm runs estimate the variance of the propagator along the
  observable anti-diagonal with the unbiased estimator
  ``mu_bar = N/(N-1) (mean ||G||^2 - ||mean G||^2)`` and report
  ``e(jh) = mu_bar[N+j, N-j]``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bounds as bounds_mod
from .algebra import frobenius_norm
from .bath import BathSpec, build_bath, correlation_B
from .inchworm import (
    DIVERGENCE_GUARD,
    SchemeConfig,
    SystemSpec,
    observable_trace,
    solve_grid,
    solve_grid_batch,
)
from .ode_mc import toy_model_experiment
from .parallel import map_ordered
from .rng import root_sequence


class ConfigError(ValueError):
    """Malformed experiment configuration."""


class DivergenceRateError(RuntimeError):
    """More than the tolerated fraction of replications diverged."""


# --------------------------------------------------------------------
# statistics


def variance_estimator(samples) -> float:
    """Unbiased scalar variance of a set of matrices.

    ``N/(N-1) * (mean ||G_k||_F^2 - ||mean G_k||_F^2)`` over ``N >= 2``
    samples.
    """
    stack = np.asarray(samples, dtype=complex)
    if stack.ndim < 3 or stack.shape[0] < 2:
        raise ValueError("variance estimator needs at least two samples")
    n = stack.shape[0]
    mean_sq = float(np.mean(np.sum(np.abs(stack) ** 2, axis=(-2, -1))))
    sq_mean = float(np.sum(np.abs(stack.mean(axis=0)) ** 2))
    return n / (n - 1) * (mean_sq - sq_mean)


def order_of_accuracy(e_values, p_values):
    """Observed orders ``log(e_{k-1}/e_k) / log(p_{k-1}/p_k)``.

    The first entry (no predecessor) and entries with nonpositive error
    are NaN markers.  For sample-count columns pass ``p = 1/N_s`` so the
    expected order is ``+1``.
    """
    e = np.asarray(e_values, dtype=float)
    p = np.asarray(p_values, dtype=float)
    if e.size != p.size or e.size < 2:
        raise ValueError("need matching sequences of length >= 2")
    if np.any(np.diff(p) >= 0) and np.any(np.diff(p) <= 0):
        raise ValueError("parameter sequence must be strictly monotone")
    out = np.full(e.size, np.nan)
    for k in range(1, e.size):
        if e[k - 1] > 0 and e[k] > 0:
            out[k] = math.log(e[k - 1] / e[k]) / math.log(p[k - 1] / p[k])
    return out


# --------------------------------------------------------------------
# replicated inchworm runs


@dataclass
class InchwormStats:
    """Replication statistics along the observable anti-diagonal."""

    t_values: np.ndarray  # (N+1,) observable times j*h
    mu_bar: np.ndarray  # (N+1,) unbiased variance estimate
    mean_g: np.ndarray  # (N+1, 2, 2) sample mean propagators
    n_exp: int
    n_accepted: int
    n_diverged: int
    n_clamped: int
    max_norm: float
    per_rep_norm2: Optional[np.ndarray] = None  # (n_accepted, N+1)
    per_rep_g: Optional[np.ndarray] = None  # (n_accepted, N+1, 2, 2)

    @property
    def e_rms(self) -> np.ndarray:
        return np.sqrt(self.mu_bar)


_INCHWORM_TAG = 7002


def _anti_diagonal_ordinals(n: int):
    rows = np.array([n + 1] + [n + j + 1 for j in range(1, n + 1)])
    cols = np.array([n] + [n - j for j in range(1, n + 1)])
    return rows, cols


def _inchworm_chunk(args):
    (system, bath, config, entropy, key, chunk_idx, reps, keep, guard) = args
    root = root_sequence(
        np.random.SeedSequence(entropy=entropy, spawn_key=key), chunk_idx
    )
    res = solve_grid_batch(system, bath, config, n_reps=reps, root_seq=root,
                           on_divergence="mask", guard=guard)
    rows, cols = _anti_diagonal_ordinals(config.n_steps)
    vals = res.grid.table[:, rows, cols, :, :]
    ok = ~res.diverged
    vals = vals[ok]
    norm2 = np.sum(np.abs(vals) ** 2, axis=(-2, -1))
    out = dict(
        sum_norm2=norm2.sum(axis=0),
        sum_g=vals.sum(axis=0),
        n_accepted=int(ok.sum()),
        n_diverged=int(res.diverged.sum()),
        max_norm=res.max_norm,
    )
    if keep:
        out["norm2"] = norm2
        out["vals"] = vals
    return out


def default_chunk_size(n_steps: int, ns: int, n_exp: int) -> int:
    """Replications per chunk, sized to keep one chunk's arrays ~256 MB.

    Depends only on the run parameters (never on the machine), so the
    chunk layout -- and with it every random draw -- is reproducible.
    """
    nn = 2 * n_steps + 2
    per_rep = nn * nn * 64 + max(ns, 1) * 512
    return max(1, min(n_exp, int(256e6 // per_rep)))


def run_replicated_inchworm(system: SystemSpec, bath, config: SchemeConfig,
                            n_exp: int, seed=None, workers: Optional[int] = None,
                            chunk_size: Optional[int] = None,
                            keep_replications: bool = False,
                            guard: float = DIVERGENCE_GUARD) -> InchwormStats:
    """Run ``n_exp`` independent solves and reduce anti-diagonal statistics.

    Diverged replications are excluded from the statistics and counted.
    """
    if n_exp < 2:
        raise ValueError("replicated runs need n_exp >= 2")
    seed = config.seed if seed is None else seed
    if chunk_size is None:
        chunk_size = default_chunk_size(config.n_steps, config.ns, n_exp)
    root = root_sequence(seed, _INCHWORM_TAG)
    sizes = [chunk_size] * (n_exp // chunk_size)
    if n_exp % chunk_size:
        sizes.append(n_exp % chunk_size)
    jobs = [
        (system, bath, config, root.entropy, tuple(root.spawn_key), i, r,
         keep_replications, guard)
        for i, r in enumerate(sizes)
    ]
    parts = map_ordered(_inchworm_chunk, jobs, workers)

    n = config.n_steps
    sum_norm2 = np.zeros(n + 1)
    sum_g = np.zeros((n + 1, 2, 2), dtype=complex)
    n_acc = n_div = 0
    max_norm = 0.0
    keep_n2, keep_g = [], []
    for p in parts:
        sum_norm2 += p["sum_norm2"]
        sum_g += p["sum_g"]
        n_acc += p["n_accepted"]
        n_div += p["n_diverged"]
        max_norm = max(max_norm, p["max_norm"])
        if keep_replications:
            keep_n2.append(p["norm2"])
            keep_g.append(p["vals"])
    if n_acc < 2:
        raise DivergenceRateError("fewer than two replications survived")
    mean_g = sum_g / n_acc
    raw = n_acc / (n_acc - 1) * (sum_norm2 / n_acc - frobenius_norm(mean_g) ** 2)
    n_clamped = int(np.sum(raw < 0))
    mu_bar = np.maximum(raw, 0.0)
    return InchwormStats(
        t_values=np.arange(n + 1) * (config.t_obs / n),
        mu_bar=mu_bar,
        mean_g=mean_g,
        n_exp=n_exp,
        n_accepted=n_acc,
        n_diverged=n_div,
        n_clamped=n_clamped,
        max_norm=max_norm,
        per_rep_norm2=np.concatenate(keep_n2) if keep_replications else None,
        per_rep_g=np.concatenate(keep_g) if keep_replications else None,
    )


def bootstrap_mu_bar(norm2: np.ndarray, g_vals: np.ndarray, n_boot: int, rng):
    """Bootstrap resamples of the unbiased variance estimator.

    ``norm2`` has shape ``(reps, K)`` and ``g_vals`` ``(reps, K, 2, 2)``;
    returns ``(n_boot, K)`` resampled ``mu_bar`` curves.
    """
    reps = norm2.shape[0]
    out = np.empty((n_boot, norm2.shape[1]))
    for b in range(n_boot):
        idx = rng.integers(0, reps, size=reps)
        m2 = norm2[idx].mean(axis=0)
        mg = g_vals[idx].mean(axis=0)
        out[b] = reps / (reps - 1) * (m2 - frobenius_norm(mg) ** 2)
    return out


# --------------------------------------------------------------------
# experiment recipes


def ode_convergence_table(k_max: float, t_final: float, h_values, ns_at_h: int,
                          ns_values, h_at_ns: float, multiplier: float = 100.0,
                          seed=0, workers=None, draw_dtype="float64"):
    """Convergence table of the toy model: an h-block and an Ns-block.

    Each row runs ``multiplier * N * Ns`` replications and reports the
    error at half and full time with observed orders.
    """
    rows = []
    for block, pairs in (
        ("h", [(h, ns_at_h) for h in h_values]),
        ("ns", [(h_at_ns, ns) for ns in ns_values]),
    ):
        for h, ns in pairs:
            n_steps = int(round(t_final / h))
            n_exp = int(round(multiplier * n_steps * ns))
            stats = toy_model_experiment(
                k_max, t_final, h, ns, n_exp,
                seed=root_sequence(seed, 1, _block_tag(block), n_steps, ns),
                workers=workers, draw_dtype=draw_dtype,
            )
            rows.append(dict(
                block=block, h=h, ns=ns, n_exp=n_exp,
                e_half=stats.mu[n_steps // 2], e_one=stats.mu[n_steps],
            ))
    _attach_orders(rows)
    return rows


def _block_tag(block: str) -> int:
    return 0 if block == "h" else 1


def _attach_orders(rows):
    for block in ("h", "ns"):
        sel = [r for r in rows if r["block"] == block]
        if len(sel) < 2:
            continue
        p = [r["h"] if block == "h" else 1.0 / r["ns"] for r in sel]
        for key in ("e_half", "e_one"):
            orders = order_of_accuracy([r[key] for r in sel], p)
            for r, o in zip(sel, orders):
                r["order_" + key[2:]] = o


def inchworm_convergence_table(system: SystemSpec, bath, t_final: float,
                               h_values, ns_at_h: int, ns_values, h_at_ns: float,
                               mbar: int = 1, multiplier: float = 100.0,
                               seed=0, workers=None, chunk_size=None):
    """Convergence table of the inchworm Monte Carlo variance estimator."""
    rows = []
    for block, pairs in (
        ("h", [(h, ns_at_h) for h in h_values]),
        ("ns", [(h_at_ns, ns) for ns in ns_values]),
    ):
        for h, ns in pairs:
            n_steps = int(round(t_final / h))
            n_exp = int(round(multiplier * n_steps * ns))
            config = SchemeConfig(n_steps=n_steps, t_obs=t_final, ns=ns,
                                  mbar=mbar, mode="mc")
            stats = run_replicated_inchworm(
                system, bath, config, n_exp,
                seed=root_sequence(seed, 2, _block_tag(block), n_steps, ns),
                workers=workers, chunk_size=chunk_size,
            )
            rows.append(dict(
                block=block, h=h, ns=ns, n_exp=n_exp,
                e_half=stats.mu_bar[n_steps // 2], e_one=stats.mu_bar[n_steps],
                n_diverged=stats.n_diverged, max_norm=stats.max_norm,
            ))
    _attach_orders(rows)
    return rows


def ode_error_growth(k_max: float, t_final: float, h: float, ns: int,
                     multiplier: float = 100.0, seed=0, workers=None,
                     keep_replications: bool = False):
    n_steps = int(round(t_final / h))
    n_exp = int(round(multiplier * n_steps * ns))
    return toy_model_experiment(
        k_max, t_final, h, ns, n_exp,
        seed=root_sequence(seed, 3, int(round(k_max * 1000)), ns),
        workers=workers, keep_replications=keep_replications,
    )


GROWTH_GUARD = 1000.0


def inchworm_error_growth(system: SystemSpec, bath, t_max: float, h: float,
                          ns: int, mbar: int, multiplier: float = 70.0,
                          seed=0, workers=None, chunk_size=None,
                          keep_replications: bool = False,
                          guard: float = GROWTH_GUARD) -> InchwormStats:
    """Error-growth curve over a long horizon.

    Long spans leave the bounded-norm regime that motivates the default
    divergence guard (truncated-series propagators grow), so this recipe
    defaults to a loose guard; genuine blow-ups are still masked and
    counted.
    """
    n_steps = int(round(t_max / h))
    n_exp = int(round(multiplier * n_steps * ns))
    config = SchemeConfig(n_steps=n_steps, t_obs=t_max, ns=ns, mbar=mbar, mode="mc")
    return run_replicated_inchworm(
        system, bath, config, n_exp,
        seed=root_sequence(seed, 4, mbar, ns),
        workers=workers, chunk_size=chunk_size,
        keep_replications=keep_replications, guard=guard,
    )


def observable_curve(system: SystemSpec, bath, t_final: float, h: float,
                     ns: int, mbar: int, seed=0, mode: str = "mc"):
    """Observable trace along the anti-diagonal of a single solve."""
    n_steps = int(round(t_final / h))
    config = SchemeConfig(n_steps=n_steps, t_obs=t_final, ns=ns, mbar=mbar,
                          seed=seed if isinstance(seed, int) else 0, mode=mode)
    grid = solve_grid(system, bath, config,
                      rng=root_sequence(seed, 5, mbar, ns))
    sigma = np.array([observable_trace(grid, j) for j in range(n_steps + 1)])
    return np.arange(n_steps + 1) * (t_final / n_steps), sigma


def measured_bound_constants(system: SystemSpec, bath: BathSpec, stats: InchwormStats,
                             mbar: int, t_span: float) -> bounds_mod.BoundConstants:
    """Bound constants measured from a run: norm bounds from the data."""
    taus = np.linspace(0.0, t_span, 2001)
    lbar = float(np.max(np.abs(correlation_B(bath, 0.0, taus))))
    return bounds_mod.BoundConstants(
        w=float(frobenius_norm(system.w_s)),
        g=max(stats.max_norm, 1e-12),
        lbar=max(lbar, 1e-12),
        mbar=mbar,
        h_s=float(frobenius_norm(system.h_s)),
    )


def bounds_overlay(system: SystemSpec, bath: BathSpec, t_max: float, h: float,
                   ns: int, mbar: int = 1, multiplier: float = 70.0, seed=0,
                   workers=None):
    """Empirical error curve with the theoretical envelope at matched constants.

    The envelope argument for ``e(jh)`` is the propagator time span
    ``(2j+1)h`` of the anti-diagonal entry it estimates.  Dominance is
    checked in log space (the envelope overflows float64 quickly).
    """
    stats = inchworm_error_growth(system, bath, t_max, h, ns, mbar,
                                  multiplier=multiplier, seed=seed, workers=workers)
    consts = measured_bound_constants(system, bath, stats, mbar, 2.0 * t_max)
    t_span = 2.0 * stats.t_values + h
    log_env = bounds_mod.log_error_envelope_mc(consts, t_span, h, ns)
    with np.errstate(divide="ignore"):
        log_emp = 0.5 * np.log(stats.mu_bar)
    dominated = log_emp <= log_env
    return dict(stats=stats, constants=consts, t_span=t_span,
                log_envelope=log_env, dominated=dominated)


# --------------------------------------------------------------------
# configuration


_DEFAULT_BATH = dict(modes=200, xi=0.6, omega_c=3.0, omega_max=12.0, beta=5.0)

EXPERIMENT_NAMES = (
    "ode-convergence", "ode-error-growth",
    "inchworm-convergence", "inchworm-error-growth",
    "observable", "bounds-overlay",
)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    n_exp_multiplier: float = 100.0
    system: SystemSpec = field(default_factory=SystemSpec)
    bath: BathSpec = field(default_factory=build_bath)
    grid: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}")


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a configuration mapping (unknown keys are errors)."""
    _check_keys(data, ("experiment", "seed", "n_exp_multiplier", "system",
                       "bath", "grid", "bounds"), "config")
    exp = data.get("experiment")
    if exp is not None and exp not in EXPERIMENT_NAMES:
        raise ConfigError(
            f"unknown experiment {exp!r}; choose from {EXPERIMENT_NAMES}"
        )
    sysblock = dict(data.get("system", {}))
    _check_keys(sysblock, ("epsilon", "delta"), "system")
    bathblock = {**_DEFAULT_BATH, **data.get("bath", {})}
    _check_keys(bathblock, tuple(_DEFAULT_BATH), "bath")
    bathblock["l_modes"] = bathblock.pop("modes")
    try:
        system = SystemSpec.spin_boson(**sysblock)
        bath = build_bath(**bathblock)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return ExperimentConfig(
        experiment=exp or "",
        seed=int(data.get("seed", 0)),
        n_exp_multiplier=float(data.get("n_exp_multiplier", 100.0)),
        system=system,
        bath=bath,
        grid=dict(data.get("grid", {})),
        bounds=dict(data.get("bounds", {})),
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return parse_config(data)


def _grid(cfg: ExperimentConfig, allowed, defaults: dict):
    _check_keys(cfg.grid, allowed, f"grid ({cfg.experiment})")
    out = dict(defaults)
    out.update(cfg.grid)
    missing = [k for k, v in out.items() if v is None]
    if missing:
        raise ConfigError(f"grid for {cfg.experiment} needs {missing}")
    return out


# --------------------------------------------------------------------
# file emission


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return ""
        return repr(float(x))
    return str(x)


def write_csv(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_plot_script(out_dir: Path, name: str, lines):
    with open(out_dir / f"{name}.gp", "w") as fh:
        fh.write("# gnuplot script (render with: gnuplot <this file>)\n")
        fh.write('set datafile separator ","\n')
        for ln in lines:
            fh.write(ln + "\n")


_TABLE_COLS = ("block", "h", "ns", "n_exp", "e_half", "order_half",
               "e_one", "order_one")


def _emit_table(out_dir: Path, name: str, rows):
    write_csv(
        out_dir / f"{name}.csv",
        _TABLE_COLS,
        [[r["block"], r["h"], r["ns"], r["n_exp"], r["e_half"],
          r.get("order_half", float("nan")), r["e_one"],
          r.get("order_one", float("nan"))] for r in rows],
    )
    _write_plot_script(out_dir, name, [
        "set logscale xy",
        f'plot "{name}.csv" every ::1 using 2:7 with linespoints title "e(1) vs h", \\',
        f'     "{name}.csv" every ::1 using 3:7 with linespoints title "e(1) vs Ns"',
    ])


# --------------------------------------------------------------------
# experiment dispatch


def run_experiment(cfg: ExperimentConfig, out_dir, workers: Optional[int] = None,
                   divergence_limit: float = 0.01) -> dict:
    """Run the configured experiment, emit CSV + plot script, return summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.experiment not in EXPERIMENT_NAMES:
        raise ConfigError(f"no experiment selected (choose from {EXPERIMENT_NAMES})")
    runner = {
        "ode-convergence": _run_ode_convergence,
        "ode-error-growth": _run_ode_error_growth,
        "inchworm-convergence": _run_inchworm_convergence,
        "inchworm-error-growth": _run_inchworm_error_growth,
        "observable": _run_observable,
        "bounds-overlay": _run_bounds_overlay,
    }[cfg.experiment]
    summary = runner(cfg, out, workers)
    n_total = summary.get("replications", 0)
    n_div = summary.get("diverged", 0)
    summary["divergence_rate"] = (n_div / n_total) if n_total else 0.0
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, default=str)
    if n_total and n_div / n_total > divergence_limit:
        raise DivergenceRateError(
            f"{n_div}/{n_total} replications diverged "
            f"(limit {divergence_limit:.1%})"
        )
    return summary


def _run_ode_convergence(cfg, out, workers):
    g = _grid(cfg, ("k", "t", "h_values", "ns_at_h", "ns_values", "h_at_ns",
                    "draw_dtype"),
              dict(k=1.0, t=1.0, h_values=[1 / 2, 1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64],
                   ns_at_h=100, ns_values=[100, 200, 400, 800, 1600, 3200],
                   h_at_ns=0.25, draw_dtype="float64"))
    rows = ode_convergence_table(
        g["k"], g["t"], g["h_values"], g["ns_at_h"], g["ns_values"], g["h_at_ns"],
        multiplier=cfg.n_exp_multiplier, seed=cfg.seed, workers=workers,
        draw_dtype=g["draw_dtype"],
    )
    _emit_table(out, "ode_convergence", rows)
    return dict(experiment=cfg.experiment, rows=len(rows),
                replications=sum(r["n_exp"] for r in rows), diverged=0,
                files=["ode_convergence.csv"])


def _run_inchworm_convergence(cfg, out, workers):
    g = _grid(cfg, ("t", "h_values", "ns_at_h", "ns_values", "h_at_ns", "mbar"),
              dict(t=1.0,
                   h_values=[1 / 10, 1 / 12, 1 / 14, 1 / 16, 1 / 18, 1 / 20],
                   ns_at_h=2, ns_values=[1, 2, 4, 8, 16, 32], h_at_ns=0.25,
                   mbar=1))
    rows = inchworm_convergence_table(
        cfg.system, cfg.bath, g["t"], g["h_values"], g["ns_at_h"],
        g["ns_values"], g["h_at_ns"], mbar=g["mbar"],
        multiplier=cfg.n_exp_multiplier, seed=cfg.seed, workers=workers,
    )
    _emit_table(out, "inchworm_convergence", rows)
    return dict(experiment=cfg.experiment, rows=len(rows),
                replications=sum(r["n_exp"] for r in rows),
                diverged=sum(r["n_diverged"] for r in rows),
                files=["inchworm_convergence.csv"])


def _run_ode_error_growth(cfg, out, workers):
    g = _grid(cfg, ("t", "h", "k_values", "ns_values"),
              dict(t=3.0, h=0.25, k_values=[10.0, 3.0], ns_values=[4]))
    files, total = [], 0
    for k in g["k_values"]:
        for ns in g["ns_values"]:
            stats = ode_error_growth(k, g["t"], g["h"], ns,
                                     multiplier=cfg.n_exp_multiplier,
                                     seed=cfg.seed, workers=workers)
            name = f"ode_growth_k{k:g}_ns{ns}"
            ts = np.arange(stats.mu.size) * g["h"]
            write_csv(out / f"{name}.csv", ("t", "mu", "stderr_mu"),
                      zip(ts, stats.mu, stats.stderr_mu))
            files.append(f"{name}.csv")
            total += stats.n_exp
    _write_plot_script(out, "ode_growth", ["set logscale y"] + [
        f'{"plot" if i == 0 else "replot"} "{f}" every ::1 using 1:2 '
        f'with linespoints title "{f[:-4]}"'
        for i, f in enumerate(files)
    ])
    return dict(experiment=cfg.experiment, replications=total, diverged=0,
                files=files)


def _run_inchworm_error_growth(cfg, out, workers):
    g = _grid(cfg, ("t_max", "h", "ns_values", "mbar_values"),
              dict(t_max=5.0, h=0.125, ns_values=[4], mbar_values=[1, 3]))
    files, total, diverged = [], 0, 0
    for mbar in g["mbar_values"]:
        for ns in g["ns_values"]:
            stats = inchworm_error_growth(
                cfg.system, cfg.bath, g["t_max"], g["h"], ns, mbar,
                multiplier=cfg.n_exp_multiplier, seed=cfg.seed, workers=workers)
            name = f"inchworm_growth_mbar{mbar}_ns{ns}"
            write_csv(out / f"{name}.csv", ("j", "t", "mu_bar", "e_rms"),
                      zip(range(stats.mu_bar.size), stats.t_values,
                          stats.mu_bar, stats.e_rms))
            files.append(f"{name}.csv")
            total += stats.n_exp
            diverged += stats.n_diverged
    _write_plot_script(out, "inchworm_growth", ["set logscale y"] + [
        f'{"plot" if i == 0 else "replot"} "{f}" every ::1 using 2:3 '
        f'with linespoints title "{f[:-4]}"'
        for i, f in enumerate(files)
    ])
    return dict(experiment=cfg.experiment, replications=total,
                diverged=diverged, files=files)


def _run_observable(cfg, out, workers):
    g = _grid(cfg, ("t", "h", "runs"),
              dict(t=1.0, h=0.125,
                   runs=[dict(mbar=1, ns=10000), dict(mbar=3, ns=100000)]))
    files = []
    for run in g["runs"]:
        _check_keys(run, ("mbar", "ns", "mode"), "observable run")
        ts, sigma = observable_curve(cfg.system, cfg.bath, g["t"], g["h"],
                                     run["ns"], run["mbar"], seed=cfg.seed,
                                     mode=run.get("mode", "mc"))
        name = f"observable_mbar{run['mbar']}_ns{run['ns']}"
        write_csv(out / f"{name}.csv", ("j", "t_j", "re_sigma_z", "im_sigma_z"),
                  zip(range(ts.size), ts, np.real(sigma), np.imag(sigma)))
        files.append(f"{name}.csv")
    _write_plot_script(out, "observable", [
        f'{"plot" if i == 0 else "replot"} "{f}" every ::1 using 2:3 '
        f'with lines title "{f[:-4]}"'
        for i, f in enumerate(files)
    ])
    return dict(experiment=cfg.experiment, replications=0, diverged=0,
                files=files)


def _run_bounds_overlay(cfg, out, workers):
    g = _grid(cfg, ("t_max", "h", "ns", "mbar"),
              dict(t_max=2.0, h=0.125, ns=4, mbar=1))
    res = bounds_overlay(cfg.system, cfg.bath, g["t_max"], g["h"], g["ns"],
                         g["mbar"], multiplier=cfg.n_exp_multiplier,
                         seed=cfg.seed, workers=workers)
    stats = res["stats"]
    with np.errstate(over="ignore"):
        env = np.exp(res["log_envelope"])
    write_csv(out / "bounds_overlay.csv",
              ("j", "t", "t_span", "mu_bar", "e_rms", "log_envelope",
               "envelope", "dominated"),
              zip(range(stats.mu_bar.size), stats.t_values, res["t_span"],
                  stats.mu_bar, stats.e_rms, res["log_envelope"], env,
                  res["dominated"]))
    _write_plot_script(out, "bounds_overlay", [
        "set logscale y",
        'plot "bounds_overlay.csv" every ::1 using 2:5 with linespoints '
        'title "empirical RMS error"',
    ])
    return dict(experiment=cfg.experiment, replications=stats.n_exp,
                diverged=stats.n_diverged,
                dominated=bool(np.all(res["dominated"])),
                constants=vars(res["constants"]),
                files=["bounds_overlay.csv"])
