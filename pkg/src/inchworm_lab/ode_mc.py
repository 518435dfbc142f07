"""Stochastic Runge-Kutta schemes for ODEs with Monte Carlo right-hand sides.

For ``du/dt = f(t, u)`` with ``f(t, u) = E_X[g(t, u, X)]`` the stochastic
scheme replaces every stage value of an explicit Runge-Kutta method by a
fresh sample average

    k_i = (1/N_s) sum_l g(t_n + c_i h, u_n + h sum_j a_ij k_j, X_l^(i)),

drawing an independent batch per stage and per step.  The module also
provides direct Monte Carlo summation of the Dyson series for linear
right-hand sides, and the scalar toy-model experiment
``du/dt = -i/2 K u`` with ``g(u, X) = -i X u``, ``X ~ U(0, K)`` used for
convergence tables and error-growth curves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .parallel import map_ordered
from .rng import root_sequence, substream


class SolverDivergenceError(RuntimeError):
    """A trajectory left the finite range."""

    def __init__(self, step: int, what: str = "solution"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients of an explicit Runge-Kutta method."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        s = b.size
        if a.shape != (s, s) or c.shape != (s,):
            raise ValueError("inconsistent tableau shapes")
        if np.any(a[np.triu_indices(s)] != 0.0):
            raise ValueError("tableau must be strictly lower triangular (explicit)")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("tableau coefficients must be finite")

    @property
    def stages(self) -> int:
        return self.b.size

    @staticmethod
    def heun() -> "ButcherTableau":
        return ButcherTableau(
            a=[[0.0, 0.0], [1.0, 0.0]], b=[0.5, 0.5], c=[0.0, 1.0]
        )

    @staticmethod
    def forward_euler() -> "ButcherTableau":
        return ButcherTableau(a=[[0.0]], b=[1.0], c=[0.0])


@dataclass(frozen=True)
class StochasticRhs:
    """Right-hand side ``f = E_X[g]`` accessed through sampling.

    ``sampler(rng, t, n)`` draws ``n`` independent realizations of ``X``;
    ``evaluator(t, u, xs)`` maps them to an array of ``g`` values with
    shape ``(n, d)``.  ``deterministic``, when supplied, is the exact
    expectation ``f(t, u)`` (used by tests and reference trajectories).
    """

    sampler: Callable
    evaluator: Callable
    deterministic: Optional[Callable] = None


def rk_deterministic_solve(tableau: ButcherTableau, f, u0, h: float, n_steps: int):
    """Trajectory ``u_0 .. u_N`` of the explicit Runge-Kutta recursion."""
    if h <= 0 or n_steps < 1:
        raise ValueError("need h > 0 and n_steps >= 1")
    u = np.atleast_1d(np.asarray(u0, dtype=complex))
    out = np.empty((n_steps + 1, u.size), dtype=complex)
    out[0] = u
    ks = np.empty((tableau.stages, u.size), dtype=complex)
    for n in range(n_steps):
        t = n * h
        for i in range(tableau.stages):
            ui = out[n] + h * (tableau.a[i, :i] @ ks[:i]) if i else out[n]
            ks[i] = np.atleast_1d(np.asarray(f(t + tableau.c[i] * h, ui)))
        out[n + 1] = out[n] + h * (tableau.b @ ks)
        if not np.all(np.isfinite(out[n + 1])):
            raise SolverDivergenceError(n + 1)
    return out


def rk_stochastic_solve(tableau: ButcherTableau, rhs: StochasticRhs, u0,
                        h: float, n_steps: int, ns: int, rng):
    """Runge-Kutta trajectory with sampled stage values.

    Every stage of every step draws its own fresh batch of ``ns``
    samples from ``rng``.
    """
    if ns < 1:
        raise ValueError("ns must be >= 1")
    u = np.atleast_1d(np.asarray(u0, dtype=complex))
    out = np.empty((n_steps + 1, u.size), dtype=complex)
    out[0] = u
    ks = np.empty((tableau.stages, u.size), dtype=complex)
    for n in range(n_steps):
        t = n * h
        for i in range(tableau.stages):
            ui = out[n] + h * (tableau.a[i, :i] @ ks[:i]) if i else out[n]
            ti = t + tableau.c[i] * h
            xs = rhs.sampler(rng, ti, ns)
            gs = np.asarray(rhs.evaluator(ti, ui, xs), dtype=complex).reshape(ns, u.size)
            ks[i] = gs.mean(axis=0)
        out[n + 1] = out[n] + h * (tableau.b @ ks)
        if not np.all(np.isfinite(out[n + 1])):
            raise SolverDivergenceError(n + 1)
    return out


# --------------------------------------------------------------------
# Dyson-series Monte Carlo for du/dt = -i E[A(t, X)] u


@dataclass
class DysonResult:
    estimate: np.ndarray
    second_moment: float  # empirical E ||sample - mean||^2
    stderr: float
    n_accepted: int
    rejection_rate: float


def dyson_ode_mc(a_sampler, u0, t_final: float, rate: float, ns: int, rng) -> DysonResult:
    """Estimate ``u(T)`` by sampling the Dyson series directly.

    Each sample draws an order ``M ~ Poisson(rate * T)`` and ``M``
    uniform times sorted ascending, then evaluates

        (-i)^M A(t_M) ... A(t_1) u(0)

    divided by the sampling density (Poisson mass times the uniform
    simplex density ``M!/T^M``).  The order-zero term ``u(0)`` is
    included analytically, so the estimator is exactly ``u(0)`` when
    ``A`` vanishes.  ``a_sampler(rng, times)`` must return one fresh
    realization ``A(t_k, X_k)`` per time (matrices ``(M, d, d)`` or
    scalars ``(M,)``).  Non-finite sample values are rejected and
    counted.
    """
    if rate <= 0 or t_final <= 0:
        raise ValueError("rate and t_final must be positive")
    u0 = np.atleast_1d(np.asarray(u0, dtype=complex))
    log_weight0 = rate * t_final
    total = np.zeros_like(u0)
    total_sq = 0.0
    samples = []
    n_rejected = 0
    for _ in range(ns):
        m = int(rng.poisson(rate * t_final))
        if m == 0:
            val = u0.copy()
        else:
            times = np.sort(rng.uniform(0.0, t_final, size=m))
            mats = np.asarray(a_sampler(rng, times), dtype=complex)
            v = u0.copy()
            for k in range(m):
                v = mats[k] @ v if mats.ndim == 3 else mats[k] * v
            corr = ((-1j) ** m) * np.exp(log_weight0 - m * np.log(rate)) * v
            val = u0 + corr
        if not np.all(np.isfinite(val)):
            n_rejected += 1
            continue
        samples.append(val)
    n_acc = len(samples)
    if n_acc == 0:
        raise SolverDivergenceError(0, "dyson estimate (all samples rejected)")
    stack = np.asarray(samples)
    mean = stack.mean(axis=0)
    total_sq = float(np.mean(np.sum(np.abs(stack - mean) ** 2, axis=1)))
    return DysonResult(
        estimate=mean,
        second_moment=total_sq,
        stderr=float(np.sqrt(total_sq / n_acc)),
        n_accepted=n_acc,
        rejection_rate=n_rejected / ns,
    )


# --------------------------------------------------------------------
# scalar toy model


def toy_rhs(k_max: float) -> StochasticRhs:
    """``g(u, X) = -i X u`` with ``X ~ U(0, K)`` and ``f(u) = -i K u / 2``."""
    return StochasticRhs(
        sampler=lambda rng, t, n: k_max * rng.random(n),
        evaluator=lambda t, u, xs: -1j * np.multiply.outer(xs, u),
        deterministic=lambda t, u: -0.5j * k_max * u,
    )


@dataclass
class OdeRunStats:
    """Replicated error statistics ``mu_n ~ E|u_n - u~_n|^2`` per step."""

    mu: np.ndarray
    stderr_mu: np.ndarray
    n_exp: int
    reference: np.ndarray
    per_replication: Optional[np.ndarray] = None  # (n_exp, N+1) squared errors

    def error_function(self):
        """Pairs ``(t, e(t))`` with ``e(nh) = mu_n``."""
        n = self.mu.size - 1
        return np.arange(n + 1) / n * self.t_final, self.mu

    t_final: float = 0.0


_TOY_TAG = 7001


def _toy_chunk(args):
    (entropy, key, chunk_idx, reps, k_max, t_final, h, ns, n_steps,
     u_det, keep, dtype_name) = args
    rng = substream(
        root_sequence(np.random.SeedSequence(entropy=entropy, spawn_key=key)),
        chunk_idx,
    )
    dtype = np.dtype(dtype_name)
    u = np.ones(reps, dtype=complex)
    sq = np.empty((reps, n_steps + 1)) if keep else None
    sum_y = np.zeros(n_steps + 1)
    sum_y2 = np.zeros(n_steps + 1)
    if keep:
        sq[:, 0] = 0.0
    for n in range(n_steps):
        draws = rng.random((reps, 2, ns), dtype=dtype)
        s1 = k_max * draws[:, 0, :].mean(axis=1, dtype=np.float64)
        s2 = k_max * draws[:, 1, :].mean(axis=1, dtype=np.float64)
        u = u * (1.0 - 0.5j * h * (s1 + s2) - 0.5 * h * h * (s2 * s1))
        y = np.abs(u - u_det[n + 1]) ** 2
        sum_y[n + 1] = y.sum()
        sum_y2[n + 1] = (y * y).sum()
        if keep:
            sq[:, n + 1] = y
    return sum_y, sum_y2, sq


def toy_model_experiment(k_max: float, t_final: float, h: float, ns: int,
                         n_exp: int, seed=0, workers: Optional[int] = None,
                         chunk_size: Optional[int] = None,
                         keep_replications: bool = False,
                         draw_dtype="float64") -> OdeRunStats:
    """Replicated Heun runs of the toy model against one reference trajectory.

    The reference is the deterministic Heun solution with the same step;
    ``mu_n`` averages ``|u_n - u~_n|^2`` over ``n_exp`` independent
    replications.  Replications are processed in fixed-size chunks with
    chunk-tagged substreams, vectorized within each chunk, and reduced in
    chunk order, so results do not depend on ``workers``.
    """
    n_steps = int(round(t_final / h))
    if abs(n_steps * h - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError("t_final must be a multiple of h")
    u_det = rk_deterministic_solve(
        ButcherTableau.heun(), lambda t, u: -0.5j * k_max * u, [1.0], h, n_steps
    )[:, 0]
    if chunk_size is None:
        chunk_size = max(1, min(n_exp, int(2**22 // max(ns, 1))))
    root = root_sequence(seed, _TOY_TAG)
    sizes = [chunk_size] * (n_exp // chunk_size)
    if n_exp % chunk_size:
        sizes.append(n_exp % chunk_size)
    jobs = [
        (root.entropy, tuple(root.spawn_key), i, r, k_max, t_final, h, ns,
         n_steps, u_det, keep_replications, str(draw_dtype))
        for i, r in enumerate(sizes)
    ]
    parts = map_ordered(_toy_chunk, jobs, workers)
    sum_y = np.zeros(n_steps + 1)
    sum_y2 = np.zeros(n_steps + 1)
    per = [] if keep_replications else None
    for sy, sy2, sq in parts:
        sum_y += sy
        sum_y2 += sy2
        if keep_replications:
            per.append(sq)
    mu = sum_y / n_exp
    var = np.maximum(sum_y2 / n_exp - mu * mu, 0.0)
    return OdeRunStats(
        mu=mu,
        stderr_mu=np.sqrt(var / n_exp),
        n_exp=n_exp,
        reference=u_det,
        per_replication=np.concatenate(per) if keep_replications else None,
        t_final=t_final,
    )
