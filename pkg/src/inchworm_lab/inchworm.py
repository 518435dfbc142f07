"""Inchworm solvers for the full two-time propagator of a spin-boson system.

The propagator ``G(s_up, s_lo)`` obeys an integro-differential equation
whose right-hand side combines a Hamiltonian drift with a series of
ordered-time integrals weighted by the bath influence functional.  Time
marching uses a two-stage Heun-type predictor/corrector; the integral
slopes are evaluated either by composite Gauss-Legendre quadrature
(deterministic scheme, lowest truncation order only) or by Monte Carlo
over uniform draws in the integration window (inchworm Monte Carlo, odd
truncation orders 1 and 3).  Ordered samples carry the simplex volume
prefactor ``(t_top - t_m)^M / M!``.

Grid filling follows :func:`inchworm_lab.mesh.computation_order`; the
discontinuity at the measurement time is handled by stepping into the
``N-`` row with negative drift sign and deriving the ``N+`` row and
``N-`` column from the jump relations ``G[N+, k] = O G[N-, k]`` and
``G[j, N-] = G[j, N+] O``.

Replicated solves share one control flow, so the heavy entry point
:func:`solve_grid_batch` carries a leading replication axis through the
whole table and evaluates every slope vectorized over replications and
samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mesh
from .algebra import IDENTITY, SIGMA_X, SIGMA_Z, as_mat2, frobenius_norm, mat_exp
from .bath import BathSpec, CorrelationTable, correlation_B
from .mesh import GridNode, InterpKind, PropagatorGrid
from .rng import substream

DIVERGENCE_GUARD = 10.0 * np.sqrt(2.0)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


class DivergenceError(RuntimeError):
    """A propagator norm exceeded the boundedness guard."""


@dataclass(frozen=True)
class SystemSpec:
    """System Hamiltonian, coupling operator, observable and initial state."""

    h_s: np.ndarray = field(default_factory=lambda: (SIGMA_Z + SIGMA_X).copy())
    w_s: np.ndarray = field(default_factory=lambda: SIGMA_Z.copy())
    o_s: np.ndarray = field(default_factory=lambda: SIGMA_Z.copy())
    rho_s: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
    )

    def __post_init__(self):
        for name in ("h_s", "w_s", "o_s", "rho_s"):
            object.__setattr__(self, name, as_mat2(getattr(self, name)))
        herm = frobenius_norm(self.h_s - np.conj(self.h_s.T))
        if herm > 1e-14:
            raise ValueError(f"h_s must be Hermitian (defect {herm:.2e})")

    @staticmethod
    def spin_boson(epsilon: float = 1.0, delta: float = 1.0) -> "SystemSpec":
        """``H = epsilon*sigma_z + delta*sigma_x`` with ``W = O = sigma_z``."""
        return SystemSpec(h_s=epsilon * SIGMA_Z + delta * SIGMA_X)


@dataclass(frozen=True)
class SchemeConfig:
    """Discretization and sampling parameters of one solve."""

    n_steps: int
    t_obs: float
    ns: int = 1
    mbar: int = 1
    seed: int = 0
    mode: str = "mc"  # "mc" | "det"

    def __post_init__(self):
        if self.t_obs / self.n_steps > 1.0 + 1e-12:
            raise ValueError("step length h = t/N must satisfy h <= 1")
        if self.mbar % 2 == 0 or self.mbar < 1:
            raise ValueError("mbar must be odd and >= 1")
        if self.mbar > 3:
            raise ValueError("truncation orders above 3 are not implemented")
        if self.mode not in ("mc", "det"):
            raise ValueError("mode must be 'mc' or 'det'")
        if self.mode == "mc" and self.ns < 1:
            raise ValueError("ns must be >= 1")


# --------------------------------------------------------------------
# step geometry


def _source_ordinal(target_step: int, n: int) -> int:
    """Ordinal of the row the step starts from (``N+`` when crossing)."""
    s = target_step - 1
    if s < n:
        return s
    if s == n:
        return n + 1  # the N+ copy feeds the first step above t
    return s + 1


def _col_ordinal(col_step: int, n: int) -> int:
    return col_step if col_step < n else (n + 1 if col_step == n else col_step + 1)


def _event_plan(n: int):
    """Precompute ordinals, times and drift signs for every grid event."""
    plan = []
    for ev in mesh.computation_order(n):
        if ev.op == "step":
            rt = ev.row.j  # target row step index (N- has j == n)
            row_to = n if ev.row.kind == "nminus" else (rt if rt < n else rt + 1)
            plan.append(
                dict(
                    op="step",
                    row_to=row_to,
                    row_from=_source_ordinal(rt, n),
                    col=_col_ordinal(ev.col.j, n) if ev.col.kind == "regular" else n + 1,
                    sgn_n=-1.0 if rt - 1 < n else 1.0,
                    sgn_np1=-1.0 if rt <= n else 1.0,
                    t_m=ev.col.j,  # in units of h
                    t_n=rt - 1,
                    t_np1=rt,
                    label=(ev.row.label(), ev.col.label()),
                )
            )
        elif ev.op == "jump_row":
            plan.append(dict(op="jump_row", col=ev.col.j, label=("N+", ev.col.label())))
        else:
            plan.append(
                dict(op="jump_col", row=ev.row.j + 1, label=(ev.row.label(), "N-"))
            )
    return plan


# --------------------------------------------------------------------
# slope evaluation


def _chain(w_s, *factors):
    out = np.matmul(w_s, factors[0])
    for f in factors[1:]:
        out = np.matmul(np.matmul(out, w_s), f)
    return out


def _mc_slope(table, corr, w_s, top_ord, top_time, col_ord, col_time,
              mbar, ns, rng, h, n, t_split):
    """Monte Carlo estimate of a slope over the window [col_time, top_time].

    ``table`` has a leading replication axis; draws have shape
    ``(reps, ns)`` per interior point.  Returns shape ``(reps, 2, 2)``;
    the overall drift sign of the stage is applied by the caller.
    """
    reps = table.shape[0]
    delta = top_time - col_time
    if delta <= 0.0:
        return np.zeros((reps, 2, 2), dtype=complex)

    s = col_time + delta * rng.random((reps, ns))
    parity = np.where(s <= t_split, -1.0, 1.0)
    g_up = mesh.line_row(table, top_ord, s, h, n, t_split)
    g_dn = mesh.line_col(table, col_ord, s, h, n, t_split)
    weight = (-delta) * parity * corr.diff_nonneg(top_time - s)  # i^2 = -1
    acc = (weight[..., None, None] * _chain(w_s, g_up, g_dn)).mean(axis=1)

    if mbar >= 3:
        s3 = np.sort(col_time + delta * rng.random((reps, ns, 3)), axis=-1)
        count = (s3 <= t_split).sum(axis=-1)
        parity3 = 1.0 - 2.0 * (count & 1)
        s1, s2, s3_ = s3[..., 0], s3[..., 1], s3[..., 2]
        g_up = mesh.line_row(table, top_ord, s3_, h, n, t_split)
        g_32 = mesh.interp2d(table, s3_, s2, h, n, t_split)
        g_21 = mesh.interp2d(table, s2, s1, h, n, t_split)
        g_dn = mesh.line_col(table, col_ord, s1, h, n, t_split)
        lfac = corr.diff_nonneg(s3_ - s1) * corr.diff_nonneg(top_time - s2)
        weight = (delta**3 / 6.0) * parity3 * lfac  # i^4 = +1
        prod = _chain(w_s, g_up, g_32, g_21, g_dn)
        acc = acc + (weight[..., None, None] * prod).mean(axis=1)
    return acc


def _det_slope(table, corr, w_s, top_ord, top_time, col_ord, col_time,
               h, n, t_split):
    """Composite Gauss-Legendre quadrature of the order-1 slope integrand.

    The window is split at every mesh node (the discontinuity at ``t`` is
    one of them) and integrated with 4-point Gauss-Legendre per subcell,
    so the quadrature error is far below the scheme's ``O(h^2)``.
    """
    reps = table.shape[0]
    if top_time - col_time <= 0.0:
        return np.zeros((reps, 2, 2), dtype=complex)
    lo_cell = int(round(col_time / h))
    up_cell = int(round(top_time / h))
    edges = np.arange(lo_cell, up_cell + 1) * h
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    s = (mid[:, None] + half[:, None] * _GL_NODES).ravel()[None, :]
    wq = (half[:, None] * _GL_WEIGHTS).ravel()[None, :]
    s = np.broadcast_to(s, (reps, s.shape[1]))
    parity = np.where(s <= t_split, -1.0, 1.0)
    g_up = mesh.line_row(table, top_ord, s, h, n, t_split)
    g_dn = mesh.line_col(table, col_ord, s, h, n, t_split)
    weight = -wq * parity * corr.diff_nonneg(top_time - s)  # i^2 = -1
    return (weight[..., None, None] * _chain(w_s, g_up, g_dn)).sum(axis=1)


# --------------------------------------------------------------------
# stepping


@dataclass
class BatchResult:
    """Outcome of a replicated solve."""

    grid: PropagatorGrid
    diverged: np.ndarray  # bool per replication
    max_norm: float  # largest propagator norm seen over entries and reps


def _run_events(grid: PropagatorGrid, system: SystemSpec, corr, config: SchemeConfig,
                root_seq, on_divergence: str, guard: float) -> BatchResult:
    table = grid.table
    n, h, t_split = grid.n, grid.h, grid.t_split
    reps = table.shape[0]
    h_s, w_s, o_s = system.h_s, system.w_s, system.o_s
    diverged = np.zeros(reps, dtype=bool)
    max_norm = float(frobenius_norm(o_s))

    def slope(top_ord, top_step, col_ord, col_step, rng):
        args = (table, corr, w_s, top_ord, top_step * h, col_ord, col_step * h)
        if config.mode == "det":
            return _det_slope(*args, h, n, t_split)
        return _mc_slope(*args, config.mbar, config.ns, rng, h, n, t_split)

    for idx, ev in enumerate(_event_plan(n)):
        if ev["op"] == "jump_row":
            c = ev["col"]
            table[:, n + 1, c] = np.matmul(o_s, table[:, n, c])
            continue
        if ev["op"] == "jump_col":
            r = ev["row"]
            table[:, r, n] = np.matmul(table[:, r, n + 1], o_s)
            continue

        rng1 = rng2 = None
        if config.mode == "mc":
            rng1 = substream(root_seq, idx, 0)
            rng2 = substream(root_seq, idx, 1)
        g_nm = table[:, ev["row_from"], ev["col"]]
        k1 = slope(ev["row_from"], ev["t_n"], ev["col"], ev["t_m"], rng1)
        drift = 1j * h * np.matmul(h_s, g_nm)
        g_star = g_nm + ev["sgn_n"] * drift + h * k1
        # K2 interpolates through the provisional value, which sits exactly
        # at the target node; park it there and overwrite after the stage
        table[:, ev["row_to"], ev["col"]] = g_star
        k2 = slope(ev["row_to"], ev["t_np1"], ev["col"], ev["t_m"], rng2)
        g_new = (
            g_nm
            + 0.5 * ev["sgn_n"] * drift
            + 0.5 * ev["sgn_np1"] * 1j * h * np.matmul(h_s, g_star)
            + 0.5 * h * (k1 + k2)
        )
        table[:, ev["row_to"], ev["col"]] = g_new

        norms = frobenius_norm(g_new)
        max_norm = max(max_norm, float(np.max(norms)))
        bad = norms > guard
        if np.any(bad):
            if on_divergence == "raise":
                raise DivergenceError(
                    f"propagator norm {float(np.max(norms)):.3g} exceeds guard "
                    f"{guard:.3g} at node ({ev['label'][0]}, {ev['label'][1]})"
                )
            diverged |= bad
    return BatchResult(grid=grid, diverged=diverged, max_norm=max_norm)


def _correlation(bath_or_table, span: float):
    if isinstance(bath_or_table, CorrelationTable):
        return bath_or_table
    return CorrelationTable(bath_or_table, span=span * (1 + 1e-9))


def solve_grid_batch(system: SystemSpec, bath, config: SchemeConfig, n_reps: int,
                     root_seq=None, on_divergence: str = "mask",
                     guard: float = DIVERGENCE_GUARD) -> BatchResult:
    """Solve ``n_reps`` independent replications sharing one grid sweep.

    ``root_seq`` (a ``numpy.random.SeedSequence``) roots the per-event,
    per-stage sample substreams; replication ``r`` within the batch
    consumes row ``r`` of each vectorized draw, so the first replication
    of any batch equals a batch of size one with the same root.
    """
    if root_seq is None:
        root_seq = np.random.SeedSequence(config.seed)
    grid = PropagatorGrid(config.n_steps, config.t_obs, system.o_s,
                          batch_shape=(n_reps,))
    corr = _correlation(bath, 2.0 * grid.t_split)
    return _run_events(grid, system, corr, config, root_seq, on_divergence, guard)


def solve_grid(system: SystemSpec, bath, config: SchemeConfig,
               rng=None, guard: float = DIVERGENCE_GUARD) -> PropagatorGrid:
    """Fill the full propagator grid (single solve; raises on divergence).

    ``rng`` may be a ``SeedSequence`` rooting the sample substreams; by
    default one is derived from ``config.seed``.
    """
    root = rng if isinstance(rng, np.random.SeedSequence) else (
        np.random.SeedSequence(config.seed if rng is None else rng)
    )
    res = solve_grid_batch(system, bath, config, n_reps=1, root_seq=root,
                           on_divergence="raise", guard=guard)
    out = PropagatorGrid(config.n_steps, config.t_obs, system.o_s)
    out.table[...] = res.grid.table[0]
    return out


# --------------------------------------------------------------------
# public slope operations (single grid, explicit generator)


def _window(grid: PropagatorGrid, n_node: GridNode, m_node: GridNode):
    top_ord, col_ord = grid.ordinal(n_node), grid.ordinal(m_node)
    return top_ord, grid.time_of(top_ord), col_ord, grid.time_of(col_ord)


def F1_deterministic(grid: PropagatorGrid, system: SystemSpec, bath,
                     n_node: GridNode, m_node: GridNode, mbar: int = 1):
    """Quadrature slope ``K1`` over ``[t_m, t_n]`` (order M=1 only)."""
    if mbar != 1:
        raise NotImplementedError("deterministic slopes support mbar == 1 only")
    top_ord, top_time, col_ord, col_time = _window(grid, n_node, m_node)
    _require_window(grid, top_ord, col_ord)
    corr = _correlation(bath, max(2.0 * grid.t_split, 1e-9))
    sgn = mesh.sign(n_node, grid.t_split, grid.h)
    out = _det_slope(grid.table[None], corr, system.w_s, top_ord, top_time,
                     col_ord, col_time, grid.h, grid.n, grid.t_split)
    return sgn * out[0]


def F1_mc(grid: PropagatorGrid, system: SystemSpec, bath,
          n_node: GridNode, m_node: GridNode, ns: int, rng,
          mbar: int = 1):
    """Monte Carlo slope ``K1``; unbiased for the quadrature slope."""
    top_ord, top_time, col_ord, col_time = _window(grid, n_node, m_node)
    _require_window(grid, top_ord, col_ord)
    corr = _correlation(bath, max(2.0 * grid.t_split, 1e-9))
    sgn = mesh.sign(n_node, grid.t_split, grid.h)
    out = _mc_slope(grid.table[None], corr, system.w_s, top_ord, top_time,
                    col_ord, col_time, mbar, ns, rng, grid.h, grid.n,
                    grid.t_split)
    return sgn * out[0]


def F2_mc(grid: PropagatorGrid, system: SystemSpec, bath, starred_value,
          n_node: GridNode, m_node: GridNode, ns: int, rng, mbar: int = 1):
    """Monte Carlo slope ``K2`` with the provisional value at ``(n+1, m)``.

    ``n_node`` is the target row ``n+1``; interpolation uses the starred
    interpolant, i.e. the grid with ``starred_value`` at ``(n+1, m)``.
    """
    top_ord, top_time, col_ord, col_time = _window(grid, n_node, m_node)
    corr = _correlation(bath, max(2.0 * grid.t_split, 1e-9))
    sgn = mesh.sign(n_node, grid.t_split, grid.h)
    saved = grid.table[top_ord, col_ord].copy()
    grid.table[top_ord, col_ord] = as_mat2(starred_value)
    try:
        out = _mc_slope(grid.table[None], corr, system.w_s, top_ord, top_time,
                        col_ord, col_time, mbar, ns, rng, grid.h, grid.n,
                        grid.t_split)
    finally:
        grid.table[top_ord, col_ord] = saved
    return sgn * out[0]


def _require_window(grid: PropagatorGrid, top_ord: int, col_ord: int):
    for r in range(col_ord, top_ord + 1):
        for c in range(col_ord, r + 1):
            if np.any(np.isnan(grid.table[..., r, c, :, :])):
                raise mesh.MissingNodeError(
                    f"propagator ({grid.node(r).label()}, "
                    f"{grid.node(c).label()}) not populated"
                )


def inchworm_step(grid: PropagatorGrid, system: SystemSpec, bath,
                  config: SchemeConfig, n_step: int, m_step: int, rng=None):
    """Advance one entry: compute ``G[n+1, m]`` from row ``n`` (writes it).

    ``n_step`` and ``m_step`` are step indices; the discontinuity rules
    resolve the split copies (stepping onto ``t`` produces the ``N-``
    row; stepping across starts from the ``N+`` copy).  In Monte Carlo
    mode ``rng`` supplies fresh draws for the two stages sequentially.
    """
    n, h = grid.n, grid.h
    target = n_step + 1
    corr = _correlation(bath, max(2.0 * grid.t_split, 1e-9))
    plan_row_to = n if target == n else (target if target < n else target + 1)
    plan = dict(
        row_to=plan_row_to,
        row_from=_source_ordinal(target, n),
        col=_col_ordinal(m_step, n),
        sgn_n=-1.0 if target - 1 < n else 1.0,
        sgn_np1=-1.0 if target <= n else 1.0,
    )
    table = grid.table[None]
    h_s, w_s = system.h_s, system.w_s

    def slope(top_ord, top_step, stage_rng):
        args = (table, corr, w_s, top_ord, top_step * h, plan["col"], m_step * h)
        if config.mode == "det":
            return _det_slope(*args, h, n, grid.t_split)[0]
        return _mc_slope(*args, config.mbar, config.ns, stage_rng, h, n,
                         grid.t_split)[0]

    if config.mode == "mc" and rng is None:
        rng = np.random.default_rng(config.seed)
    g_nm = table[0, plan["row_from"], plan["col"]].copy()
    if np.any(np.isnan(g_nm)):
        raise mesh.MissingNodeError("source propagator not populated")
    k1 = slope(plan["row_from"], target - 1, rng)
    drift = 1j * h * (h_s @ g_nm)
    g_star = g_nm + plan["sgn_n"] * drift + h * k1
    table[0, plan["row_to"], plan["col"]] = g_star
    k2 = slope(plan["row_to"], target, rng)
    g_new = (
        g_nm
        + 0.5 * plan["sgn_n"] * drift
        + 0.5 * plan["sgn_np1"] * 1j * h * (h_s @ g_star)
        + 0.5 * h * (k1 + k2)
    )
    table[0, plan["row_to"], plan["col"]] = g_new
    return g_new.copy()


# --------------------------------------------------------------------
# observable and oracle


def observable_trace(grid: PropagatorGrid, j: int):
    """Observable estimate at time ``j*h``: entry ``(1,1)`` of ``G[N+j, N-j]``.

    ``j = 0`` reads the boundary value ``G[N+, N-]``, i.e. the observable
    itself.  (The density-matrix trace convention would read entry
    ``(2,2)`` for ``rho = diag(0, 1)``; the grid formula pins ``(1,1)``.)
    """
    n = grid.n
    if not 0 <= j <= n:
        raise ValueError("observable index must satisfy 0 <= j <= N")
    r = n + 1 if j == 0 else n + j + 1
    c = n if j == 0 else n - j
    v = grid.table[..., r, c, 0, 0]
    if np.any(np.isnan(v)):
        raise mesh.MissingNodeError("observable anti-diagonal not populated")
    return complex(v) if v.ndim == 0 else v


def free_propagator(system: SystemSpec, t_split: float, s_up: float, s_lo: float,
                    side_up: int = 0, side_lo: int = 0):
    """Closed-form propagator of the decoupled system (zero-coupling oracle).

    Below the measurement time the propagator is ``exp(-i H (s_up-s_lo))``,
    above it ``exp(+i H (s_up-s_lo))``, and windows crossing ``t`` insert
    the observable: ``exp(+i H (s_up-t)) O exp(-i H (t-s_lo))``.  For a
    coordinate exactly at ``t`` pass ``side_up``/``side_lo`` as -1 or +1
    to select the one-sided limit.
    """
    h_s, o_s = system.h_s, system.o_s
    up = side_up if s_up == t_split and side_up else (-1 if s_up < t_split else 1)
    lo = side_lo if s_lo == t_split and side_lo else (-1 if s_lo < t_split else 1)
    if up < 0:
        return mat_exp(-1j * (s_up - s_lo) * h_s)
    if lo > 0:
        return mat_exp(1j * (s_up - s_lo) * h_s)
    return mat_exp(1j * (s_up - t_split) * h_s) @ o_s @ mat_exp(
        -1j * (t_split - s_lo) * h_s
    )


def free_propagator_grid(system: SystemSpec, n_steps: int, t_obs: float):
    """Populate a full grid with the zero-coupling closed form."""
    grid = PropagatorGrid(n_steps, t_obs, system.o_s)
    n, h, t = grid.n, grid.h, grid.t_split
    for r in range(grid.n_nodes):
        for c in range(r + 1):
            su = mesh.step_of_ordinal(r, n) * h
            sl = mesh.step_of_ordinal(c, n) * h
            grid.table[r, c] = free_propagator(
                system, t, su, sl,
                side_up=-1 if r == n else (1 if r == n + 1 else 0),
                side_lo=-1 if c == n else (1 if c == n + 1 else 0),
            )
    return grid


def check_jump_identities(grid: PropagatorGrid) -> float:
    """Largest violation of the jump relations over populated entries."""
    n, o_s = grid.n, grid.observable
    worst = 0.0
    for c in range(n):
        a, b = grid.table[..., n + 1, c, :, :], grid.table[..., n, c, :, :]
        if not (np.any(np.isnan(a)) or np.any(np.isnan(b))):
            worst = max(worst, float(np.max(frobenius_norm(a - np.matmul(o_s, b)))))
    for r in range(n + 2, grid.n_nodes):
        a, b = grid.table[..., r, n, :, :], grid.table[..., r, n + 1, :, :]
        if not (np.any(np.isnan(a)) or np.any(np.isnan(b))):
            worst = max(worst, float(np.max(frobenius_norm(a - np.matmul(b, o_s)))))
    return worst
