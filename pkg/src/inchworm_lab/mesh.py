"""Triangular two-time grid with split nodes and piecewise-linear interpolation.

The propagator ``G(s_up, s_lo)`` lives on the triangle
``0 <= s_lo <= s_up <= 2t`` discretized with uniform step ``h = t/N``.
The node at the measurement time ``t`` is kept twice (``N-`` and ``N+``)
because the propagator jumps there: the two copies store the one-sided
limits, related by left/right multiplication with the observable.

Nodes are ordered ``0 < 1 < ... < N-1 < N- < N+ < N+1 < ... < 2N`` and
mapped to array ordinals ``0 .. 2N+1``.  Each unit square of the mesh is
split into two triangles by the diagonal parallel to the ``s_up = s_lo``
line, and interpolation is linear on each triangle.  One-sided limits at
``s = t`` resolve to the ``N-``/``N+`` copies: approaching from below
uses ``N-`` nodes, from above ``N+`` nodes, and a coordinate exactly
equal to ``t`` counts as the lower (``N-``) side.

Propagators are computed anti-diagonal by anti-diagonal (all entries
with ``j - k = i`` before any with ``j - k = i + 1``), which satisfies
the same dependency constraint as the column-by-column sweep: every
entry a step needs lies on a strictly smaller anti-diagonal.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .algebra import IDENTITY, as_mat2


class MissingNodeError(KeyError):
    """A required grid node has not been populated yet."""


class AmbiguousTimeError(ValueError):
    """A plain time equal to the measurement time needs a split node."""


# --------------------------------------------------------------------
# nodes


@dataclass(frozen=True)
class GridNode:
    """A node label on the time axis: ``Regular(j)``, ``N-`` or ``N+``.

    ``j`` is the step index (time ``j*h``); for the split nodes ``j`` is
    the split index ``N`` itself.
    """

    kind: str  # "regular" | "nminus" | "nplus"
    j: int

    @staticmethod
    def regular(j: int) -> "GridNode":
        return GridNode("regular", j)

    @staticmethod
    def nminus(n: int) -> "GridNode":
        return GridNode("nminus", n)

    @staticmethod
    def nplus(n: int) -> "GridNode":
        return GridNode("nplus", n)

    def time(self, h: float) -> float:
        return self.j * h

    def label(self) -> str:
        if self.kind == "nminus":
            return "N-"
        if self.kind == "nplus":
            return "N+"
        return str(self.j)

    def ordinal(self, n_split: int) -> int:
        """Position in the total node order for a grid split at ``n_split``."""
        if self.kind == "nminus":
            return n_split
        if self.kind == "nplus":
            return n_split + 1
        if self.j == n_split:
            raise ValueError(f"step {self.j} is the split index; use N-/N+")
        return self.j if self.j < n_split else self.j + 1


def node_of_ordinal(ordinal: int, n_split: int) -> GridNode:
    if ordinal == n_split:
        return GridNode.nminus(n_split)
    if ordinal == n_split + 1:
        return GridNode.nplus(n_split)
    return GridNode.regular(ordinal if ordinal < n_split else ordinal - 1)


def step_of_ordinal(ordinal: int, n_split: int) -> int:
    """Step index (time / h) of a node ordinal; both split copies give N."""
    return ordinal if ordinal <= n_split else ordinal - 1


def sign(s, t: float, h: float | None = None) -> int:
    """Sign of ``s - t`` with split nodes resolving the discontinuity.

    ``s`` may be a plain time or a :class:`GridNode`.  A plain time
    exactly equal to ``t`` is ambiguous (callers must pass a split node
    there); a regular node needs ``h`` to know its time.
    """
    if isinstance(s, GridNode):
        if s.kind == "nminus":
            return -1
        if s.kind == "nplus":
            return 1
        if h is None:
            raise TypeError("sign of a regular node needs the step length h")
        s = s.time(h)
    if s == t:
        raise AmbiguousTimeError(
            "time equals the measurement time; pass an N-/N+ node instead"
        )
    return -1 if s < t else 1


# --------------------------------------------------------------------
# cell resolution (shared by the reference and vectorized interpolations)


def _cell(s, h: float, n_split: int, t_split: float):
    """Cell index and local coordinate of time(s) ``s``.

    Cell ``a`` spans ``[a*h, (a+1)*h]``; a coordinate exactly at the
    measurement time resolves to the lower cell (``N-`` side).
    Returns integer array ``a`` in ``[0, 2N-1]`` and ``x`` in ``[0, 1]``.
    """
    s = np.asarray(s, dtype=float)
    a = np.clip(np.floor(s / h).astype(np.int64), 0, 2 * n_split - 1)
    at_t = s == t_split
    a = np.where(at_t, n_split - 1, a)
    x = np.clip(s / h - a, 0.0, 1.0)
    x = np.where(at_t, 1.0, x)
    return a, x


def _cell_fast(s, h: float, n_split: int, t_split: float):
    """Like :func:`_cell` for in-domain arrays (no low-side clamping)."""
    si = s * (1.0 / h)
    a = np.minimum(si.astype(np.int64), 2 * n_split - 1)
    at_t = s == t_split
    a = np.where(at_t, n_split - 1, a)
    x = np.where(at_t, 1.0, si - a)
    return a, x


def _lo_ord(a, n_split: int):
    """Ordinal of the node at the lower edge of cell ``a`` (N+ side at t)."""
    return a + (a >= n_split)


def _up_ord(a, n_split: int):
    """Ordinal of the node at the upper edge of cell ``a`` (N- side at t)."""
    return a + 1 + (a >= n_split)


# --------------------------------------------------------------------
# grid


class PropagatorGrid:
    """Dense lower-triangular table of propagators on the split-node mesh.

    The table has shape ``(*batch_shape, 2N+2, 2N+2, 2, 2)`` indexed by
    node ordinals ``[row, col]`` with ``row >= col``; unpopulated entries
    hold NaN.  On construction the diagonal is the identity and the
    ``(N+, N-)`` corner is the observable.
    """

    def __init__(self, n_steps: int, t_obs: float, observable, batch_shape=()):
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        self.n = int(n_steps)
        self.h = t_obs / self.n
        # the discontinuity lives at the node time N*h (== t_obs up to rounding)
        self.t_split = self.n * self.h
        self.observable = as_mat2(observable).copy()
        self.n_nodes = 2 * self.n + 2
        self.batch_shape = tuple(batch_shape)
        self.table = np.full(
            self.batch_shape + (self.n_nodes, self.n_nodes, 2, 2),
            np.nan,
            dtype=complex,
        )
        for v in range(self.n_nodes):
            self.table[..., v, v, :, :] = IDENTITY
        self.table[..., self.n + 1, self.n, :, :] = self.observable

    # -- node helpers -------------------------------------------------

    def ordinal(self, node: GridNode) -> int:
        o = node.ordinal(self.n)
        if not 0 <= o < self.n_nodes:
            raise ValueError(f"node {node.label()} outside grid")
        return o

    def node(self, ordinal: int) -> GridNode:
        return node_of_ordinal(ordinal, self.n)

    def time_of(self, node_or_ordinal) -> float:
        if isinstance(node_or_ordinal, GridNode):
            return node_or_ordinal.time(self.h)
        return step_of_ordinal(int(node_or_ordinal), self.n) * self.h

    def nodes(self):
        return [self.node(o) for o in range(self.n_nodes)]

    # -- values -------------------------------------------------------

    def value(self, row: GridNode, col: GridNode) -> np.ndarray:
        r, c = self.ordinal(row), self.ordinal(col)
        if r < c:
            raise ValueError("row node must not precede column node")
        v = self.table[..., r, c, :, :]
        if np.any(np.isnan(v)):
            raise MissingNodeError(
                f"propagator ({row.label()}, {col.label()}) not populated"
            )
        return v

    def set_value(self, row: GridNode, col: GridNode, value) -> None:
        r, c = self.ordinal(row), self.ordinal(col)
        if r < c:
            raise ValueError("row node must not precede column node")
        self.table[..., r, c, :, :] = as_mat2(value)

    def is_populated(self, row: GridNode, col: GridNode) -> bool:
        r, c = self.ordinal(row), self.ordinal(col)
        return not np.any(np.isnan(self.table[..., r, c, :, :]))

    # -- serialization ------------------------------------------------

    def to_csv(self, path) -> None:
        """Dump populated entries as ``j,k,re11,im11,re21,im21,re12,im12,re22,im22``."""
        if self.batch_shape:
            raise ValueError("CSV dump supports unbatched grids only")
        with open(path, "w") as fh:
            fh.write(f"# n_steps={self.n} t_obs={self.t_split!r}\n")
            fh.write("j,k,re11,im11,re21,im21,re12,im12,re22,im22\n")
            for r in range(self.n_nodes):
                for c in range(r + 1):
                    v = self.table[r, c]
                    if np.any(np.isnan(v)):
                        continue
                    comps = [v[0, 0], v[1, 0], v[0, 1], v[1, 1]]
                    nums = ",".join(f"{z.real!r},{z.imag!r}" for z in comps)
                    fh.write(f"{self.node(r).label()},{self.node(c).label()},{nums}\n")

    @staticmethod
    def from_csv(path, observable) -> "PropagatorGrid":
        with open(path) as fh:
            header = fh.readline()
            fields = dict(item.split("=") for item in header[1:].split())
            n, t_obs = int(fields["n_steps"]), float(fields["t_obs"])
            grid = PropagatorGrid(n, t_obs, observable)
            fh.readline()  # column names
            for line in fh:
                parts = line.strip().split(",")
                row, col = (_node_of_label(p, n) for p in parts[:2])
                x = [float(p) for p in parts[2:]]
                mat = np.array(
                    [[x[0] + 1j * x[1], x[4] + 1j * x[5]],
                     [x[2] + 1j * x[3], x[6] + 1j * x[7]]]
                )
                grid.set_value(row, col, mat)
        return grid


def _node_of_label(label: str, n_split: int) -> GridNode:
    if label == "N-":
        return GridNode.nminus(n_split)
    if label == "N+":
        return GridNode.nplus(n_split)
    return GridNode.regular(int(label))


# --------------------------------------------------------------------
# computation order

GridEvent = namedtuple("GridEvent", ["op", "row", "col"])
"""One unit of work while filling the grid.

``op`` is ``"step"`` (Heun update producing ``(row, col)``),
``"jump_row"`` (set ``G[N+, col] = O_s G[N-, col]``) or
``"jump_col"`` (set ``G[row, N-] = G[row, N+] O_s``).
"""


def computation_order(n_steps: int):
    """Events that fill the grid, every dependency before its dependent.

    Anti-diagonal ``i`` holds the entries with row/column step difference
    ``i``; a step on anti-diagonal ``i`` depends only on entries with
    smaller differences plus, through the jump rules, on entries of the
    same diagonal emitted earlier (steps before fills).
    """
    n = int(n_steps)
    events = []
    for i in range(1, 2 * n + 1):
        for m in range(0, 2 * n - i + 1):
            row_step = m + i
            row = GridNode.nminus(n) if row_step == n else GridNode.regular(row_step)
            col = GridNode.nplus(n) if m == n else GridNode.regular(m)
            events.append(GridEvent("step", row, col))
        if i <= n:
            events.append(
                GridEvent("jump_row", GridNode.nplus(n), GridNode.regular(n - i))
            )
            events.append(
                GridEvent("jump_col", GridNode.regular(n + i), GridNode.nminus(n))
            )
    return events


# --------------------------------------------------------------------
# interpolation


@dataclass(frozen=True)
class InterpKind:
    """Interpolation flavor: standard, or starred with one pending value.

    The starred interpolant agrees with the standard one everywhere
    except at a single node, where it takes the provisional value of the
    predictor stage.
    """

    pending_row: GridNode | None = None
    pending_col: GridNode | None = None
    pending_value: np.ndarray | None = None

    @staticmethod
    def standard() -> "InterpKind":
        return InterpKind()

    @staticmethod
    def starred(row: GridNode, col: GridNode, value) -> "InterpKind":
        return InterpKind(row, col, as_mat2(value).copy())


def interpolate(grid: PropagatorGrid, kind: InterpKind, s_up: float, s_lo: float):
    """Piecewise-linear interpolation of the propagator at ``(s_up, s_lo)``.

    Reference (scalar) implementation.  Nodal queries reproduce the
    stored values exactly; the square containing the query is split
    along the direction parallel to the main diagonal and the value is
    the linear interpolant on the matching triangle.  Coordinates equal
    to the measurement time resolve to the lower (``N-``) side.
    """
    if not 0.0 <= s_lo <= s_up <= 2 * grid.t_split + 1e-12:
        raise ValueError("query outside the triangular domain")
    n, h, t = grid.n, grid.h, grid.t_split

    def node_value(r_ord, c_ord):
        v = grid.table[..., r_ord, c_ord, :, :]
        if (
            kind.pending_value is not None
            and r_ord == grid.ordinal(kind.pending_row)
            and c_ord == grid.ordinal(kind.pending_col)
        ):
            return kind.pending_value
        if np.any(np.isnan(v)):
            raise MissingNodeError(
                f"propagator ({grid.node(r_ord).label()}, "
                f"{grid.node(c_ord).label()}) not populated"
            )
        return v

    a, x = _cell(s_up, h, n, t)
    b, y = _cell(s_lo, h, n, t)
    a, b, x, y = int(a), int(b), float(x), float(y)
    r0, r1 = _lo_ord(a, n), _up_ord(a, n)
    c0, c1 = _lo_ord(b, n), _up_ord(b, n)
    g00 = node_value(r0, c0)
    g10 = node_value(r1, c0)
    g11 = node_value(r1, c1)
    if y <= x:  # triangle on the s_up-major side
        return g00 + x * (g10 - g00) + y * (g11 - g10)
    g01 = node_value(r0, c1)
    return g00 + y * (g01 - g00) + x * (g11 - g01)


# -- vectorized kernels (used by the Monte Carlo solver) --------------


def line_row(table, row_ord: int, s, h: float, n_split: int, t_split: float):
    """``I_h G(t_row, s)`` along a fixed row for arrays of column times.

    ``table`` has shape ``(R, nn, nn, 2, 2)`` and ``s`` shape ``(R, ...)``;
    returns shape ``(R, ..., 2, 2)``.  On a grid row the triangulated
    interpolant is linear between adjacent column nodes.
    """
    b, y = _cell_fast(s, h, n_split, t_split)
    c0, c1 = _lo_ord(b, n_split), _up_ord(b, n_split)
    rr = np.arange(table.shape[0]).reshape((-1,) + (1,) * (s.ndim - 1))
    g0 = table[rr, row_ord, c0]
    g1 = table[rr, row_ord, c1]
    w = y[..., None, None]
    return (1.0 - w) * g0 + w * g1


def line_col(table, col_ord: int, s, h: float, n_split: int, t_split: float):
    """``I_h G(s, t_col)`` along a fixed column for arrays of row times."""
    a, x = _cell_fast(s, h, n_split, t_split)
    r0, r1 = _lo_ord(a, n_split), _up_ord(a, n_split)
    rr = np.arange(table.shape[0]).reshape((-1,) + (1,) * (s.ndim - 1))
    g0 = table[rr, r0, col_ord]
    g1 = table[rr, r1, col_ord]
    w = x[..., None, None]
    return (1.0 - w) * g0 + w * g1


def interp2d(table, s_up, s_lo, h: float, n_split: int, t_split: float):
    """``I_h G(s_up, s_lo)`` for arrays of interior two-time queries."""
    a, x = _cell_fast(s_up, h, n_split, t_split)
    b, y = _cell_fast(s_lo, h, n_split, t_split)
    r0, r1 = _lo_ord(a, n_split), _up_ord(a, n_split)
    c0, c1 = _lo_ord(b, n_split), _up_ord(b, n_split)
    rr = np.arange(table.shape[0]).reshape((-1,) + (1,) * (s_up.ndim - 1))
    g00 = table[rr, r0, c0]
    g10 = table[rr, r1, c0]
    g11 = table[rr, r1, c1]
    # the upper-minor corner is invalid on diagonal cells; it is only
    # gathered where the query lies in the upper triangle (y > x), which
    # cannot happen there since s_lo <= s_up
    c1s = np.minimum(c1, r0)
    g01 = table[rr, r0, c1s]
    xx, yy = x[..., None, None], y[..., None, None]
    lower = g00 + xx * (g10 - g00) + yy * (g11 - g10)
    upper = g00 + yy * (g01 - g00) + xx * (g11 - g01)
    return np.where((y <= x)[..., None, None], lower, upper)
