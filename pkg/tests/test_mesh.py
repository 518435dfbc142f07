import numpy as np
import pytest

from inchworm_lab import mesh
from inchworm_lab.algebra import IDENTITY, SIGMA_Z
from inchworm_lab.mesh import GridNode, InterpKind, PropagatorGrid


def make_grid(n=4, t=1.0, fill=None):
    grid = PropagatorGrid(n, t, SIGMA_Z)
    if fill is not None:
        for r in range(grid.n_nodes):
            for c in range(r + 1):
                grid.table[r, c] = fill(grid, r, c)
    return grid


# --------------------------------------------------------------------
# nodes and ordering


def test_node_times_and_order():
    n, h = 4, 0.25
    nodes = [GridNode.regular(1), GridNode.nminus(n), GridNode.nplus(n),
             GridNode.regular(7)]
    assert [v.time(h) for v in nodes] == [0.25, 1.0, 1.0, 1.75]
    ords = [v.ordinal(n) for v in nodes]
    assert ords == sorted(ords) == [1, 4, 5, 8]


def test_regular_node_at_split_rejected():
    with pytest.raises(ValueError):
        GridNode.regular(4).ordinal(4)


def test_sign_rules():
    t = 1.0
    assert mesh.sign(GridNode.nminus(4), t) == -1
    assert mesh.sign(GridNode.nplus(4), t) == +1
    assert mesh.sign(0.3 * t, t) == -1
    assert mesh.sign(1.7, t) == +1
    with pytest.raises(mesh.AmbiguousTimeError):
        mesh.sign(t, t)
    assert mesh.sign(GridNode.regular(2), t, h=0.25) == -1


def test_grid_boundary_values():
    grid = make_grid()
    for v in grid.nodes():
        assert np.array_equal(grid.value(v, v), IDENTITY)
    assert np.array_equal(
        grid.value(GridNode.nplus(4), GridNode.nminus(4)), SIGMA_Z
    )


def test_value_errors():
    grid = make_grid()
    with pytest.raises(mesh.MissingNodeError):
        grid.value(GridNode.regular(2), GridNode.regular(0))
    with pytest.raises(ValueError):
        grid.value(GridNode.regular(0), GridNode.regular(2))


# --------------------------------------------------------------------
# computation order


def _dependencies(ev, n):
    """Node-ordinal pairs that must be populated before the event runs.

    A step over the window ``[lo, hi]`` (step indices) needs every grid
    pair inside the window; at the split index the window determines
    which copies it can touch (minus side for windows ending at ``t``,
    plus side for windows starting there, both for crossing windows).
    """
    if ev.op == "step":
        hi = ev.row.j  # target step index
        lo = ev.col.j
        deps = set()
        for j_step in range(lo, hi + 1):
            for k_step in range(lo, j_step + 1):
                for r in _ords(j_step, n, lo, hi):
                    for c in _ords(k_step, n, lo, hi):
                        if r >= c:
                            deps.add((r, c))
        deps.discard((_target_ord(ev, n), ev.col.ordinal(n)))
        return deps
    if ev.op == "jump_row":
        return {(n, ev.col.ordinal(n))}
    return {(ev.row.ordinal(n), n + 1)}


def _ords(step, n, lo, hi):
    if step != n:
        return (GridNode.regular(step).ordinal(n),)
    if hi <= n:
        return (n,)  # window ends at t: minus copy only
    if lo >= n:
        return (n + 1,)  # window starts at t: plus copy only
    return (n, n + 1)  # crossing window touches both copies


def _target_ord(ev, n):
    if ev.op == "step":
        return n if ev.row.kind == "nminus" else ev.row.ordinal(n)
    if ev.op == "jump_row":
        return n + 1
    return ev.row.ordinal(n)


def _target(ev, n):
    if ev.op == "jump_col":
        return (_target_ord(ev, n), n)
    return (_target_ord(ev, n), ev.col.ordinal(n))


@pytest.mark.parametrize("n", range(1, 9))
def test_order_covers_every_entry_once(n):
    events = mesh.computation_order(n)
    targets = [_target(ev, n) for ev in events]
    assert len(targets) == len(set(targets))
    expected = set()
    for r in range(2 * n + 2):
        for c in range(r):
            if not (r == n + 1 and c == n):  # (N+, N-) is a boundary value
                expected.add((r, c))
    assert set(targets) == expected


@pytest.mark.parametrize("n", range(1, 9))
def test_order_respects_dependencies(n):
    done = set()
    for r in range(2 * n + 2):  # diagonal + observable corner preset
        done.add((r, r))
    done.add((n + 1, n))
    for ev in mesh.computation_order(n):
        missing = _dependencies(ev, n) - done
        assert not missing, f"event {ev} missing {sorted(missing)[:4]}"
        done.add(_target(ev, n))


def test_order_n1_structure():
    labels = [(ev.op, ev.row.label(), ev.col.label())
              for ev in mesh.computation_order(1)]
    assert labels == [
        ("step", "N-", "0"),
        ("step", "2", "N+"),
        ("jump_row", "N+", "0"),
        ("jump_col", "2", "N-"),
        ("step", "2", "0"),
    ]


def test_order_node_count_n5():
    # 55 regular pairs plus 5 + 5 split copies
    events = mesh.computation_order(5)
    assert len(events) == 65


# --------------------------------------------------------------------
# interpolation


def test_interpolation_reproduces_nodes():
    rng = np.random.default_rng(8)
    grid = make_grid(fill=lambda g, r, c: rng.standard_normal((2, 2))
                     + 1j * rng.standard_normal((2, 2)))
    kind = InterpKind.standard()
    for r in range(grid.n_nodes):
        for c in range(r + 1):
            su = grid.time_of(r)
            sl = grid.time_of(c)
            if su == grid.t_split or sl == grid.t_split:
                continue  # one-sided limits tested separately
            got = mesh.interpolate(grid, kind, su, sl)
            assert np.allclose(got, grid.table[r, c], atol=1e-14)


def test_interpolation_one_sided_limits():
    rng = np.random.default_rng(9)
    grid = make_grid(fill=lambda g, r, c: rng.standard_normal((2, 2)) + 0j)
    kind = InterpKind.standard()
    t, eps = grid.t_split, 1e-12
    # limits onto the split column resolve to N-/N+ copies
    above = mesh.interpolate(grid, kind, 1.5, t + eps)
    below = mesh.interpolate(grid, kind, 1.5, t - eps)
    r = grid.ordinal(GridNode.regular(6))  # node time 1.5
    assert np.allclose(above, grid.table[r, grid.n + 1], atol=1e-9)
    assert np.allclose(below, grid.table[r, grid.n], atol=1e-9)
    # a coordinate exactly at t counts as the minus side
    exact = mesh.interpolate(grid, kind, 1.5, t)
    assert np.allclose(exact, grid.table[r, grid.n], atol=1e-12)
    # the double limit from opposite sides is the observable corner
    corner = mesh.interpolate(grid, kind, t + eps, t - eps)
    assert np.allclose(corner, grid.table[grid.n + 1, grid.n], atol=1e-9)


def test_interpolation_linear_exactness():
    """A globally affine function is reproduced exactly on each triangle."""
    def affine(g, r, c):
        su, sl = g.time_of(r), g.time_of(c)
        base = 0.3 + 0.7 * su - 1.1 * sl
        return base * np.array([[1.0, 2.0], [3.0, 4.0]], dtype=complex)

    grid = make_grid(fill=affine)
    kind = InterpKind.standard()
    rng = np.random.default_rng(10)
    for _ in range(100):
        sl = rng.uniform(0.0, 2.0)
        su = rng.uniform(sl, 2.0)
        got = mesh.interpolate(grid, kind, su, sl)
        want = (0.3 + 0.7 * su - 1.1 * sl) * np.array([[1, 2], [3, 4.0]])
        assert np.allclose(got, want, atol=1e-12)


def test_interpolation_convex_bound():
    rng = np.random.default_rng(11)
    grid = make_grid(fill=lambda g, r, c: rng.standard_normal((2, 2)) + 0j)
    kind = InterpKind.standard()
    max_node = max(
        np.linalg.norm(grid.table[r, c])
        for r in range(grid.n_nodes) for c in range(r + 1)
    )
    for _ in range(200):
        sl = rng.uniform(0.0, 2.0)
        su = rng.uniform(sl, 2.0)
        v = mesh.interpolate(grid, kind, su, sl)
        assert np.linalg.norm(v) <= max_node + 1e-12


def test_interpolation_missing_node_named():
    grid = make_grid()  # only diagonal populated
    with pytest.raises(mesh.MissingNodeError, match=r"\(1, 0\)"):
        mesh.interpolate(grid, InterpKind.standard(), 0.2, 0.05)


def test_starred_interpolation_differs_only_at_pending_node():
    rng = np.random.default_rng(12)
    grid = make_grid(fill=lambda g, r, c: rng.standard_normal((2, 2)) + 0j)
    row, col = GridNode.regular(3), GridNode.regular(1)
    pending = np.full((2, 2), 9.0 + 0j)
    starred = InterpKind.starred(row, col, pending)
    std = InterpKind.standard()
    # at the pending node the starred interpolant returns the override
    got = mesh.interpolate(grid, starred, row.time(grid.h), col.time(grid.h))
    assert np.allclose(got, pending)
    # far from the pending node both interpolants agree
    assert np.allclose(
        mesh.interpolate(grid, starred, 0.6, 0.1),
        mesh.interpolate(grid, std, 0.6, 0.1),
    )


def test_vectorized_kernels_match_reference():
    rng = np.random.default_rng(13)
    grid = make_grid(fill=lambda g, r, c: rng.standard_normal((2, 2))
                     + 1j * rng.standard_normal((2, 2)))
    kind = InterpKind.standard()
    table = grid.table[None]
    n, h, t = grid.n, grid.h, grid.t_split
    ss = rng.uniform(0.0, 2.0, size=(1, 64))
    ss2 = ss * rng.uniform(0.0, 1.0, size=ss.shape)  # lower coordinates
    row_ord, col_ord = 7, 1
    vr = mesh.line_row(table, row_ord, ss2, h, n, t)
    vc = mesh.line_col(table, col_ord, np.maximum(ss, grid.time_of(col_ord)), h, n, t)
    v2 = mesh.interp2d(table, ss, ss2, h, n, t)
    for i in range(ss.shape[1]):
        assert np.allclose(
            vr[0, i], mesh.interpolate(grid, kind, grid.time_of(row_ord), ss2[0, i]),
            atol=1e-13)
        su = max(ss[0, i], grid.time_of(col_ord))
        assert np.allclose(
            vc[0, i], mesh.interpolate(grid, kind, su, grid.time_of(col_ord)),
            atol=1e-13)
        assert np.allclose(
            v2[0, i], mesh.interpolate(grid, kind, ss[0, i], ss2[0, i]), atol=1e-13)


# --------------------------------------------------------------------
# serialization


def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(14)
    grid = make_grid(n=3, fill=lambda g, r, c: rng.standard_normal((2, 2))
                     + 1j * rng.standard_normal((2, 2)))
    path = tmp_path / "grid.csv"
    grid.to_csv(path)
    back = PropagatorGrid.from_csv(path, SIGMA_Z)
    assert back.n == grid.n
    assert np.array_equal(back.table, grid.table)
    text = path.read_text()
    assert "N-" in text and "N+" in text
