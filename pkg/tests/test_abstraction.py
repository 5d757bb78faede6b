import math

import numpy as np
import pytest

from ctreach.abstraction import (
    OOD, STREAM_AUDIT, CellId, LinearizeConfig, Partition, _sample_control, cell_rng,
    fit_affine, linearize, reaudit, widen_uncertainty, witness,
)
from ctreach.controller import DEG
from ctreach.geom import Box, Interval, box_bloat, box_contains


def test_cell_of_examples():
    part = Partition()
    assert part.cell_of((-10.0, math.radians(-30))) == CellId(0, 0).flat(part) == 0
    assert part.widths[0] == pytest.approx(20 / 128) == pytest.approx(0.15625)
    assert part.cell_of((10.5, 0.0)) == OOD
    assert part.cell_of((0.0, math.radians(31))) == OOD
    assert part.cell_of((float("nan"), 0.0)) == OOD


def test_cell_of_bin_edges():
    part = Partition(bins=(4, 4))
    top = part.domain.hi
    assert part.unravel(part.cell_of(tuple(top))) == CellId(3, 3)
    # lower-closed bins: the grid line p = -5 starts bin 1
    assert part.unravel(part.cell_of((-5.0, 0.0))).i_p == 1
    assert part.unravel(part.cell_of((np.nextafter(-5.0, -10), 0.0))).i_p == 0


def test_ravel_round_trip():
    part = Partition(bins=(5, 7))
    for c in range(part.n_cells):
        cid = part.unravel(c)
        assert cid.flat(part) == c
        assert part.cell_of(tuple(part.cell_box(c).center)) == c
    with pytest.raises(IndexError):
        part.unravel(35)


def test_cell_boxes_tile_domain():
    part = Partition(bins=(6, 3))
    area = sum(np.prod(part.cell_box(c).widths) for c in range(part.n_cells))
    assert area == pytest.approx(np.prod(part.domain.widths))
    assert part.cell_box(part.n_cells - 1).hi.tolist() == part.domain.hi.tolist()


def test_cells_in_box_boundaries():
    part = Partition(bins=(4, 4))
    c = part.ravel(1, 1)
    assert part.cells_in_box(part.cell_box(c)) == {c}
    b = part.cell_box(c)
    span = Box.from_bounds([(b[0].lo, b[0].hi + 0.1), (b[1].lo, b[1].hi)])
    assert part.cells_in_box(span) == {c, part.ravel(2, 1)}
    assert OOD in part.cells_in_box(Box.from_bounds([(9.0, 11.0), (0, 0.1)]))
    assert part.cells_in_box(Box.from_bounds([(11.0, 12.0), (0, 0.1)])) == {OOD}


def test_cells_in_boxes_matches_scalar(rng):
    part = Partition(bins=(16, 16))
    rows = []
    for _ in range(200):
        c = rng.uniform([-11, -0.6], [11, 0.6])
        w = rng.uniform(0, 2, 2) * [1, 0.1]
        rows.append([c[0] - w[0], c[0] + w[0], c[1] - w[1], c[1] + w[1]])
    rows = np.array(rows)
    expect = set()
    for r in rows:
        expect |= part.cells_in_box(Box.from_bounds([(r[0], r[1]), (r[2], r[3])]))
    assert part.cells_in_boxes(rows) == expect


def test_snap_covers_and_aligns(rng):
    part = Partition(bins=(16, 16))
    for _ in range(50):
        c = rng.uniform([-8, -0.4], [8, 0.4])
        box = Box.from_bounds([(c[0] - 0.3, c[0] + 0.2), (c[1] - 0.01, c[1] + 0.05)])
        s = part.snap(box)
        assert box_contains(s, box)
        assert part.cells_in_box(s) == part.cells_in_box(box)


def test_fit_affine_exact_and_degenerate(rng):
    X = rng.uniform(-1, 1, size=(100, 2))
    A, b, deg = fit_affine(X, 2 * X[:, 0] - 3 * X[:, 1] + 0.5)
    assert np.allclose(A, [2, -3], atol=1e-12) and b == pytest.approx(0.5) and not deg
    Xd = np.column_stack([X[:, 0], np.full(100, 0.3)])
    A, b, deg = fit_affine(Xd, 2 * Xd[:, 0])
    assert deg and A[1] == 0.0 and A[0] == pytest.approx(2)


def test_widen_uncertainty():
    U = widen_uncertainty(Interval(-0.2, 0.4), 0.1, 0.01)
    assert U.lo == pytest.approx(-0.2 - 0.03 - 0.01) and U.hi == pytest.approx(0.4 + 0.03 + 0.01)


def test_linearize_analytic_is_exact(analytic):
    part = Partition(bins=(16, 16))
    for cell in (0, 37, 136, 255):
        la = linearize(analytic, part, cell, 0.1)
        assert np.allclose(la.A_mat, [-0.74, -0.44], atol=1e-6)
        assert abs(la.b) < 1e-6
        assert la.U_raw.rad / DEG < 1e-3
        assert la.U.lo <= 0 <= la.U.hi


def test_gamma_is_bloated_hull(surrogate):
    part = Partition(bins=(16, 16))
    cfg = LinearizeConfig(n_start=16)
    wit = witness(surrogate, part, 120, cfg)
    la = linearize(surrogate, part, 120, 0.1, cfg, wit=wit)
    assert np.allclose(la.gamma.widths, 1.1 * wit.hull.widths)
    assert box_contains(la.gamma, part.cell_box(120))
    assert la.gamma == box_bloat(wit.hull, 0.1)


def test_u_raw_is_audit_extremes(surrogate):
    part = Partition(bins=(32, 32))
    cfg = LinearizeConfig()
    cell = part.cell_of((0.01, 0.001))
    la = linearize(surrogate, part, cell, 0.1, cfg)
    extra = np.vstack([la.gamma.corners(), la.gamma.center[None, :]])
    Xa, ya = _sample_control(surrogate, la.gamma, cell_rng(cfg.seed, cell, STREAM_AUDIT), cfg.n_audit, extra)
    r = ya - la.predict(Xa)
    assert la.U_raw.lo == min(r.min(), 0.0) and la.U_raw.hi == max(r.max(), 0.0)
    assert np.all((r >= la.U.lo) & (r <= la.U.hi))
    assert reaudit(surrogate, la, cell, n=4096) == 0


def test_linearize_deterministic(surrogate):
    part = Partition(bins=(16, 16))
    a = linearize(surrogate, part, 77, 0.2)
    b = linearize(surrogate, part, 77, 0.2)
    assert np.array_equal(a.A_mat, b.A_mat) and a.U == b.U and a.gamma == b.gamma


def test_linearize_config_validation(analytic):
    with pytest.raises(ValueError):
        LinearizeConfig(n_start=3)
    with pytest.raises(ValueError):
        LinearizeConfig(margin=-1)
    with pytest.raises(ValueError):
        linearize(analytic, Partition(bins=(4, 4)), 0, -0.1)


@pytest.mark.parametrize("bins", [(128, 128), (64, 64), (7, 13)])
def test_cell_box_indexes_to_itself(bins):
    part = Partition(bins=bins)
    for c in range(part.n_cells):
        b = part.cell_box(c)
        assert part.cells_in_box(b) == {c}
        assert part.cell_of(tuple(b.lo)) == c
        assert part.snap(b) == b
