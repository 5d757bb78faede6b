"""Sound one-step reachability for the taxiing closed loop.

The continuous loop is ``dx/dt = f(x, phi)`` with ``phi`` ranging over the
cell's affine model ``A x + b + U`` (clamped at the steering limit).  The
zero-order-hold variant holds an interval ``phi`` constant for one period.
Both run the preconditioned interval integrator in :mod:`ctreach._core`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._core import DIVERGED, EXITED, kernels
from .abstraction import LinearAbstraction, Partition
from .controller import DEG
from .geom import Box, DomainError, Interval, interval_add, interval_mul
from .plant import PlantParams

DEFAULT_SUBSTEPS = 64
MAX_PICARD = 20
# guards the degree-to-radian conversion of the model coefficients
CONVERSION_PAD = 1e-12

_UNBOUNDED = np.array([-np.inf, np.inf, -np.inf, np.inf])


class EnclosureDiverged(RuntimeError):
    """A-priori enclosure did not settle; the step is too coarse."""


@dataclass
class Flowpipe:
    times: np.ndarray  # (n, 2) substep time intervals
    boxes: np.ndarray  # (n, 4) p_lo, p_hi, theta_lo, theta_hi over each substep
    final: np.ndarray | None  # (4,) enclosure at the horizon, None if incomplete
    horizon: float

    def __len__(self):
        return len(self.boxes)

    def box(self, k: int) -> Box:
        r = self.boxes[k]
        return Box.from_bounds([(r[0], r[1]), (r[2], r[3])])

    def final_box(self) -> Box | None:
        if self.final is None:
            return None
        r = self.final
        return Box.from_bounds([(r[0], r[1]), (r[2], r[3])])

    def covering(self, t: float) -> list[int]:
        """Indices of substeps whose time interval contains ``t``."""
        return np.flatnonzero((self.times[:, 0] <= t) & (t <= self.times[:, 1])).tolist()

    def concat(self, other: Flowpipe) -> Flowpipe:
        t0 = self.times[-1, 1] if len(self) else 0.0
        return Flowpipe(
            np.vstack([self.times, other.times + t0]),
            np.vstack([self.boxes, other.boxes]),
            other.final,
            self.horizon + other.horizon,
        )


@dataclass
class ReachResult:
    final_cells: set[int]
    intermediate_cells: set[int]
    flowpipe: Flowpipe
    exited_gamma: bool
    diverged: bool = False

    @property
    def ok(self) -> bool:
        return not (self.exited_gamma or self.diverged)


def _flat(box: Box) -> np.ndarray:
    return np.array([box[0].lo, box[0].hi, box[1].lo, box[1].hi], dtype=np.float64)


def _run(box0: np.ndarray, kp, kth, c, W: Interval, params: PlantParams, gamma: np.ndarray,
         horizon: float, n_sub: int, max_picard: int):
    steps, final, status, n_done = kernels.reach_kernel(
        box0, kp, kth, c, W.lo, W.hi, params.v, params.L, params.phi_limit,
        gamma, horizon, n_sub, max_picard,
    )
    h = horizon / n_sub
    k = np.arange(n_done)
    times = np.stack([k * h, (k + 1) * h], axis=1)
    fp = Flowpipe(times, np.asarray(steps)[:n_done].copy(), np.asarray(final).copy() if status == 0 else None, horizon)
    return fp, status


def model_in_radians(la: LinearAbstraction) -> tuple[float, float, float, Interval]:
    """``phi[rad] = kp p + kth theta[rad] + c + w`` with ``w`` in the returned interval."""
    kp = float(la.A_mat[0]) / DEG
    kth = float(la.A_mat[1])
    c = la.b / DEG
    W = Interval(la.U.lo / DEG - CONVERSION_PAD, la.U.hi / DEG + CONVERSION_PAD)
    return kp, kth, c, W


def reach_continuous(la: LinearAbstraction, start: Box, params: PlantParams | None = None,
                     horizon: float = 1.0, n_substeps: int = DEFAULT_SUBSTEPS,
                     part: Partition | None = None, max_picard: int = MAX_PICARD,
                     raise_on_diverge: bool = True) -> ReachResult:
    """Flowpipe of the continuously actuated loop under the affine model.

    Integration stops at the first substep whose enclosure leaves
    ``la.gamma``; ``exited_gamma`` is set and the flowpipe is truncated.
    While inside, intersecting with ``gamma`` would be a no-op.
    """
    params = params or PlantParams()
    if not all(g.contains(s) for g, s in zip(la.gamma, start)):
        raise ValueError("start box must lie inside gamma")
    kp, kth, c, W = model_in_radians(la)
    fp, status = _run(_flat(start), kp, kth, c, W, params, _flat(la.gamma), horizon, n_substeps, max_picard)
    if status == DIVERGED and raise_on_diverge:
        raise EnclosureDiverged(f"a-priori enclosure failed after {len(fp)} of {n_substeps} substeps")
    return _result(fp, status, part)


def reach_zoh(phi_range: Interval, start: Box, params: PlantParams | None = None, hold: float = 1.0,
              n_substeps: int = DEFAULT_SUBSTEPS, part: Partition | None = None,
              gamma: Box | None = None, max_picard: int = MAX_PICARD,
              raise_on_diverge: bool = True) -> ReachResult:
    """Flowpipe with the steering held anywhere in ``phi_range`` (rad) for ``hold`` s."""
    params = params or PlantParams()
    lim = math.pi / 2 - params.tan_guard
    if phi_range.lo <= -lim or phi_range.hi >= lim:
        raise DomainError(f"phi_range {phi_range} outside the tan guard")
    g = _UNBOUNDED if gamma is None else _flat(gamma)
    fp, status = _run(_flat(start), 0.0, 0.0, 0.0, phi_range, params, g, hold, n_substeps, max_picard)
    if status == DIVERGED and raise_on_diverge:
        raise EnclosureDiverged(f"a-priori enclosure failed after {len(fp)} of {n_substeps} substeps")
    return _result(fp, status, part)


def _result(fp: Flowpipe, status: int, part: Partition | None) -> ReachResult:
    if part is not None:
        fin, inter = cells_touched(fp, part)
    else:
        fin, inter = set(), set()
    return ReachResult(fin, inter, fp, exited_gamma=status == EXITED, diverged=status == DIVERGED)


def phi_bounds(la: LinearAbstraction, box: Box, params: PlantParams) -> Interval:
    """Steering range (rad) the model allows over ``box``, after saturation."""
    kp, kth, c, W = model_in_radians(la)
    phi = interval_add(
        interval_add(interval_mul(Interval.point(kp), box[0]), interval_mul(Interval.point(kth), box[1])),
        interval_add(Interval.point(c), W),
    )
    lim = params.phi_limit
    return Interval(min(max(phi.lo, -lim), lim), min(max(phi.hi, -lim), lim))


def reach_fixed(la: LinearAbstraction, start: Box, part: Partition, frequency: float,
                params: PlantParams | None = None, horizon: float = 1.0,
                n_substeps: int = DEFAULT_SUBSTEPS, snap: bool = True,
                max_picard: int = MAX_PICARD) -> ReachResult:
    """Chain ``ceil(horizon * frequency)`` zero-order holds over one horizon.

    Before each hold the current enclosure is (with ``snap``) replaced by the
    cells it touches, as a cell-based fixed-frequency analysis would, and the
    steering range is recomputed over that set.  Every set must stay inside
    ``gamma`` where the model is valid; otherwise ``exited_gamma`` is set.
    """
    params = params or PlantParams()
    if frequency <= 0:
        raise ValueError("frequency must be positive")
    n_holds = max(1, math.ceil(horizon * frequency - 1e-9))
    period = 1.0 / frequency
    gamma = _flat(la.gamma)
    box = start
    fp = Flowpipe(np.empty((0, 2)), np.empty((0, 4)), None, 0.0)
    t = 0.0
    for k in range(n_holds):
        hold = min(period, horizon - t) if k < n_holds - 1 else horizon - t
        if snap:
            box = part.snap(box)
            if not _inside(gamma, box):
                return _result(fp, EXITED, part)
        phi = phi_bounds(la, box, params)
        n_sub = max(1, math.ceil(n_substeps * hold / horizon - 1e-9))
        seg, status = _run(_flat(box), 0.0, 0.0, 0.0, phi, params, gamma, hold, n_sub, max_picard)
        fp = fp.concat(seg) if len(fp) else seg
        if status != 0:
            return _result(fp, status, part)
        box = seg.final_box()
        t += hold
    fp.horizon = horizon
    return _result(fp, 0, part)


def _inside(gamma: np.ndarray, box: Box) -> bool:
    return gamma[0] <= box[0].lo and box[0].hi <= gamma[1] and gamma[2] <= box[1].lo and box[1].hi <= gamma[3]


def cells_touched(fp: Flowpipe, part: Partition) -> tuple[set[int], set[int]]:
    """Cells met by the final enclosure and by any substep enclosure.

    Uses :meth:`Partition.cells_in_box`, so grid lines have measure zero and
    leaving the domain contributes :data:`OOD`.
    """
    inter = part.cells_in_boxes(fp.boxes)
    fin: set[int] = set()
    if fp.final is not None:
        fin = part.cells_in_boxes(fp.final)
        inter |= fin
    return fin, inter


def save_flowpipe_csv(fp: Flowpipe, path) -> None:
    """Columns: time_lo, time_hi, p_lo, p_hi, theta_lo, theta_hi (SI units)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_lo", "time_hi", "p_lo", "p_hi", "theta_lo", "theta_hi"])
        for t, b in zip(fp.times, fp.boxes):
            w.writerow([repr(float(x)) for x in (*t, *b)])


def load_flowpipe_csv(path) -> Flowpipe:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Flowpipe(rows[:, :2], rows[:, 2:], rows[-1, 2:].copy() if len(rows) else None,
                    float(rows[-1, 1]) if len(rows) else 0.0)
