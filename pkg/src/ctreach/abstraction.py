"""State-space partition and per-cell linear controller models.

Cells are addressed by a flat integer ``i_p * bins_theta + i_theta``; the
sink for states outside the domain is :data:`OOD` (``-1``).  Boxes and the
abstraction region ``gamma`` are in SI state coordinates ``(p [m],
theta [rad])``; the fitted model ``phi ~ A x + b`` and its residual bound
``U`` live in control coordinates (``theta`` and ``phi`` in degrees).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import DEG, as_network, evaluate
from .geom import Box, Interval, box_bloat, box_contains, box_hull, points_hull
from .plant import DEFAULT_SUBSTEP, PlantParams, substeps_for

OOD = -1

# RNG stream tags; each (seed, cell, stream) triple gets its own generator
STREAM_STARTS, STREAM_SIM_LATENT, STREAM_FIT, STREAM_AUDIT, STREAM_REAUDIT, STREAM_FALSIFY = range(6)


class DegenerateFit(ArithmeticError):
    """Design matrix is (near) rank deficient; reported as a cell flag."""


def cell_rng(seed: int, cell: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(cell) + 1, int(stream)])


@dataclass(frozen=True)
class CellId:
    """Per-dimension cell index; ``flat`` converts to the integer id."""
    i_p: int
    i_theta: int

    def flat(self, part: Partition) -> int:
        return part.ravel(self.i_p, self.i_theta)


@dataclass(frozen=True)
class Partition:
    domain: Box = Box.from_bounds([(-10.0, 10.0), (math.radians(-30.0), math.radians(30.0))])
    bins: tuple[int, int] = (128, 128)

    def __post_init__(self):
        if len(self.domain) != 2 or len(self.bins) != 2:
            raise ValueError("partition is 2-d (p, theta)")
        if any(int(b) < 1 for b in self.bins):
            raise ValueError(f"bins must be >= 1, got {self.bins}")
        if any(d.width <= 0 for d in self.domain):
            raise ValueError("partition domain must have positive width")
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))

    @property
    def n_cells(self) -> int:
        return self.bins[0] * self.bins[1]

    @property
    def widths(self) -> np.ndarray:
        return self.domain.widths / np.array(self.bins)

    def ravel(self, i_p: int, i_theta: int) -> int:
        if not (0 <= i_p < self.bins[0] and 0 <= i_theta < self.bins[1]):
            raise IndexError(f"cell ({i_p}, {i_theta}) outside {self.bins}")
        return i_p * self.bins[1] + i_theta

    def unravel(self, idx: int) -> CellId:
        if not 0 <= idx < self.n_cells:
            raise IndexError(f"cell {idx} outside partition of {self.n_cells}")
        return CellId(idx // self.bins[1], idx % self.bins[1])

    def edge(self, k) -> np.ndarray:
        """Grid line ``k`` per dimension; line ``bins`` is the domain edge exactly."""
        k = np.asarray(k)
        nb = np.array(self.bins)
        d_lo, d_hi, w = self.domain.lo, self.domain.hi, self.widths
        return np.where(k == nb, d_hi, d_lo + k * w)

    def _floor_index(self, x: np.ndarray) -> np.ndarray:
        """Index ``i`` with ``edge(i) <= x < edge(i + 1)``, consistent with :meth:`edge`."""
        i = np.floor((x - self.domain.lo) / self.widths).astype(np.int64)
        i = i + (self.edge(i + 1) <= x)
        return i - (self.edge(i) > x)

    def _ceil_index(self, x: np.ndarray) -> np.ndarray:
        """Index ``j`` with ``edge(j) < x <= edge(j + 1)``."""
        j = np.ceil((x - self.domain.lo) / self.widths).astype(np.int64) - 1
        j = j + (self.edge(j + 1) < x)
        return j - (self.edge(j) >= x)

    def cell_box(self, idx: int) -> Box:
        c = self.unravel(idx)
        k = np.array([c.i_p, c.i_theta])
        return Box.from_arrays(self.edge(k), self.edge(k + 1))

    def cell_of(self, s) -> int:
        """Containing cell (bins closed below, open above; top edge joins the last bin)."""
        return int(self.cells_of(np.asarray(tuple(s), dtype=float)[None, :])[0])

    def cells_of(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lo, hi = self.domain.lo, self.domain.hi
        outside = np.any((pts < lo) | (pts > hi) | ~np.isfinite(pts), axis=1)
        safe = np.where(outside[:, None], lo, pts)
        nb = np.array(self.bins)
        idx = np.clip(self._floor_index(safe), 0, nb - 1)
        out = idx[:, 0] * nb[1] + idx[:, 1]
        out[outside] = OOD
        return out

    def index_range(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
        """Per-dimension index range of cells meeting the box ``[lo, hi]``.

        Cell boundaries are treated as having measure zero: a box whose
        upper face lies exactly on a grid line does not touch the next bin.
        The flag reports whether the box leaves the domain.
        """
        nb = np.array(self.bins)
        i_lo = self._floor_index(lo)
        i_hi = np.maximum(self._ceil_index(hi), i_lo)
        outside = bool(np.any(lo < self.domain.lo) or np.any(hi > self.domain.hi))
        return np.clip(i_lo, 0, nb - 1), np.clip(i_hi, 0, nb - 1), outside

    def cells_in_box(self, box: Box) -> set[int]:
        """Cells meeting ``box``, plus :data:`OOD` if the box leaves the domain."""
        return self.cells_in_boxes(np.array([[box[0].lo, box[0].hi, box[1].lo, box[1].hi]]))

    def cells_in_boxes(self, rows: np.ndarray) -> set[int]:
        """Union of :meth:`cells_in_box` over ``(n, 4)`` rows ``p_lo, p_hi, th_lo, th_hi``."""
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        out: set[int] = set()
        if not len(rows):
            return out
        lo, hi = rows[:, [0, 2]], rows[:, [1, 3]]
        d_lo, d_hi = self.domain.lo, self.domain.hi
        nb = np.array(self.bins)
        if np.any((lo < d_lo) | (hi > d_hi)):
            out.add(OOD)
        disjoint = np.any((hi < d_lo) | (lo > d_hi), axis=1)
        lo = np.clip(lo, d_lo, d_hi)
        hi = np.clip(hi, d_lo, d_hi)
        i_lo = np.clip(self._floor_index(lo), 0, nb - 1)
        i_hi = np.clip(np.maximum(self._ceil_index(hi), i_lo), 0, nb - 1)
        n_t = self.bins[1]
        for (a0, a1), (b0, b1), skip in zip(i_lo.tolist(), i_hi.tolist(), disjoint.tolist()):
            if skip:
                continue
            for ip in range(a0, b0 + 1):
                base = ip * n_t
                out.update(range(base + a1, base + b1 + 1))
        return out

    def snap(self, box: Box) -> Box:
        """Smallest union-of-cells box covering ``box`` (same boundary rule)."""
        lo, hi = box.lo, box.hi
        i_lo = self._floor_index(lo)
        i_hi = np.maximum(self._ceil_index(hi), i_lo)
        return Box.from_arrays(np.minimum(self.edge(i_lo), lo), np.maximum(self.edge(i_hi + 1), hi))

    def cells_in_region(self, p: tuple[float, float], theta: tuple[float, float]) -> set[int]:
        """Cells meeting ``p x theta`` (SI), ignoring the sink."""
        return self.cells_in_box(Box.from_bounds([p, theta])) - {OOD}

    def describe(self) -> str:
        (pl, ph), (tl, th) = self.domain.bounds()
        return f"{pl!r} {ph!r} {tl!r} {th!r} {self.bins[0]} {self.bins[1]}"


@dataclass(frozen=True)
class LinearizeConfig:
    horizon: float = 1.0
    n_start: int = 64
    n_fit: int = 512
    n_audit: int = 4096
    margin: float = 0.1
    floor: float = 1e-4  # rad
    sim_substep: float = DEFAULT_SUBSTEP
    hold: float | None = None  # zero-order hold period for fixed-frequency witnesses
    seed: int = 0

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.n_start < 5:
            raise ValueError("n_start must cover the 4 corners and the center")
        if self.n_fit < 3 or self.n_audit < 1:
            raise ValueError("n_fit must be >= 3 and n_audit >= 1")
        if self.margin < 0 or self.floor < 0:
            raise ValueError("margin and floor must be non-negative")
        if self.sim_substep <= 0:
            raise ValueError("sim_substep must be positive")
        if self.hold is not None and self.hold <= 0:
            raise ValueError("hold must be positive")


@dataclass(frozen=True)
class Witness:
    """Hull of the simulated start states and trajectory points of one cell."""
    hull: Box
    saturated: bool
    left_domain: bool
    n_traj: int


@dataclass(frozen=True)
class LinearAbstraction:
    A_mat: np.ndarray  # (dphi/dp [deg/m], dphi/dtheta [deg/deg])
    b: float  # deg
    U: Interval  # deg, after margin and floor
    U_raw: Interval  # deg, exact audit min/max (straddling 0)
    gamma: Box  # SI
    bf_used: float
    n_samples: int
    saturated: bool = False
    degenerate_fit: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def U_rad(self) -> Interval:
        return Interval(self.U.lo / DEG, self.U.hi / DEG)

    def predict(self, x_ctrl: np.ndarray) -> np.ndarray:
        x_ctrl = np.atleast_2d(x_ctrl)
        return x_ctrl[:, 0] * self.A_mat[0] + x_ctrl[:, 1] * self.A_mat[1] + self.b

    def gamma_control(self) -> Box:
        """``gamma`` with theta in degrees."""
        return Box((self.gamma[0], Interval(self.gamma[1].lo * DEG, self.gamma[1].hi * DEG)))


def _starts(part: Partition, cell: int, cfg: LinearizeConfig) -> np.ndarray:
    box = part.cell_box(cell)
    rng = cell_rng(cfg.seed, cell, STREAM_STARTS)
    fixed = np.vstack([box.corners(), box.center[None, :]])
    rest = box.sample(rng, cfg.n_start - len(fixed))
    return np.vstack([fixed, rest])


def _latent_samples(cs, rng: np.random.Generator, shape: tuple) -> np.ndarray | None:
    box = getattr(cs, "latent_box", None)
    if box is None:
        return None
    return rng.uniform(box.lo, box.hi, size=shape + (len(box),))


def witness(cs, part: Partition, cell: int, cfg: LinearizeConfig,
            params: PlantParams | None = None) -> Witness:
    """Simulate the ``n_start`` witnesses of a cell and hull every point."""
    from ._core import kernels

    params = params or PlantParams()
    net = as_network(cs)
    x0 = _starts(part, cell, cfg)
    if cfg.hold is not None:
        n_hold, h = substeps_for(min(cfg.hold, cfg.horizon), cfg.sim_substep)
        n_steps = int(round(cfg.horizon / h))
        hold_every = n_hold
    else:
        n_steps, h = substeps_for(cfg.horizon, cfg.sim_substep)
        hold_every = 0
    lat = _latent_samples(cs, cell_rng(cfg.seed, cell, STREAM_SIM_LATENT), (len(x0), n_steps))
    traj, _, sat = kernels.simulate_batch(
        x0, net.weights, net.biases, net.relu, lat,
        params.v, params.L, params.phi_limit, h, n_steps, hold_every,
    )
    pts = traj.reshape(-1, 2)
    hull = box_hull([points_hull(pts), part.cell_box(cell)])
    left = bool(np.any(part.cells_of(pts) == OOD))
    return Witness(hull, bool(np.any(sat)), left, len(x0))


def fit_affine(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float, bool]:
    """Least-squares ``y ~ X a + b`` via centred, scaled normal equations.

    Falls back to a 1e-10 ridge when the scaled Gram matrix is near
    singular and reports that as degenerate.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    xm = X.mean(axis=0)
    ym = y.mean()
    xs = X.std(axis=0)
    flat = xs <= 1e-12 * np.maximum(np.abs(xm), 1.0)
    degenerate = bool(np.any(flat))
    xs = np.where(flat, 0.0, xs)
    xs_safe = np.where(xs > 0.0, xs, 1.0)
    Z = (X - xm) / xs_safe
    G = Z.T @ Z / len(X)
    r = Z.T @ (y - ym) / len(X)
    if degenerate or np.linalg.cond(G) > 1e12:
        degenerate = True
        G = G + 1e-10 * np.eye(len(G))
    coef = np.linalg.solve(G, r)
    A = np.where(xs > 0.0, coef / xs_safe, 0.0)
    b = float(ym - A @ xm)
    return A, b, degenerate


def _sample_control(cs, box: Box, rng: np.random.Generator, n: int, extra_pts=None):
    x = box.sample(rng, n)
    if extra_pts is not None:
        x = np.vstack([x, extra_pts])
    lat = _latent_samples(cs, rng, (len(x),))
    xc = x.copy()
    xc[:, 1] *= DEG
    return xc, evaluate(cs, xc, lat)


def widen_uncertainty(raw: Interval, margin: float, floor_deg: float) -> Interval:
    pad = margin * raw.rad + floor_deg
    return Interval(raw.lo - pad, raw.hi + pad)


def linearize(cs, part: Partition, cell: int, bf: float, cfg: LinearizeConfig | None = None,
              params: PlantParams | None = None, wit: Witness | None = None) -> LinearAbstraction:
    """Fit the cell's affine controller model over ``gamma`` and bound its residual.

    ``wit`` may carry a cached :func:`witness` result; the witnesses depend
    only on the cell and config, not on ``bf``.
    """
    if bf < 0:
        raise ValueError(f"bloating factor {bf} < 0")
    cfg = cfg or LinearizeConfig()
    if wit is None:
        wit = witness(cs, part, cell, cfg, params)
    gamma = box_bloat(wit.hull, bf)
    assert box_contains(gamma, part.cell_box(cell))

    Xf, yf = _sample_control(cs, gamma, cell_rng(cfg.seed, cell, STREAM_FIT), cfg.n_fit)
    A, b, degenerate = fit_affine(Xf, yf)

    extra = np.vstack([gamma.corners(), gamma.center[None, :]])
    Xa, ya = _sample_control(cs, gamma, cell_rng(cfg.seed, cell, STREAM_AUDIT), cfg.n_audit, extra)
    res = ya - (Xa[:, 0] * A[0] + Xa[:, 1] * A[1] + b)
    raw = Interval(min(float(res.min()), 0.0), max(float(res.max()), 0.0))
    U = widen_uncertainty(raw, cfg.margin, cfg.floor * DEG)
    return LinearAbstraction(
        A_mat=A, b=b, U=U, U_raw=raw, gamma=gamma, bf_used=bf,
        n_samples=cfg.n_fit + len(Xa), saturated=wit.saturated, degenerate_fit=degenerate,
    )


def reaudit(cs, la: LinearAbstraction, cell: int, n: int = 10_000, seed: int = 1) -> int:
    """Fresh, independently seeded count of residuals outside ``la.U``."""
    X, y = _sample_control(cs, la.gamma, cell_rng(seed, cell, STREAM_REAUDIT), n)
    r = y - la.predict(X)
    return int(np.count_nonzero((r < la.U.lo) | (r > la.U.hi)))


def with_margin(cfg: LinearizeConfig, margin: float, floor: float | None = None) -> LinearizeConfig:
    return replace(cfg, margin=margin, floor=cfg.floor if floor is None else floor)


__all__ = [
    "OOD", "CellId", "Partition", "LinearizeConfig", "LinearAbstraction", "Witness", "DegenerateFit",
    "cell_rng", "witness", "fit_affine", "linearize", "reaudit", "widen_uncertainty", "with_margin"
]
