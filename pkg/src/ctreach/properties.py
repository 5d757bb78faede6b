"""Runway safety (P1), centerline convergence (P2) and the frequency sweep."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .abstraction import OOD, Partition
from .graph import CatConfig, CellGraph, backward_reach, cat, image
from .plant import PlantParams

P2_INITIAL = ((-9.0, 9.0), (math.radians(-10.0), math.radians(10.0)))


class NotConverged(RuntimeError):
    pass


@dataclass
class PropertyReport:
    property: str
    mode: str
    cells: set[int]  # P1: safe cells; P2: final (converged) set
    percentage: float
    grid: np.ndarray  # (bins_p, bins_theta), 1 = verified / member
    passed: bool
    converged_at: int | None = None
    steps: list[set[int]] = field(default_factory=list)
    p_extent: tuple[float, float] | None = None
    detail: dict = field(default_factory=dict)

    def summary(self) -> str:
        if self.property == "P1":
            return (f"P1 [{self.mode}]: {self.percentage:.2f}% of cells verified safe "
                    f"({len(self.cells)} cells) -> {'VERIFIED' if self.passed else 'NOT VERIFIED'}")
        ext = "n/a" if self.p_extent is None else f"[{self.p_extent[0]:.3f}, {self.p_extent[1]:.3f}] m"
        conv = "not converged" if self.converged_at is None else f"converged after {self.converged_at} steps"
        return (f"P2 [{self.mode}]: {conv}; final set {len(self.cells)} cells, p-extent {ext} "
                f"-> {'VERIFIED' if self.passed else 'NOT VERIFIED'}")


def cell_grid(part: Partition, cells) -> np.ndarray:
    grid = np.zeros(part.bins, dtype=np.uint8)
    idx = np.array(sorted(c for c in cells if c != OOD), dtype=np.int64)
    if len(idx):
        grid.reshape(-1)[idx] = 1
    return grid


def unsafe_seed(g: CellGraph, runway_halfwidth: float) -> set[int]:
    """The sink plus every cell reaching beyond the runway edge (strictly)."""
    part = g.partition
    seed = {OOD}
    for c in g.cells:
        b = part.cell_box(c)[0]
        if b.hi > runway_halfwidth or b.lo < -runway_halfwidth:
            seed.add(c)
    return seed


def verify_p1(g: CellGraph, runway_halfwidth: float = 10.0, initial: set[int] | None = None,
              min_percent: float = 0.0) -> PropertyReport:
    """Safe cells are those with no path to the sink or past the runway edge.

    ``passed`` requires every cell of ``initial`` (default: none) to be safe and
    the safe share to reach ``min_percent``.
    """
    p_half = max(abs(g.partition.domain[0].lo), abs(g.partition.domain[0].hi))
    if runway_halfwidth > p_half:
        raise ValueError(f"runway half-width {runway_halfwidth} exceeds domain half-width {p_half}")
    unsafe = backward_reach(unsafe_seed(g, runway_halfwidth), g)
    safe = set(g.cells) - unsafe
    pct = 100.0 * len(safe) / g.partition.n_cells
    initial = set() if initial is None else set(initial)
    passed = initial <= safe and pct >= min_percent
    return PropertyReport("P1", g.mode, safe, pct, cell_grid(g.partition, safe), passed,
                          detail={"unsafe": len(unsafe - {OOD}), "initial_unsafe": len(initial - safe)})


def p_extent(part: Partition, cells) -> tuple[float, float] | None:
    cells = [c for c in cells if c != OOD]
    if not cells:
        return None
    boxes = [part.cell_box(c)[0] for c in cells]
    return min(b.lo for b in boxes), max(b.hi for b in boxes)


def verify_p2(g: CellGraph, C0: set[int], max_steps: int = 30, threshold: float | None = 1.0) -> PropertyReport:
    """Iterate ``S_{n+1} = post(S_n)`` from ``C0`` until it stops changing.

    The fixpoint is an invariant set.  ``passed`` needs convergence within
    ``max_steps``, no sink in the set and (with ``threshold``) a p-extent
    inside ``[-threshold, threshold]``.
    """
    S = set(C0)
    if not S:
        raise ValueError("C0 must be nonempty")
    steps = [S]
    converged = None
    for n in range(max_steps + 1):
        nxt = image(S, g)
        if nxt == S:
            converged = n
            break
        if n == max_steps:
            break
        S = nxt
        steps.append(S)
    ext = p_extent(g.partition, S)
    passed = converged is not None and OOD not in S and ext is not None
    if passed and threshold is not None:
        passed = -threshold <= ext[0] and ext[1] <= threshold
    pct = 100.0 * len(S - {OOD}) / g.partition.n_cells
    return PropertyReport("P2", g.mode, S, pct, cell_grid(g.partition, S), passed,
                          converged_at=converged, steps=steps, p_extent=ext,
                          detail={"contains_sink": OOD in S})


@dataclass
class SweepRow:
    mode: str
    safe_percent: float | None
    n_unresolved: int | None
    wall_s: float
    error: str = ""
    graph: CellGraph | None = None
    report: PropertyReport | None = None


def parse_mode(token) -> tuple[str, float | None, bool]:
    """``'10'`` -> fixed 10 Hz; ``'inf'`` -> continuous without the margin;
    ``'inf+U'`` -> continuous with the configured margin."""
    t = str(token).strip()
    if t.lower() in ("inf", "continuous"):
        return "inf", None, False
    if t.lower() in ("inf+u", "continuous+u"):
        return "inf+U", None, True
    f = float(t)
    if not f > 0 or not math.isfinite(f):
        raise ValueError(f"bad frequency {token!r}")
    return f"{f:g}Hz", f, True


def mode_config(cfg: CatConfig, token) -> CatConfig:
    _, freq, keep_margin = parse_mode(token)
    lin = cfg.linearize if keep_margin else replace(cfg.linearize, margin=0.0)
    return replace(cfg, frequency=freq, linearize=lin)


def frequency_sweep(cs, part: Partition, modes: Sequence, cfg: CatConfig | None = None,
                    params: PlantParams | None = None, runway_halfwidth: float = 10.0,
                    jobs: int = 1, keep_graphs: bool = False, progress=None) -> list[SweepRow]:
    """One graph and one P1 check per requested mode, in request order."""
    if not modes:
        raise ValueError("at least one mode is required")
    cfg = cfg or CatConfig()
    rows = []
    for token in modes:
        t0 = time.perf_counter()
        label = str(token)
        try:
            label = parse_mode(token)[0]
            g = cat(cs, part, mode_config(cfg, token), params, jobs=jobs)
            rep = verify_p1(g, runway_halfwidth)
            n_unres = sum("unresolved" in r.flags for r in g.records)
            rows.append(SweepRow(label, rep.percentage, n_unres, time.perf_counter() - t0,
                                 graph=g if keep_graphs else None, report=rep))
        except Exception as exc:  # recorded in-row; the sweep continues
            rows.append(SweepRow(label, None, None, time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}"))
        if progress:
            progress(rows[-1])
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    out = ["mode,safe_percent,unresolved_cells,wall_s,error"]
    for r in rows:
        pct = "" if r.safe_percent is None else f"{r.safe_percent:.4f}"
        unres = "" if r.n_unresolved is None else str(r.n_unresolved)
        out.append(f"{r.mode},{pct},{unres},{r.wall_s:.2f},{r.error.replace(',', ';')}")
    return "\n".join(out) + "\n"


def report_csv(rep: PropertyReport, part: Partition) -> str:
    """Per-cell verdicts: cell, i_p, i_theta, p_lo, p_hi, theta_lo_deg, theta_hi_deg, verdict."""
    rows = [f"# {rep.summary()}",
            "cell,i_p,i_theta,p_lo,p_hi,theta_lo_deg,theta_hi_deg,verdict"]
    flat = rep.grid.reshape(-1)
    for c in range(part.n_cells):
        cid = part.unravel(c)
        b = part.cell_box(c)
        rows.append(f"{c},{cid.i_p},{cid.i_theta},{b[0].lo!r},{b[0].hi!r},"
                    f"{math.degrees(b[1].lo)!r},{math.degrees(b[1].hi)!r},{int(flat[c])}")
    return "\n".join(rows) + "\n"
