"""Cell abstraction graph: construction, fixpoints and the CAGv1 file format."""

from __future__ import annotations

import hashlib
import multiprocessing as mp
import os
import time
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .abstraction import OOD, LinearizeConfig, Partition, linearize, witness
from .geom import Box, Interval
from .plant import PlantParams
from .reach import DEFAULT_SUBSTEPS, MAX_PICARD, reach_continuous, reach_fixed

VERSION = "CAGv1"
FLAG_NAMES = ("saturated", "degenerate_fit", "unresolved", "diverged", "left_domain")
BLOCK = 16  # cells per parallel work item


class GraphFormatError(ValueError):
    pass


class FormatVersionMismatch(GraphFormatError):
    pass


class HashMismatch(GraphFormatError):
    pass


@dataclass(frozen=True)
class CatConfig:
    linearize: LinearizeConfig = LinearizeConfig()
    bf0: float = 0.1
    inc: float = 1.5
    max_retries: int = 8
    n_substeps: int = DEFAULT_SUBSTEPS
    max_picard: int = MAX_PICARD
    frequency: float | None = None  # None: continuous actuation
    snap: bool = True  # fixed mode: re-grid the set before every hold
    strict_paper: bool = False  # accumulate edges over retries

    def __post_init__(self):
        if self.bf0 < 0:
            raise ValueError("bf0 must be >= 0")
        if not self.inc > 1:
            raise ValueError("inc must be > 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.n_substeps < 1 or self.max_picard < 1:
            raise ValueError("n_substeps and max_picard must be >= 1")
        if self.frequency is not None and not self.frequency > 0:
            raise ValueError("frequency must be positive")

    @property
    def mode(self) -> str:
        return "continuous" if self.frequency is None else f"fixed {self.frequency!r}"

    def effective_linearize(self) -> LinearizeConfig:
        hold = None if self.frequency is None else 1.0 / self.frequency
        return replace(self.linearize, hold=hold)


def config_hash(part: Partition, cfg: CatConfig, params: PlantParams) -> str:
    doc = repr((part.describe(), sorted(asdict(cfg).items(), key=lambda kv: kv[0]),
                sorted(asdict(params).items())))
    return hashlib.sha256(doc.encode()).hexdigest()


@dataclass
class CellRecord:
    A: tuple[float, float]
    b: float
    U: tuple[float, float]
    U_raw: tuple[float, float]
    gamma: tuple[float, float, float, float]
    bf: float
    retries: int
    flags: frozenset[str]
    succ: tuple[int, ...]
    inter: tuple[int, ...]
    wall: float = field(default=0.0, compare=False)

    @property
    def gamma_box(self) -> Box:
        g = self.gamma
        return Box.from_bounds([(g[0], g[1]), (g[2], g[3])])

    @property
    def U_interval(self) -> Interval:
        return Interval(*self.U)


@dataclass
class CellGraph:
    partition: Partition
    records: list[CellRecord]
    mode: str
    horizon: float
    controller_hash: str
    config_hash: str

    def __post_init__(self):
        if len(self.records) != self.partition.n_cells:
            raise ValueError(f"{len(self.records)} records for {self.partition.n_cells} cells")

    @property
    def cells(self) -> range:
        return range(self.partition.n_cells)

    def successors(self, c: int) -> tuple[int, ...]:
        if c == OOD:
            return (OOD,)
        return self.records[c].succ

    def intermediates(self, c: int) -> tuple[int, ...]:
        if c == OOD:
            return (OOD,)
        return self.records[c].inter

    def adjacency(self) -> dict[int, tuple[int, ...]]:
        adj = {c: r.succ for c, r in enumerate(self.records)}
        adj[OOD] = (OOD,)
        return adj

    def n_edges(self) -> int:
        return sum(len(r.succ) for r in self.records) + 1


# -- construction -----------------------------------------------------------

def _attempt(cs, part, cell, bf, lcfg, params, wit, cfg: CatConfig):
    la = linearize(cs, part, cell, bf, lcfg, params, wit)
    start = part.cell_box(cell)
    if cfg.frequency is None:
        res = reach_continuous(la, start, params, lcfg.horizon, cfg.n_substeps, part,
                               cfg.max_picard, raise_on_diverge=False)
    else:
        res = reach_fixed(la, start, part, cfg.frequency, params, lcfg.horizon, cfg.n_substeps,
                          cfg.snap, cfg.max_picard)
    return la, res


def process_cell(cs, part: Partition, cell: int, cfg: CatConfig, params: PlantParams) -> CellRecord:
    """Algorithm-1 loop for one cell: fit, reach, grow ``bf`` until contained."""
    t0 = time.perf_counter()
    lcfg = cfg.effective_linearize()
    wit = witness(cs, part, cell, lcfg, params)
    bf = cfg.bf0
    acc_f: set[int] = set()
    acc_i: set[int] = set()
    flags: set[str] = set()
    if wit.left_domain:
        flags.add("left_domain")
    resolved = False
    for k in range(cfg.max_retries + 1):
        la, res = _attempt(cs, part, cell, bf, lcfg, params, wit, cfg)
        if cfg.strict_paper:
            acc_f |= res.final_cells
            acc_i |= res.intermediate_cells
        if res.diverged:
            flags.add("diverged")
        if res.ok:
            resolved = True
            break
        if k < cfg.max_retries:
            bf *= cfg.inc
    if la.saturated:
        flags.add("saturated")
    if la.degenerate_fit:
        flags.add("degenerate_fit")
    if resolved:
        succ, inter = (acc_f, acc_i) if cfg.strict_paper else (res.final_cells, res.intermediate_cells)
        if not cfg.strict_paper:
            flags.discard("diverged")
    else:
        flags.add("unresolved")
        succ = (acc_f | {OOD}) if cfg.strict_paper else {OOD}
        inter = (acc_i | {OOD}) if cfg.strict_paper else {OOD}
    return CellRecord(
        A=(float(la.A_mat[0]), float(la.A_mat[1])), b=float(la.b),
        U=(la.U.lo, la.U.hi), U_raw=(la.U_raw.lo, la.U_raw.hi),
        gamma=tuple(float(v) for v in (la.gamma[0].lo, la.gamma[0].hi, la.gamma[1].lo, la.gamma[1].hi)),
        bf=bf, retries=k, flags=frozenset(flags),
        succ=tuple(sorted(succ)), inter=tuple(sorted(inter)),
        wall=time.perf_counter() - t0,
    )


_WORKER: dict = {}


def _init_worker(cs, part, cfg, params):
    _WORKER.update(cs=cs, part=part, cfg=cfg, params=params)


def _run_block(cells: list[int]) -> list[CellRecord]:
    w = _WORKER
    return [process_cell(w["cs"], w["part"], c, w["cfg"], w["params"]) for c in cells]


def cat(cs, part: Partition, cfg: CatConfig | None = None, params: PlantParams | None = None,
        jobs: int = 1, cells: Iterable[int] | None = None, progress=None) -> CellGraph:
    """Compute abstract transitions for every cell.

    Cells are independent, so with ``jobs > 1`` they are farmed out to a
    process pool in fixed blocks and merged back in cell order; the result is
    identical to a serial run.
    """
    cfg = cfg or CatConfig()
    params = params or PlantParams()
    todo = list(range(part.n_cells)) if cells is None else sorted(set(cells))
    blocks = [todo[i:i + BLOCK] for i in range(0, len(todo), BLOCK)]
    records: dict[int, CellRecord] = {}
    if jobs > 1 and len(blocks) > 1:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        with ctx.Pool(jobs, initializer=_init_worker, initargs=(cs, part, cfg, params)) as pool:
            for blk, recs in zip(blocks, pool.imap(_run_block, blocks)):
                records.update(zip(blk, recs))
                if progress:
                    progress(len(records), len(todo))
    else:
        _init_worker(cs, part, cfg, params)
        for blk in blocks:
            records.update(zip(blk, _run_block(blk)))
            if progress:
                progress(len(records), len(todo))
    if cells is not None and len(records) != part.n_cells:
        # partial build: remaining cells are unknown, so they go to the sink
        for c in range(part.n_cells):
            records.setdefault(c, _placeholder(part, c))
    return CellGraph(
        partition=part,
        records=[records[c] for c in range(part.n_cells)],
        mode=cfg.mode,
        horizon=cfg.linearize.horizon,
        controller_hash=cs.digest(),
        config_hash=config_hash(part, cfg, params),
    )


def _placeholder(part: Partition, c: int) -> CellRecord:
    b = part.cell_box(c)
    return CellRecord((0.0, 0.0), 0.0, (0.0, 0.0), (0.0, 0.0),
                      (b[0].lo, b[0].hi, b[1].lo, b[1].hi), 0.0, 0,
                      frozenset({"unresolved"}), (OOD,), (OOD,))


# -- fixpoints --------------------------------------------------------------

def _succ_fn(g):
    if isinstance(g, CellGraph):
        return g.successors
    if isinstance(g, Mapping):
        return lambda c: g.get(c, ())
    raise TypeError(f"expected CellGraph or adjacency mapping, got {type(g).__name__}")


def forward_reach(C0: Iterable[int], g) -> tuple[set[int], int]:
    """Least successor-closed superset of ``C0`` and the number of expansions."""
    succ = _succ_fn(g)
    reach = set(C0)
    frontier = set(reach)
    iterations = 0
    while frontier:
        iterations += 1
        new = set()
        for c in frontier:
            new.update(succ(c))
        new -= reach
        reach |= new
        frontier = new
    return reach, iterations


def reverse(g) -> dict[int, set[int]]:
    adj = g.adjacency() if isinstance(g, CellGraph) else g
    rev: dict[int, set[int]] = {}
    for c, ss in adj.items():
        for s in ss:
            rev.setdefault(s, set()).add(c)
    return rev


def backward_reach(unsafe_seed: Iterable[int], g) -> set[int]:
    """Cells with some path into ``unsafe_seed`` (including the seed itself)."""
    return forward_reach(unsafe_seed, reverse(g))[0]


def image(cells: Iterable[int], g) -> set[int]:
    succ = _succ_fn(g)
    out: set[int] = set()
    for c in cells:
        out.update(succ(c))
    return out


# -- persistence ------------------------------------------------------------

def _ints(xs) -> str:
    return ",".join(str(x) for x in xs) if xs else "-"


def _parse_ints(s: str) -> tuple[int, ...]:
    return () if s == "-" else tuple(int(x) for x in s.split(","))


def dumps_graph(g: CellGraph) -> str:
    lines = [
        VERSION,
        f"partition {g.partition.describe()}",
        f"mode {g.mode}",
        f"horizon {g.horizon!r}",
        f"controller_hash {g.controller_hash}",
        f"config_hash {g.config_hash}",
        f"cells {len(g.records)}",
    ]
    for c, r in enumerate(g.records):
        flags = ",".join(f for f in FLAG_NAMES if f in r.flags) or "-"
        nums = (r.bf, *r.A, r.b, *r.U, *r.U_raw, *r.gamma)
        lines.append(
            f"c {c} {flags} {r.retries} " + " ".join(repr(float(x)) for x in nums)
            + f" | {_ints(r.succ)} | {_ints(r.inter)}"
        )
    body = "\n".join(lines) + "\n"
    return body + f"checksum {hashlib.sha256(body.encode()).hexdigest()}\n"


def save_graph(g: CellGraph, path) -> None:
    Path(path).write_text(dumps_graph(g), encoding="utf-8")


def _expect(line: str, key: str, lineno: int) -> str:
    head, _, rest = line.partition(" ")
    if head != key:
        raise GraphFormatError(f"line {lineno}: expected '{key}', got {line[:40]!r}")
    return rest


def loads_graph(text: str, controller_hash: str | None = None, config_hash: str | None = None) -> CellGraph:
    lines = text.split("\n")
    if not lines or lines[0] != VERSION:
        raise FormatVersionMismatch(f"expected version tag {VERSION}, got {lines[0][:20]!r}")
    if len(lines) < 9 or lines[-1] != "":
        raise GraphFormatError("truncated graph file")
    check = _expect(lines[-2], "checksum", len(lines) - 1)
    body = "\n".join(lines[:-2]) + "\n"
    if hashlib.sha256(body.encode()).hexdigest() != check:
        raise HashMismatch("checksum does not match file contents (edited or corrupt)")
    p = _expect(lines[1], "partition", 2).split()
    part = Partition(Box.from_bounds([(float(p[0]), float(p[1])), (float(p[2]), float(p[3]))]),
                     (int(p[4]), int(p[5])))
    mode = _expect(lines[2], "mode", 3)
    horizon = float(_expect(lines[3], "horizon", 4))
    ch = _expect(lines[4], "controller_hash", 5)
    fh = _expect(lines[5], "config_hash", 6)
    n = int(_expect(lines[6], "cells", 7))
    if controller_hash is not None and ch != controller_hash:
        raise HashMismatch(f"graph built for controller {ch[:12]}, expected {controller_hash[:12]}")
    if config_hash is not None and fh != config_hash:
        raise HashMismatch(f"graph built for config {fh[:12]}, expected {config_hash[:12]}")
    cell_lines = lines[7:-2]
    if len(cell_lines) != n:
        raise GraphFormatError(f"header declares {n} cells, file has {len(cell_lines)}")
    records = []
    for k, line in enumerate(cell_lines):
        try:
            head, succ, inter = line.split(" | ")
            tok = head.split()
            if tok[0] != "c" or int(tok[1]) != k or len(tok) != 16:
                raise ValueError("bad cell record")
            flags = frozenset() if tok[2] == "-" else frozenset(tok[2].split(","))
            if not flags <= set(FLAG_NAMES):
                raise ValueError(f"unknown flags {sorted(flags - set(FLAG_NAMES))}")
            v = [float(x) for x in tok[4:]]
            records.append(CellRecord(
                A=(v[1], v[2]), b=v[3], U=(v[4], v[5]), U_raw=(v[6], v[7]),
                gamma=(v[8], v[9], v[10], v[11]), bf=v[0], retries=int(tok[3]),
                flags=flags, succ=_parse_ints(succ), inter=_parse_ints(inter),
            ))
        except ValueError as exc:
            raise GraphFormatError(f"line {k + 8}: {exc}") from None
    return CellGraph(part, records, mode, horizon, ch, fh)


def load_graph(path, controller_hash: str | None = None, config_hash: str | None = None) -> CellGraph:
    return loads_graph(Path(path).read_text(encoding="utf-8"), controller_hash, config_hash)


def build_log(g: CellGraph) -> str:
    """Per-cell retries, flags and wall time (not part of the graph file)."""
    rows = ["cell,retries,bf,flags,wall_s"]
    for c, r in enumerate(g.records):
        rows.append(f"{c},{r.retries},{r.bf!r},{'|'.join(sorted(r.flags))},{r.wall:.4f}")
    return "\n".join(rows) + "\n"


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


__all__ = [
    "VERSION", "CatConfig", "CellRecord", "CellGraph", "cat", "process_cell", "forward_reach",
    "backward_reach", "reverse", "image", "save_graph", "load_graph", "dumps_graph", "loads_graph",
    "build_log", "config_hash", "GraphFormatError", "FormatVersionMismatch", "HashMismatch",
    "default_jobs",
]
