"""Open-loop conformance queries for external network verifiers.

A cell's model claims ``A x + b + U.lo <= phi(x) <= A x + b + U.hi`` for
every ``x`` in ``gamma``.  That property mixes inputs and outputs, so the
network is first widened with a skip connection that copies ``x`` to the
output; the claim then only constrains outputs ``Y = (x, phi(x))``.  Each
query file states the *negation* of one side, so a verifier answering
"unsat" proves that side.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .abstraction import STREAM_FALSIFY, cell_rng
from .controller import DEG, NeuralNet, Network, save_network
from .geom import Box, Interval
from .graph import CellGraph, HashMismatch

QUERY_TAG = "; ctreach conformance query v1"


class QueryParseError(ValueError):
    pass


# -- skip network -----------------------------------------------------------

def build_skip_network(net: Network) -> Network:
    """Network with outputs ``(x_1..x_n, net(x))``.

    Each hidden layer gets ``2n`` extra channels holding a pair ``(a, b)``
    with ``x = a - b``: ReLU layers carry ``(relu(x), relu(-x))``, identity
    layers carry ``(x, 0)``.  The final layer reads ``x`` back as ``a - b``.
    """
    n = net.input_dim
    eye = np.eye(n)
    ws, bs = [], []
    last = len(net.weights) - 1
    for li, (W, b, r) in enumerate(zip(net.weights, net.biases, net.relu)):
        h_out = W.shape[0]
        if li == 0:
            read = eye  # x from the raw input
            W_orig = W
        else:
            h_in = net.weights[li - 1].shape[0]
            read = np.hstack([np.zeros((n, h_in)), eye, -eye])  # x from the pair channels
            W_orig = np.hstack([W, np.zeros((h_out, 2 * n))])
        if li == last:
            ws.append(np.vstack([read, W_orig]))
            bs.append(np.concatenate([np.zeros(n), b]))
        else:
            second = -read if r else np.zeros_like(read)
            ws.append(np.vstack([W_orig, read, second]))
            bs.append(np.concatenate([b, np.zeros(2 * n)]))
    return Network(tuple(ws), tuple(bs), net.relu)


# -- queries ----------------------------------------------------------------

@dataclass(frozen=True)
class ConformanceQuery:
    cell: int
    input_region: Box  # control coordinates (p, theta_deg, latents...)
    A_mat: tuple[float, float]
    b: float
    U: Interval
    direction: str  # "upper" | "lower"

    def __post_init__(self):
        if self.direction not in ("upper", "lower"):
            raise ValueError(f"direction must be 'upper' or 'lower', got {self.direction!r}")

    @property
    def bound(self) -> float:
        """Offset on ``phi - A x``: ``b + U.hi`` (upper) or ``b + U.lo`` (lower)."""
        return self.b + (self.U.hi if self.direction == "upper" else self.U.lo)

    @property
    def n_inputs(self) -> int:
        return len(self.input_region)


def query_for_cell(g: CellGraph, cell: int, direction: str, latent_box: Box | None = None) -> ConformanceQuery:
    r = g.records[cell]
    dims = [Interval(r.gamma[0], r.gamma[1]), Interval(r.gamma[2] * DEG, r.gamma[3] * DEG)]
    if latent_box is not None:
        dims.extend(latent_box.dims)
    return ConformanceQuery(cell, Box(tuple(dims)), r.A, r.b, Interval(*r.U), direction)


def format_query(q: ConformanceQuery, controller_hash: str = "", config_hash: str = "") -> str:
    n = q.n_inputs
    lines = [
        QUERY_TAG,
        f"; cell {q.cell} direction {q.direction}",
        f"; model A {q.A_mat[0]!r} {q.A_mat[1]!r} b {q.b!r} U {q.U.lo!r} {q.U.hi!r}",
        f"; controller_hash {controller_hash or '-'}",
        f"; config_hash {config_hash or '-'}",
        "; inputs X_i; outputs Y_0..Y_{n-1} copy the inputs and Y_n is the steering command",
    ]
    lines += [f"(declare-const X_{i} Real)" for i in range(n)]
    lines += [f"(declare-const Y_{i} Real)" for i in range(n + 1)]
    for i, d in enumerate(q.input_region):
        lines.append(f"(assert (>= X_{i} {d.lo!r}))")
        lines.append(f"(assert (<= X_{i} {d.hi!r}))")
    op = ">=" if q.direction == "upper" else "<="
    terms = f"(* 1.0 Y_{n}) (* {-q.A_mat[0]!r} Y_0) (* {-q.A_mat[1]!r} Y_1)"
    lines.append(f"(assert ({op} (+ {terms}) {q.bound!r}))")
    return "\n".join(lines) + "\n"


_FLOAT = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|inf|nan)"
_RE_HEAD = re.compile(r"^; cell (\d+) direction (upper|lower)$")
_RE_MODEL = re.compile(rf"^; model A ({_FLOAT}) ({_FLOAT}) b ({_FLOAT}) U ({_FLOAT}) ({_FLOAT})$")
_RE_DECL = re.compile(r"^\(declare-const ([XY])_(\d+) Real\)$")
_RE_BOUND = re.compile(rf"^\(assert \((>=|<=) X_(\d+) ({_FLOAT})\)\)$")
_RE_OUT = re.compile(
    rf"^\(assert \((>=|<=) \(\+ \(\* 1\.0 Y_(\d+)\) \(\* ({_FLOAT}) Y_0\) \(\* ({_FLOAT}) Y_1\)\) ({_FLOAT})\)\)$"
)


def parse_query(text: str) -> ConformanceQuery:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != QUERY_TAG:
        raise QueryParseError("missing query header tag")
    cell = direction = model = None
    n_x = n_y = 0
    lo: dict[int, float] = {}
    hi: dict[int, float] = {}
    out = None
    for k, ln in enumerate(lines[1:], start=2):
        if m := _RE_HEAD.match(ln):
            cell, direction = int(m[1]), m[2]
        elif m := _RE_MODEL.match(ln):
            model = [float(m[i]) for i in range(1, 6)]
        elif ln.startswith(";"):
            continue
        elif m := _RE_DECL.match(ln):
            if m[1] == "X":
                n_x += 1
            else:
                n_y += 1
        elif m := _RE_BOUND.match(ln):
            (lo if m[1] == ">=" else hi)[int(m[2])] = float(m[3])
        elif m := _RE_OUT.match(ln):
            out = m
        else:
            raise QueryParseError(f"line {k}: unrecognised statement {ln[:60]!r}")
    if cell is None or model is None or out is None:
        raise QueryParseError("query lacks the cell header, model comment or output constraint")
    if n_y != n_x + 1 or int(out[2]) != n_x:
        raise QueryParseError(f"expected {n_x + 1} outputs with Y_{n_x} as the command")
    if set(lo) != set(range(n_x)) or set(hi) != set(range(n_x)):
        raise QueryParseError("every input needs a lower and an upper bound")
    A = (model[0], model[1])
    q = ConformanceQuery(cell, Box(tuple(Interval(lo[i], hi[i]) for i in range(n_x))), A, model[2],
                         Interval(model[3], model[4]), direction)
    if (out[1] == ">=") != (direction == "upper"):
        raise QueryParseError("constraint sense does not match the direction")
    if float(out[3]) != -A[0] or float(out[4]) != -A[1] or float(out[5]) != q.bound:
        raise QueryParseError("output constraint disagrees with the model comment")
    return q


def load_query(path) -> ConformanceQuery:
    return parse_query(Path(path).read_text(encoding="utf-8"))


def _source(net_or_cs) -> NeuralNet:
    if isinstance(net_or_cs, Network):
        return NeuralNet(net_or_cs)
    return net_or_cs


def export_queries(g: CellGraph, net_or_cs, dir_path) -> int:
    """Write two queries per cell plus ``skip_network.json``; returns the query count."""
    cs = _source(net_or_cs)
    if cs.digest() != g.controller_hash:
        raise HashMismatch("graph was built for a different controller")
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    save_network(build_skip_network(cs.network), out / "skip_network.json")
    count = 0
    width = max(5, len(str(g.partition.n_cells - 1)))
    for c in g.cells:
        for d in ("upper", "lower"):
            q = query_for_cell(g, c, d, cs.latent_box)
            (out / f"cell_{c:0{width}d}_{d}.vnnlib").write_text(format_query(q, g.controller_hash, g.config_hash), encoding="utf-8")
            count += 1
    return count


# -- falsification ----------------------------------------------------------

@dataclass
class FalsifyResult:
    counterexample: np.ndarray | None
    ratio: float  # worst residual over the bound it must respect
    worst_residual: float
    n_evaluated: int


def _forward(net: Network, x: np.ndarray) -> np.ndarray:
    # BLAS path; falsification does not need bit-reproducible sums
    h = x
    for W, b, r in zip(net.weights, net.biases, net.relu):
        h = h @ W.T + b
        if r:
            np.maximum(h, 0.0, out=h)
    return h[:, 0]


def _ratio(worst: float, limit: float) -> float:
    if limit != 0.0:
        return worst / limit
    return math.inf if worst >= 0.0 else -math.inf


def residuals(q: ConformanceQuery, net: Network, X: np.ndarray) -> np.ndarray:
    return _forward(net, X) - (X[:, 0] * q.A_mat[0] + X[:, 1] * q.A_mat[1] + q.b)


def falsify_pair(upper: ConformanceQuery, lower: ConformanceQuery, net: Network, n: int = 100_000,
                 seed: int = 0, chunk: int = 50_000) -> tuple[FalsifyResult, FalsifyResult]:
    """Falsify both sides of one cell's model on a shared sample set.

    Samples ``n`` points uniformly in the input region plus all its corners.
    A side is falsified when its ratio reaches 1, i.e. some residual reaches
    the bound (the query files use the same non-strict comparison).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    region = upper.input_region
    rng = cell_rng(seed, upper.cell, STREAM_FALSIFY)
    best = {"upper": (-math.inf, None), "lower": (math.inf, None)}
    total = 0
    batches = [region.corners()]
    left = n
    while left > 0:
        m = min(chunk, left)
        batches.append(region.sample(rng, m))
        left -= m
    for X in batches:
        r = residuals(upper, net, X)
        i, j = int(np.argmax(r)), int(np.argmin(r))
        if r[i] > best["upper"][0]:
            best["upper"] = (float(r[i]), X[i].copy())
        if r[j] < best["lower"][0]:
            best["lower"] = (float(r[j]), X[j].copy())
        total += len(X)
    out = []
    for q, key, limit in ((upper, "upper", upper.U.hi), (lower, "lower", lower.U.lo)):
        worst, x = best[key]
        ratio = _ratio(worst, limit)
        out.append(FalsifyResult(x if ratio >= 1.0 else None, ratio, worst, total))
    return out[0], out[1]


def falsify(query: ConformanceQuery, net: Network, n: int = 100_000, seed: int = 0) -> FalsifyResult:
    other = ConformanceQuery(query.cell, query.input_region, query.A_mat, query.b, query.U,
                             "lower" if query.direction == "upper" else "upper")
    if query.direction == "upper":
        return falsify_pair(query, other, net, n, seed)[0]
    return falsify_pair(other, query, net, n, seed)[1]


def falsify_graph(g: CellGraph, net_or_cs, n: int = 100_000, seed: int = 0, cells=None,
                  shrink: float = 1.0) -> list[tuple[int, str, float, str]]:
    """Rows ``(cell, direction, max_ratio, verdict)``; ``shrink`` scales U first."""
    cs = _source(net_or_cs)
    rows = []
    for c in (g.cells if cells is None else cells):
        up = query_for_cell(g, c, "upper", cs.latent_box)
        lo = query_for_cell(g, c, "lower", cs.latent_box)
        if shrink != 1.0:
            U = Interval(up.U.lo * shrink, up.U.hi * shrink)
            up = ConformanceQuery(c, up.input_region, up.A_mat, up.b, U, "upper")
            lo = ConformanceQuery(c, lo.input_region, lo.A_mat, lo.b, U, "lower")
        ru, rl = falsify_pair(up, lo, cs.network, n, seed)
        for d, r in (("upper", ru), ("lower", rl)):
            rows.append((c, d, r.ratio, "falsified" if r.counterexample is not None else "not_falsified"))
    return rows


def summary_csv(rows) -> str:
    out = ["cell,direction,max_ratio,verdict"]
    out += [f"{c},{d},{ratio!r},{v}" for c, d, ratio, v in rows]
    return "\n".join(out) + "\n"
