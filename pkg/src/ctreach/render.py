"""Cell heatmaps as hand-written SVG and plain (ASCII) PGM."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .abstraction import Partition

CELL_PX = 6
MARGIN_L, MARGIN_B, MARGIN_T, MARGIN_R = 56, 40, 28, 12


def _gray(v: float) -> str:
    k = int(round(255 * min(max(v, 0.0), 1.0)))
    return f"#{k:02x}{k:02x}{k:02x}"


def svg_heatmap(values: np.ndarray, part: Partition, title: str = "", cell_px: int | None = None) -> str:
    """``values`` has shape ``(bins_p, bins_theta)`` in [0, 1]; 1 renders white.

    p runs left to right, theta bottom to top; runs of equal value in a
    column are merged into one rect to keep files small.
    """
    values = np.asarray(values, dtype=float)
    nb_p, nb_t = part.bins
    if values.shape != (nb_p, nb_t):
        raise ValueError(f"values shape {values.shape} != bins {part.bins}")
    px = cell_px or max(2, min(CELL_PX, 768 // max(nb_p, nb_t)))
    W = MARGIN_L + nb_p * px + MARGIN_R
    H = MARGIN_T + nb_t * px + MARGIN_B
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
        f'<text x="{W / 2:.1f}" y="18" font-family="sans-serif" font-size="13" text-anchor="middle">{_esc(title)}</text>',
        '<g shape-rendering="crispEdges">',
    ]
    for i in range(nb_p):
        x = MARGIN_L + i * px
        j = 0
        while j < nb_t:
            v = values[i, j]
            k = j
            while k + 1 < nb_t and values[i, k + 1] == v:
                k += 1
            y = MARGIN_T + (nb_t - 1 - k) * px
            out.append(f'<rect x="{x}" y="{y}" width="{px}" height="{(k - j + 1) * px}" fill="{_gray(v)}"/>')
            j = k + 1
    out.append("</g>")
    x0, y0 = MARGIN_L, MARGIN_T + nb_t * px
    out.append(f'<rect x="{x0}" y="{MARGIN_T}" width="{nb_p * px}" height="{nb_t * px}" fill="none" stroke="#888888"/>')
    (p_lo, p_hi), (t_lo, t_hi) = part.domain.bounds()
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = x0 + frac * nb_p * px
        pv = p_lo + frac * (p_hi - p_lo)
        out.append(f'<text x="{x:.1f}" y="{y0 + 14}" font-family="sans-serif" font-size="10" '
                   f'text-anchor="middle">{pv:g}</text>')
        y = y0 - frac * nb_t * px
        tv = math.degrees(t_lo + frac * (t_hi - t_lo))
        out.append(f'<text x="{x0 - 4}" y="{y + 3:.1f}" font-family="sans-serif" font-size="10" '
                   f'text-anchor="end">{tv:.3g}</text>')
    out.append(f'<text x="{x0 + nb_p * px / 2:.1f}" y="{H - 8}" font-family="sans-serif" font-size="11" '
               f'text-anchor="middle">p (m)</text>')
    out.append(f'<text x="14" y="{MARGIN_T + nb_t * px / 2:.1f}" font-family="sans-serif" font-size="11" '
               f'text-anchor="middle" transform="rotate(-90 14 {MARGIN_T + nb_t * px / 2:.1f})">theta (deg)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def pgm(values: np.ndarray, comment: str = "") -> str:
    """Plain PGM (P2): width = p bins, height = theta bins, top row = highest theta."""
    values = np.asarray(values, dtype=float)
    img = np.rint(255 * np.clip(values, 0.0, 1.0)).astype(int).T[::-1]
    h, w = img.shape
    lines = ["P2"]
    if comment:
        lines.append("# " + comment.replace("\n", " "))
    lines += [f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in img]
    return "\n".join(lines) + "\n"


def read_pgm(text: str) -> np.ndarray:
    """Inverse of :func:`pgm`, returning values in [0, 1] with shape ``(bins_p, bins_theta)``."""
    toks = [t for ln in text.splitlines() if not ln.startswith("#") for t in ln.split()]
    if not toks or toks[0] != "P2":
        raise ValueError("not a plain PGM")
    w, h, mx = int(toks[1]), int(toks[2]), int(toks[3])
    data = np.array([int(t) for t in toks[4:4 + w * h]], dtype=float).reshape(h, w)
    return (data[::-1].T) / mx


def write_heatmaps(values: np.ndarray, part: Partition, stem, title: str = "") -> tuple[Path, Path]:
    stem = Path(stem)
    svg, pg = stem.with_suffix(".svg"), stem.with_suffix(".pgm")
    svg.write_text(svg_heatmap(values, part, title), encoding="utf-8")
    pg.write_text(pgm(values, title), encoding="utf-8")
    return svg, pg
