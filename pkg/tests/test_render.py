import numpy as np
import pytest

from ctreach.abstraction import Partition
from ctreach.render import pgm, read_pgm, svg_heatmap, write_heatmaps


def test_pgm_round_trip(rng):
    v = rng.integers(0, 2, size=(5, 7)).astype(float)
    text = pgm(v, "demo")
    assert text.startswith("P2\n# demo\n5 7\n255\n")
    assert np.array_equal(read_pgm(text), v)


def test_pgm_top_row_is_high_theta():
    v = np.zeros((2, 3))
    v[:, 2] = 1.0
    rows = pgm(v).splitlines()[3:]
    assert rows[0] == "255 255" and rows[-1] == "0 0"


def test_svg_merges_runs():
    part = Partition(bins=(4, 4))
    text = svg_heatmap(np.ones((4, 4)), part, "all <safe>")
    assert text.count('fill="#ffffff"/>') == 1 + 4  # background plus one rect per column
    assert "all &lt;safe&gt;" in text


def test_svg_shape_check():
    with pytest.raises(ValueError):
        svg_heatmap(np.ones((3, 4)), Partition(bins=(4, 4)))


def test_write_heatmaps(tmp_path):
    svg, pg = write_heatmaps(np.eye(4), Partition(bins=(4, 4)), tmp_path / "m", "t")
    assert svg.suffix == ".svg" and pg.suffix == ".pgm"
    assert np.array_equal(read_pgm(pg.read_text()), np.eye(4))
