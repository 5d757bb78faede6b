import numpy as np
import pytest

from conftest import synthetic_graph
from ctreach.abstraction import LinearizeConfig, Partition
from ctreach.controller import DEG, AnalyticLaw, Network, NeuralNet, evaluate, load_network
from ctreach.geom import Box, Interval
from ctreach.graph import CatConfig, HashMismatch, cat
from ctreach.queries import (
    ConformanceQuery, QueryParseError, build_skip_network, export_queries, falsify, falsify_graph,
    format_query, load_query, parse_query, query_for_cell, summary_csv,
)

FAST = CatConfig(linearize=LinearizeConfig(n_start=16, n_fit=256, n_audit=1024))


@pytest.fixture(scope="module")
def sur_graph(surrogate):
    return cat(surrogate, Partition(bins=(4, 4)), FAST)


def _rand_net(rng, sizes, relu):
    ws = tuple(rng.normal(size=(b, a)) for a, b in zip(sizes[:-1], sizes[1:]))
    bs = tuple(rng.normal(size=b) for b in sizes[1:])
    return Network(ws, bs, relu)


@pytest.mark.parametrize("sizes, relu", [
    ([2, 1], (False,)),
    ([2, 5, 1], (True, False)),
    ([2, 6, 4, 1], (True, True, False)),
    ([3, 4, 4, 1], (False, True, False)),
])
def test_skip_network_equivalence(rng, sizes, relu):
    net = _rand_net(rng, sizes, relu)
    skip = build_skip_network(net)
    assert skip.input_dim == sizes[0] and skip.output_dim == sizes[0] + 1
    x = rng.uniform(-5, 5, size=(1000, sizes[0]))
    y = skip(x)
    assert np.abs(y[:, : sizes[0]] - x).max() <= 1e-9
    assert np.abs(y[:, -1] - net(x)[:, 0]).max() <= 1e-9


def test_skip_network_surrogate_shape(surrogate):
    skip = build_skip_network(surrogate.network)
    assert skip.layer_sizes == [2, 36, 36, 3]


def test_skip_network_collapses_to_original(rng):
    net = _rand_net(rng, [2, 5, 4, 1], (False, False, False))
    skip = build_skip_network(net)
    assert np.array_equal(skip.weights[0][:5], net.weights[0])
    assert np.array_equal(skip.weights[1][:4, :5], net.weights[1])
    assert not skip.weights[1][:4, 5:].any()
    assert np.array_equal(skip.weights[2][2:, :4], net.weights[2])


def test_query_round_trip(sur_graph, surrogate):
    for d in ("upper", "lower"):
        q = query_for_cell(sur_graph, 5, d)
        text = format_query(q, sur_graph.controller_hash)
        assert parse_query(text) == q
        r = sur_graph.records[5]
        assert q.input_region[0].lo == r.gamma[0] and q.input_region[1].hi == r.gamma[3] * DEG


def test_query_parse_errors(sur_graph):
    text = format_query(query_for_cell(sur_graph, 0, "upper"))
    with pytest.raises(QueryParseError):
        parse_query(text.replace("; ctreach conformance query v1", "; other"))
    with pytest.raises(QueryParseError):
        parse_query(text.replace("(assert (>= X_0", "(assert (>= Z_0"))
    with pytest.raises(QueryParseError):
        parse_query("\n".join(ln for ln in text.splitlines() if not ln.startswith("(assert (<= X_1")))
    with pytest.raises(QueryParseError):
        parse_query(text.replace("(assert (>= (+", "(assert (<= (+"))
    with pytest.raises(ValueError):
        ConformanceQuery(0, Box.point((0, 0)), (0, 0), 0.0, Interval(0, 0), "sideways")


def test_export_queries(tmp_path, sur_graph, surrogate):
    n = export_queries(sur_graph, surrogate, tmp_path)
    assert n == 2 * sur_graph.partition.n_cells
    files = sorted(tmp_path.glob("*.vnnlib"))
    assert len(files) == n
    q = load_query(tmp_path / "cell_00003_lower.vnnlib")
    assert q.cell == 3 and q.direction == "lower"
    skip = load_network(tmp_path / "skip_network.json", scalar=False)
    assert skip.output_dim == 3


def test_export_refuses_other_controller(tmp_path, sur_graph):
    with pytest.raises(HashMismatch):
        export_queries(sur_graph, AnalyticLaw().to_network(), tmp_path)


def test_falsify_analytic_none(analytic):
    g = cat(analytic, Partition(bins=(4, 4)), FAST)
    rows = falsify_graph(g, NeuralNet(analytic.to_network()), n=2000)
    assert all(v == "not_falsified" for *_, v in rows)
    assert all(ratio < 1 for _, _, ratio, _ in rows)


def test_falsify_shrunk_centre_cell(surrogate):
    part = Partition(bins=(16, 16))
    centre = part.cell_of((0.01, 0.001))
    g = cat(surrogate, part, CatConfig(linearize=LinearizeConfig(margin=0.0)), cells=[centre])
    rows = falsify_graph(g, surrogate, n=100_000, cells=[centre], shrink=0.5)
    assert any(v == "falsified" for *_, v in rows)
    assert "cell,direction,max_ratio,verdict" in summary_csv(rows)


def test_counterexamples_are_genuine(surrogate, sur_graph):
    for c in sur_graph.cells:
        for d in ("upper", "lower"):
            q = query_for_cell(sur_graph, c, d)
            half = ConformanceQuery(c, q.input_region, q.A_mat, q.b,
                                    Interval(0.5 * q.U.lo, 0.5 * q.U.hi), d)
            res = falsify(half, surrogate.network, n=5000)
            assert (res.counterexample is not None) == (res.ratio >= 1.0)
            if res.counterexample is not None:
                x = res.counterexample
                r = evaluate(surrogate, x) - (q.A_mat[0] * x[0] + q.A_mat[1] * x[1] + q.b)
                assert r >= half.U.hi if d == "upper" else r <= half.U.lo


def test_falsify_rejects_zero_samples(sur_graph, surrogate):
    with pytest.raises(ValueError):
        falsify(query_for_cell(sur_graph, 0, "upper"), surrogate.network, n=0)


def test_query_input_box_in_control_units():
    part = Partition(bins=(2, 2))
    g = synthetic_graph(part, {c: (c,) for c in range(4)})
    q = query_for_cell(g, 0, "upper")
    assert q.input_region[1].lo == pytest.approx(-30.0)
