import time

import networkx as nx
import numpy as np
import pytest

from conftest import self_loop_graph, synthetic_graph
from ctreach.abstraction import OOD, LinearizeConfig, Partition
from ctreach.graph import (
    VERSION, CatConfig, FormatVersionMismatch, GraphFormatError, HashMismatch, backward_reach,
    cat, dumps_graph, forward_reach, image, load_graph, loads_graph, process_cell, save_graph,
)
from ctreach.plant import PlantParams, State, simulate

FAST = CatConfig(linearize=LinearizeConfig(n_start=16, n_fit=128, n_audit=512))


def random_adjacency(rng, n, max_out=3):
    adj = {}
    for c in range(n):
        k = int(rng.integers(0, max_out + 1))
        adj[c] = tuple(sorted(set(rng.integers(-1, n, size=k).tolist())))
    adj[OOD] = (OOD,)
    return adj


def oracle_forward(adj, C0):
    G = nx.DiGraph()
    G.add_nodes_from(adj)
    G.add_edges_from((a, b) for a, bs in adj.items() for b in bs)
    out = set(C0)
    for c in C0:
        out |= nx.descendants(G, c)
    return out


def oracle_backward(adj, seed):
    G = nx.DiGraph()
    G.add_nodes_from(adj)
    G.add_edges_from((a, b) for a, bs in adj.items() for b in bs)
    out = set(seed)
    for c in seed:
        if c in G:
            out |= nx.ancestors(G, c)
    return out


def test_forward_examples(small_part):
    g = self_loop_graph(small_part)
    assert forward_reach(set(), g) == (set(), 0)
    assert forward_reach({5}, g) == ({5}, 1)


def test_backward_examples():
    part = Partition(bins=(1, 2))
    g = synthetic_graph(part, {0: (1,), 1: (1,)})
    assert backward_reach(set(), g) == set()
    assert backward_reach({1}, g) == {0, 1}


@pytest.mark.parametrize("seed", range(100))
def test_fixpoints_match_oracle_8x8(seed):
    rng = np.random.default_rng(seed)
    adj = random_adjacency(rng, 64)
    C0 = set(rng.choice(64, size=int(rng.integers(1, 6)), replace=False).tolist())
    assert forward_reach(C0, adj)[0] == oracle_forward(adj, C0)
    assert backward_reach(C0, adj) == oracle_backward(adj, C0)


def test_safe_set_is_closed(rng):
    part = Partition(bins=(8, 8))
    adj = random_adjacency(rng, 64, max_out=2)
    g = synthetic_graph(part, {c: adj[c] for c in range(64)})
    unsafe = backward_reach({OOD}, g)
    safe = set(range(64)) - unsafe
    assert image(safe, g) <= safe


def test_iterations_count_frontier_expansions():
    adj = {0: (1,), 1: (2,), 2: (2,), OOD: (OOD,)}
    assert forward_reach({0}, adj) == ({0, 1, 2}, 3)


def test_round_trip_byte_identical(tmp_path, small_part):
    rng = np.random.default_rng(1)
    adj = random_adjacency(rng, small_part.n_cells)
    g = synthetic_graph(small_part, {c: adj[c] for c in range(small_part.n_cells)},
                        flags={3: ("saturated", "left_domain")})
    a = tmp_path / "a.cag"
    save_graph(g, a)
    g2 = load_graph(a)
    assert g2.records == g.records
    b = tmp_path / "b.cag"
    save_graph(g2, b)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == VERSION


def test_edited_hash_rejected(tmp_path, small_part):
    text = dumps_graph(self_loop_graph(small_part))
    edited = text.replace("controller_hash " + "0" * 64, "controller_hash " + "1" * 64)
    with pytest.raises(HashMismatch):
        loads_graph(edited)
    with pytest.raises(HashMismatch):
        loads_graph(text, controller_hash="f" * 64)
    with pytest.raises(HashMismatch):
        loads_graph(text, config_hash="f" * 64)
    loads_graph(text, controller_hash="0" * 64, config_hash="0" * 64)


def test_format_errors(small_part):
    text = dumps_graph(self_loop_graph(small_part))
    with pytest.raises(FormatVersionMismatch):
        loads_graph(text.replace(VERSION, "CAGv0", 1))
    with pytest.raises(GraphFormatError):
        loads_graph(text[: len(text) // 2])
    with pytest.raises(GraphFormatError):
        loads_graph("")


def test_large_round_trip_is_fast(tmp_path):
    part = Partition()
    g = self_loop_graph(part)
    t0 = time.perf_counter()
    save_graph(g, tmp_path / "big.cag")
    g2 = load_graph(tmp_path / "big.cag")
    assert time.perf_counter() - t0 < 1.0
    assert len(g2.records) == 16384


def test_cat_analytic_resolves_at_bf0(analytic):
    part = Partition(bins=(8, 8))
    g = cat(analytic, part, FAST)
    assert all(r.retries == 0 and r.bf == FAST.bf0 for r in g.records)
    assert not any("unresolved" in r.flags for r in g.records)
    assert all(np.allclose(r.A, (-0.74, -0.44), atol=1e-6) for r in g.records)


def test_unresolved_cell_edges_to_sink(surrogate):
    part = Partition(bins=(8, 8))
    cfg = CatConfig(linearize=FAST.linearize, bf0=0.0, max_retries=0, n_substeps=1, max_picard=1)
    rec = process_cell(surrogate, part, part.cell_of((5.0, 0.3)), cfg, PlantParams())
    assert "unresolved" in rec.flags
    assert rec.succ == (OOD,) and rec.inter == (OOD,)


def test_center_successors_near_simulated_endpoints(surrogate):
    part = Partition(bins=(16, 16))
    c = part.cell_of((0.01, 0.001))
    rec = process_cell(surrogate, part, c, CatConfig(), PlantParams())
    assert "unresolved" not in rec.flags
    ends = [simulate(State(*x), surrogate, 1.0).final for x in part.cell_box(c).corners()]
    w = part.widths
    for s in rec.succ:
        box = part.cell_box(s)
        gap = np.maximum(0.0, np.maximum(box.lo[None, :] - np.array([tuple(e) for e in ends]),
                                         np.array([tuple(e) for e in ends]) - box.hi[None, :]))
        assert np.any(np.all(gap <= w, axis=1))
    for e in ends:
        assert part.cell_of(tuple(e)) in rec.succ


def test_cat_jobs_identical(surrogate):
    part = Partition(bins=(8, 8))
    a = dumps_graph(cat(surrogate, part, FAST, jobs=1))
    b = dumps_graph(cat(surrogate, part, FAST, jobs=3))
    assert a == b


def test_strict_paper_accumulates(surrogate):
    part = Partition(bins=(8, 8))
    c = part.cell_of((3.0, 0.2))
    lin = FAST.linearize
    base = CatConfig(linearize=lin, bf0=0.0)
    rep = process_cell(surrogate, part, c, base, PlantParams())
    acc = process_cell(surrogate, part, c, CatConfig(linearize=lin, bf0=0.0, strict_paper=True), PlantParams())
    assert set(rep.succ) <= set(acc.succ)


def test_partial_build_fills_sink(analytic):
    part = Partition(bins=(4, 4))
    g = cat(analytic, part, FAST, cells=[0, 5])
    assert g.records[0].succ != (OOD,)
    assert g.records[1].succ == (OOD,) and "unresolved" in g.records[1].flags


def test_cat_config_validation():
    with pytest.raises(ValueError):
        CatConfig(inc=1.0)
    with pytest.raises(ValueError):
        CatConfig(bf0=-1)
    with pytest.raises(ValueError):
        CatConfig(frequency=0.0)
