from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowdmotion.consistency import ConsistencySnapshot, SnippetWindow, grid_edges, snippet_features
from crowdmotion.flowio import ScaleSpec, build_scale_specs
from crowdmotion.graphs import (
    MultiScaleGraphSet,
    build_graph,
    build_msmc,
    extract_sequence,
    map_edge_weights,
    normalized_adjacency,
    read_graph_dump,
    unmap_edge_weights,
    write_graph_dump,
)


def _snapshot(rw, rh, rng, D=8):
    spec = ScaleSpec(1, 4, 4 * rw, 4 * rh)
    edges = grid_edges(rw, rh)
    n, e = rw * rh, edges.shape[0]
    return ConsistencySnapshot(
        spec, 19,
        rng.uniform(0, math.log(D), n), rng.uniform(0, math.log(D), n),
        edges, rng.uniform(-1, 1, e), rng.uniform(0, math.log(D), e), D,
    )


def test_grid_sizes():
    rng = np.random.default_rng(0)
    g = build_graph(_snapshot(3, 3, rng))
    assert (g.n_nodes, g.n_edges) == (9, 12)
    g = build_graph(_snapshot(1, 1, rng))
    assert (g.n_nodes, g.n_edges) == (1, 0)


def test_build_graph_copies_features():
    snap = _snapshot(4, 3, np.random.default_rng(1))
    g = build_graph(snap)
    np.testing.assert_array_equal(g.node_features[:, 0], snap.omega_sp)
    np.testing.assert_array_equal(g.node_features[:, 1], snap.omega_tp)
    np.testing.assert_array_equal(g.edge_features[:, 0], snap.gamma_sp)
    np.testing.assert_array_equal(g.edge_features[:, 1], snap.gamma_tp)
    np.testing.assert_array_equal(g.edges, snap.edges)
    np.testing.assert_array_equal(g.targets, map_edge_weights(g.edge_features, 8))


def test_map_edge_weights_examples():
    np.testing.assert_allclose(map_edge_weights(np.array([-1.0, 0.0]))[0], 0.0)
    np.testing.assert_allclose(map_edge_weights(np.array([1.0, math.log(8)])), [1.0, 1.0], atol=1e-15)
    np.testing.assert_allclose(map_edge_weights(np.array([0.5, math.log(2)]), 8), [0.75, 1 / 3], atol=1e-15)


def test_map_edge_weights_clamps_rounding():
    out = map_edge_weights(np.array([[1.0 + 1e-15, math.log(8) * (1 + 1e-15)], [-1 - 1e-15, -1e-18]]))
    assert out.min() >= 0 and out.max() <= 1


@given(g=st.floats(-1, 1), t=st.floats(0, math.log(8)))
def test_map_edge_weights_round_trip(g, t):
    e = np.array([g, t])
    np.testing.assert_allclose(unmap_edge_weights(map_edge_weights(e, 8), 8), e, atol=1e-12)


@given(a=st.floats(-1, 1), b=st.floats(-1, 1))
def test_map_edge_weights_monotone(a, b):
    lo, hi = sorted([a, b])
    ma = map_edge_weights(np.array([[lo, lo + 1], [hi, hi + 1]]), 8)
    assert ma[0, 0] <= ma[1, 0] and ma[0, 1] <= ma[1, 1]


def test_adjacency_single_node():
    g = build_graph(_snapshot(1, 1, np.random.default_rng(0)))
    np.testing.assert_array_equal(normalized_adjacency(g, "spatial"), [[1.0]])


def test_adjacency_two_nodes_full_weight():
    snap = _snapshot(2, 1, np.random.default_rng(0))
    snap.gamma_sp[:] = 1.0
    g = build_graph(snap)
    np.testing.assert_allclose(normalized_adjacency(g, "spatial"), [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def _dense_oracle(n, edges, w):
    a = np.eye(n)
    for (i, j), x in zip(edges, w):
        a[i, j] += x
        a[j, i] += x
    deg = a.sum(axis=1)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = a[i, j] / math.sqrt(deg[i] * deg[j])
    return out


@pytest.mark.parametrize("channel,col", [("spatial", 0), ("temporal", 1)])
def test_adjacency_matches_dense_oracle(channel, col):
    g = build_graph(_snapshot(3, 3, np.random.default_rng(4)))
    ref = _dense_oracle(g.n_nodes, g.edges.tolist(), g.targets[:, col])
    np.testing.assert_allclose(normalized_adjacency(g, channel), ref, rtol=0, atol=1e-12)


def _weighted_degree(g, channel):
    col = 0 if channel == "spatial" else 1
    deg = np.zeros(g.n_nodes)
    np.add.at(deg, g.edges[:, 0], g.targets[:, col])
    np.add.at(deg, g.edges[:, 1], g.targets[:, col])
    return deg


def test_row_sums_can_exceed_one():
    # symmetric normalization does not bound row sums: the centre of an
    # unweighted 3x3 grid sums to 1/5 + 4/sqrt(20)
    snap = _snapshot(3, 3, np.random.default_rng(0))
    snap.gamma_sp[:] = 1.0
    a = normalized_adjacency(build_graph(snap), "spatial")
    assert abs(a[4].sum() - (0.2 + 4 / math.sqrt(20))) < 1e-12


@given(seed=st.integers(0, 2**31), rw=st.integers(1, 5), rh=st.integers(1, 5))
def test_adjacency_properties(seed, rw, rh):
    g = build_graph(_snapshot(rw, rh, np.random.default_rng(seed)))
    for ch in ("spatial", "temporal"):
        a = normalized_adjacency(g, ch)
        np.testing.assert_array_equal(a, a.T)
        assert (a @ np.ones(g.n_nodes) > 0).all()
        # sqrt(degree) is the eigenvector for eigenvalue 1
        sqrt_deg = np.sqrt(1.0 + _weighted_degree(g, ch))
        np.testing.assert_allclose(a @ sqrt_deg, sqrt_deg, atol=1e-12)
        assert np.abs(np.linalg.eigvalsh(a)).max() <= 1 + 1e-12


def test_build_msmc_scales():
    frames = np.random.default_rng(0).normal(size=(20, 64, 80, 2))
    specs = build_scale_specs(80, 64, 4, [1, 2, 4])
    gs = build_msmc(SnippetWindow(19, frames), specs)
    assert [g.n_nodes for g in gs.graphs] == [20 * 16, 10 * 8, 5 * 4]
    assert all(g.end_frame == 19 for g in gs.graphs)


def test_build_msmc_single_scale_equals_build_graph():
    frames = np.random.default_rng(1).normal(size=(5, 12, 12, 2))
    spec = ScaleSpec(1, 4, 12, 12)
    w = SnippetWindow(4, frames)
    gs = build_msmc(w, [spec])
    ref = build_graph(snippet_features(w, spec))
    assert len(gs.graphs) == 1
    np.testing.assert_array_equal(gs.graphs[0].node_features, ref.node_features)
    np.testing.assert_array_equal(gs.graphs[0].targets, ref.targets)


def test_uniform_flow_has_zero_node_features_everywhere():
    frames = np.zeros((20, 32, 32, 2))
    frames[..., 1] = -1.0
    gs = build_msmc(SnippetWindow(19, frames), build_scale_specs(32, 32, 4, [1, 2, 4]))
    assert all((g.node_features == 0).all() for g in gs.graphs)


def test_graph_dump_round_trip(tmp_path):
    frames = np.random.default_rng(2).normal(size=(24, 16, 16, 2))
    specs = build_scale_specs(16, 16, 4, [1, 2])
    sets = extract_sequence(frames, specs, m=20)
    assert [s.end_frame for s in sets] == [19, 20, 21, 22, 23]
    p = tmp_path / "g.jsonl"
    write_graph_dump(p, {"note": "x"}, sets)
    header, back = read_graph_dump(p)
    assert header == {"note": "x"}
    for a, b in zip(sets, back):
        assert a.end_frame == b.end_frame
        for ga, gb in zip(a.graphs, b.graphs):
            assert ga.spec == gb.spec
            np.testing.assert_array_equal(ga.node_features, gb.node_features)
            np.testing.assert_array_equal(ga.edge_features, gb.edge_features)
            np.testing.assert_array_equal(ga.targets, gb.targets)
            np.testing.assert_array_equal(ga.edges, gb.edges)


def test_graph_dump_rejects_garbage(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text('{"kind": "snippet", "end_frame": 0, "graphs": []}\n')
    with pytest.raises(ValueError):
        read_graph_dump(p)
    p.write_text('{"kind": "weird"}\n')
    with pytest.raises(ValueError):
        read_graph_dump(p)


def test_multiscale_set_dict_round_trip():
    frames = np.random.default_rng(3).normal(size=(20, 8, 8, 2))
    gs = build_msmc(SnippetWindow(19, frames), build_scale_specs(8, 8, 4, [1, 2]))
    back = MultiScaleGraphSet.from_dict(gs.to_dict())
    assert back.end_frame == 19 and len(back.graphs) == 2
