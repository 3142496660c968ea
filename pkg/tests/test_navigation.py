import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mflab.errors import InvalidArgument, MapInfeasible
from mflab.graph import build_graph
from mflab.manifold import PointCloud
from mflab.navigation import (
    FilterNet,
    NavMap,
    NodeDirectionField,
    build_nav_graph,
    default_map,
    dijkstra_labels,
    evaluate,
    forward,
    init_filter_net,
    inside_obstacles,
    load_trained,
    node_features,
    loss_and_grad,
    normalized_gso,
    path_edges,
    rollout,
    rollout_table,
    sample_free_space,
    train_filter,
    train_navigation,
    visible,
)

EMPTY = NavMap((0, 0, 1, 1), (), (0.9, 0.9))
SQUARE = NavMap((0, 0, 1, 1), ((0.4, 0.4, 0.6, 0.6),), (0.9, 0.9))


def test_map_validation_and_json(tmp_path):
    m = default_map()
    p = tmp_path / "map.json"
    p.write_text(json.dumps(m.to_dict()))
    assert NavMap.load(p) == m
    with pytest.raises(InvalidArgument):
        NavMap((0, 0, 1, 1), ((0.5, 0.5, 1.5, 0.7),), (0.1, 0.1))
    with pytest.raises(InvalidArgument):
        NavMap((0, 0, 1, 1), ((0.4, 0.4, 0.6, 0.6),), (0.5, 0.5))


def test_visible_examples():
    assert visible(EMPTY, (0.1, 0.1), (0.9, 0.8))
    assert not visible(SQUARE, (0.1, 0.1), (0.5, 0.5))
    assert not visible(SQUARE, (0.0, 0.5), (1.0, 0.5))
    # touching the boundary counts as blocked
    assert not visible(SQUARE, (0.0, 0.4), (1.0, 0.4))
    assert visible(SQUARE, (0.0, 0.39), (1.0, 0.39))
    with pytest.raises(InvalidArgument):
        visible(SQUARE, (0.0, 0.5), (1.5, 0.5))


coords = st.tuples(st.floats(0, 1), st.floats(0, 1))


@given(coords, coords)
def test_visible_symmetric(p, q):
    assert visible(default_map(), p, q) == visible(default_map(), q, p)


def test_sampling_no_obstacles_and_determinism():
    c = sample_free_space(EMPTY, 300, 2)
    assert c.n == 300 and np.all((c.points >= 0) & (c.points <= 1))
    assert np.array_equal(c.points, sample_free_space(EMPTY, 300, 2).points)


def test_sampling_half_blocked():
    m = NavMap((0, 0, 1, 1), ((0.0, 0.0, 0.5, 1.0),), (0.9, 0.5))
    pts = sample_free_space(m, 1000, 3).points
    assert len(pts) == 1000
    for x, y in pts:
        assert not (0.0 <= x <= 0.5 and 0.0 <= y <= 1.0)


def test_sampling_infeasible():
    # 0.1% free area: 5000 points cannot be collected within a million draws
    m = NavMap((0, 0, 1, 1), ((0.0, 0.0, 1.0, 0.999),), (0.5, 0.9995))
    with pytest.raises(MapInfeasible):
        sample_free_space(m, 5000, 0)


def test_nav_graph_without_obstacles_matches_euclidean():
    c = sample_free_space(EMPTY, 80, 1)
    g = build_nav_graph(EMPTY, c, 0.01)
    np.testing.assert_array_equal(g.adjacency, build_graph(c, 0.01).adjacency)


def test_nav_graph_blocks_pairs():
    pts = np.array([[0.3, 0.5], [0.7, 0.5], [0.3, 0.2]])
    c = PointCloud(pts, 2)
    g = build_nav_graph(SQUARE, c, 0.05)
    assert g.adjacency[0, 1] == 0 and g.adjacency[1, 0] == 0
    assert g.adjacency[0, 2] > 0
    assert np.max(np.abs(g.laplacian.sum(axis=1))) <= 1e-10


def test_dijkstra_start_at_goal():
    c = sample_free_space(EMPTY, 60, 0)
    g = build_nav_graph(EMPTY, c, 0.01)
    goal = int(np.argmin(((c.points - EMPTY.goal) ** 2).sum(axis=1)))
    data = dijkstra_labels(g, c, EMPTY, starts=[goal])
    assert len(data.labeled_indices) == 0
    assert data.trajectories == ((goal,),)


def test_dijkstra_three_node_line():
    m = NavMap((0, 0, 1, 1), (), (0.9, 0.5))
    c = PointCloud(np.array([[0.5, 0.5], [0.7, 0.5], [0.9, 0.5]]), 2)
    g = build_nav_graph(m, c, 0.02)
    data = dijkstra_labels(g, c, m, starts=[0], radius=0.25)
    assert data.trajectories == ((0, 1, 2),)
    labels = dict(zip(data.labeled_indices.tolist(), data.labels.tolist()))
    assert labels == {0: [1.0, 0.0], 1: [1.0, 0.0]}


def test_dijkstra_labels_and_distances():
    m = default_map()
    c = sample_free_space(m, 300, 4)
    g = build_nav_graph(m, c, 0.005)
    data = dijkstra_labels(g, c, m, 4, seed=1)
    np.testing.assert_allclose(np.linalg.norm(data.labels, axis=1), 1.0, atol=1e-9)
    on_paths = {i for t in data.trajectories for i in t}
    assert set(data.labeled_indices.tolist()) <= on_paths
    E = path_edges(g, c).tocoo()
    dist = data.distances
    ok = np.isfinite(dist[E.row]) & np.isfinite(dist[E.col])
    assert np.all(dist[E.row][ok] <= dist[E.col][ok] + E.data[ok] + 1e-12)


def test_dijkstra_unreachable_skipped():
    # the wall splits the square; nothing on the left reaches the goal
    m = NavMap((0, 0, 1, 1), ((0.45, 0.0, 0.55, 1.0),), (0.9, 0.5))
    c = PointCloud(np.array([[0.2, 0.5], [0.8, 0.5], [0.9, 0.5]]), 2)
    g = build_nav_graph(m, c, 0.05)
    data = dijkstra_labels(g, c, m, starts=[0, 1], radius=0.3)
    assert data.skipped == 1 and data.trajectories == ((1, 2),)


def six_node_problem(layers, nonlinearity="tanh", seed=0):
    rng = np.random.default_rng(seed)
    B = rng.random((6, 6))
    S = normalized_gso((B + B.T) * (1 - np.eye(6)))
    net = init_filter_net(S, layers, hidden=3, seed=seed, nonlinearity=nonlinearity)
    # widen the initial taps so tanh is well inside its nonlinear range
    net = net.with_params([10 * p for p in net.params])
    X = rng.standard_normal((6, 2))
    idx = np.array([0, 2, 5])
    lab = rng.standard_normal((3, 2))
    lab /= np.linalg.norm(lab, axis=1, keepdims=True)
    return net, X, idx, lab


def central_differences(net, X, idx, lab, h=1e-6):
    out = []
    for li, P in enumerate(net.params):
        g = np.zeros_like(P)
        for k in np.ndindex(P.shape):
            params = [p.copy() for p in net.params]
            params[li][k] += h
            up = loss_and_grad(net.with_params(params), X, idx, lab)[0]
            params[li][k] -= 2 * h
            dn = loss_and_grad(net.with_params(params), X, idx, lab)[0]
            g[k] = (up - dn) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("layers,nl", [(1, "tanh"), (2, "tanh"), (2, "none")])
def test_gradient_check(layers, nl):
    net, X, idx, lab = six_node_problem(layers, nl)
    _, grads = loss_and_grad(net, X, idx, lab)
    for g, fd in zip(grads, central_differences(net, X, idx, lab)):
        assert np.max(np.abs(g - fd)) <= 1e-5 * np.max(np.abs(fd))


def test_forward_shape_and_widths():
    net, X, _, _ = six_node_problem(2)
    assert forward(net, X).shape == (6, 2)
    assert net.feature_widths == [2, 3, 2]
    assert FilterNet.from_dict(json.loads(json.dumps(net.to_dict())), net.gso).params[1].tolist() == net.params[1].tolist()


def _tiny_dataset():
    m = default_map()
    c = sample_free_space(m, 150, 0)
    g = build_nav_graph(m, c, 0.01)
    return m, c, g, dijkstra_labels(g, c, m, 4, seed=0)


def test_train_zero_epochs_and_determinism():
    m, c, g, data = _tiny_dataset()
    X = node_features(c, m)
    net = init_filter_net(normalized_gso(g.adjacency), 2, seed=3)
    same, hist = train_filter(net, X, data, epochs=0)
    assert hist == [] and all(np.array_equal(a, b) for a, b in zip(same.params, net.params))
    a, _ = train_filter(net, X, data, epochs=30)
    b, _ = train_filter(net, X, data, epochs=30)
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    with pytest.raises(InvalidArgument):
        train_filter(net, X, data, epochs=1, reduction="median")


def test_overfit_single_node():
    m, c, g, data = _tiny_dataset()
    one = replace(data, labeled_indices=data.labeled_indices[:1], labels=data.labels[:1])
    net = init_filter_net(normalized_gso(g.adjacency), 1, seed=0)
    _, hist = train_filter(net, node_features(c, m), one, epochs=2000, lr=0.05)
    assert hist[-1] < 1e-3 * hist[0]


def test_loss_mostly_nonincreasing():
    m, c, g, data = _tiny_dataset()
    net = init_filter_net(normalized_gso(g.adjacency), 2, seed=1)
    _, hist = train_filter(net, node_features(c, m), data, epochs=300, lr=2e-4)
    drops = np.diff(hist) <= 0
    assert drops.mean() >= 0.9


def goal_field(nav_map):
    goal = np.asarray(nav_map.goal)
    return lambda p: goal - p


def test_rollout_examples():
    r = rollout(goal_field(EMPTY), EMPTY, (0.88, 0.9))
    assert r.success and r.steps == 0
    start = np.array([0.1, 0.2])
    r = rollout(goal_field(EMPTY), EMPTY, start, step_size=0.02, goal_radius=0.05)
    dist = np.linalg.norm(start - EMPTY.goal)
    assert r.success and r.steps == math.ceil((dist - 0.05) / 0.02)
    away = rollout(lambda p: np.asarray(p) - EMPTY.goal, NavMap((0, 0, 100, 100), (), (90, 90)), (50, 50),
                   max_steps=40)
    assert not away.success and away.reason == "max_steps"


def test_rollout_collision_and_success_paths_clear():
    r = rollout(goal_field(SQUARE), SQUARE, (0.2, 0.2))
    assert not r.success and r.reason == "collision"
    for s in np.random.default_rng(0).uniform(0, 1, (30, 2)):
        if SQUARE.blocked(s):
            continue
        r = rollout(goal_field(SQUARE), SQUARE, s)
        if r.success:
            assert not inside_obstacles(SQUARE, r.trajectory).any()


def test_evaluate_examples():
    assert evaluate(goal_field(EMPTY), EMPTY, 0) == 0
    assert evaluate(goal_field(EMPTY), EMPTY, 100, seed=5) == 100


def test_node_field_reads_nearest():
    c = PointCloud(np.array([[0.0, 0.0], [1.0, 1.0]]), 2)
    f = NodeDirectionField(np.array([[1.0, 0.0], [0.0, 1.0]]), c)
    assert f((0.9, 0.8)).tolist() == [0.0, 1.0]


def test_pipeline_roundtrip(tmp_path):
    trained = train_navigation(default_map(), n=120, layers=2, epochs=20, seed=4, hidden=4)
    p = tmp_path / "model.json"
    p.write_text(json.dumps(trained.to_dict()))
    again = load_trained(p)
    assert rollout_table(trained, default_map(), 20, 1) == rollout_table(again, default_map(), 20, 1)
    np.testing.assert_array_equal(again.cloud.points, trained.cloud.points)
    assert all(np.array_equal(a, b) for a, b in zip(again.model.params, trained.model.params))
