"""Navigation control with graph filters learned on a sampled free space.

Free space is a rectangle minus rectangular obstacles. Samples become a
kernel graph whose blocked pairs have zero weight; shortest paths from a
few start nodes label their nodes with the unit direction to the next
node, and a layered tap-bank filter learns to predict directions for all
nodes from the node positions (in goal-centred coordinates).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .errors import Diverged, InvalidArgument, MapInfeasible
from .graph import GeometricGraph, build_graph
from .manifold import PointCloud

log = logging.getLogger(__name__)

N_TAPS = 5
# reference success counts over 100 test starts, keyed by (layers, n)
REFERENCE_SUCCESSES = {(1, 413): 74, (2, 413): 79, (1, 1117): 75, (2, 1117): 84}


@dataclass(frozen=True)
class NavMap:
    bounds: tuple  # (x0, y0, x1, y1)
    obstacles: tuple = ()  # of (x0, y0, x1, y1)
    goal: tuple = (1.0, 1.0)

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        if len(b) != 4 or not (b[0] < b[2] and b[1] < b[3]):
            raise InvalidArgument(f"bad bounds {self.bounds}")
        obs = []
        for o in self.obstacles:
            o = tuple(float(v) for v in o)
            if len(o) != 4 or not (o[0] < o[2] and o[1] < o[3]):
                raise InvalidArgument(f"bad obstacle {o}")
            if o[0] < b[0] or o[1] < b[1] or o[2] > b[2] or o[3] > b[3]:
                raise InvalidArgument(f"obstacle {o} leaves the map bounds")
            obs.append(o)
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "obstacles", tuple(obs))
        object.__setattr__(self, "goal", tuple(float(v) for v in self.goal))
        if not self.in_bounds(self.goal) or self.blocked(self.goal):
            raise InvalidArgument("goal must lie in free space")

    def in_bounds(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    def blocked(self, p) -> bool:
        return bool(inside_obstacles(self, np.asarray(p, dtype=float)[None, :])[0])

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.bounds
        return (x1 - x0) * (y1 - y0)

    def to_dict(self) -> dict:
        return {
            "bounds": list(self.bounds),
            "obstacles": [list(o) for o in self.obstacles],
            "goal": list(self.goal),
        }

    @classmethod
    def from_dict(cls, d) -> "NavMap":
        return cls(tuple(d["bounds"]), tuple(tuple(o) for o in d.get("obstacles", ())), tuple(d["goal"]))

    @classmethod
    def load(cls, path) -> "NavMap":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_map() -> NavMap:
    """Unit square split by a central wall; the goal sits behind it on the right."""
    return NavMap(bounds=(0.0, 0.0, 1.0, 1.0), obstacles=((0.45, 0.25, 0.55, 0.75),), goal=(0.85, 0.5))


def inside_obstacles(nav_map: NavMap, pts) -> np.ndarray:
    """Boolean mask of points inside or on the boundary of any obstacle."""
    pts = np.atleast_2d(pts)
    mask = np.zeros(len(pts), dtype=bool)
    for x0, y0, x1, y1 in nav_map.obstacles:
        mask |= (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
    return mask


def _segments_hit(p, q, rect) -> np.ndarray:
    """Slab test: does segment p->q (arrays of shape (m, 2)) meet the closed rectangle?"""
    lo = np.array(rect[:2])
    hi = np.array(rect[2:])
    d = q - p
    t0 = np.zeros(len(p))
    t1 = np.ones(len(p))
    for ax in range(2):
        da, pa = d[:, ax], p[:, ax]
        par = da == 0
        outside = par & ((pa < lo[ax]) | (pa > hi[ax]))
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (lo[ax] - pa) / da
            tb = (hi[ax] - pa) / da
        tmin = np.where(par, -np.inf, np.minimum(ta, tb))
        tmax = np.where(par, np.inf, np.maximum(ta, tb))
        t0 = np.maximum(t0, tmin)
        t1 = np.minimum(t1, tmax)
        t1 = np.where(outside, -1.0, t1)
    return t0 <= t1


def visible(nav_map: NavMap, p, q) -> bool:
    """True iff the segment from ``p`` to ``q`` stays clear of all obstacles."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if not (nav_map.in_bounds(p) and nav_map.in_bounds(q)):
        raise InvalidArgument("points must lie within the map bounds")
    for rect in nav_map.obstacles:
        if _segments_hit(p[None], q[None], rect)[0]:
            return False
    return True


def visibility_matrix(nav_map: NavMap, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    iu, ju = np.triu_indices(n, k=1)
    ok = np.ones(len(iu), dtype=bool)
    for rect in nav_map.obstacles:
        ok &= ~_segments_hit(pts[iu], pts[ju], rect)
    vis = np.ones((n, n), dtype=bool)
    vis[iu, ju] = ok
    vis[ju, iu] = ok
    return vis


def _draw_free(nav_map: NavMap, n: int, rng) -> np.ndarray:
    x0, y0, x1, y1 = nav_map.bounds
    accepted, draws = [], 0
    count = 0
    while count < n:
        batch = max(2 * (n - count), 1024)
        pts = np.column_stack([rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)])
        draws += batch
        keep = pts[~inside_obstacles(nav_map, pts)]
        accepted.append(keep)
        count += len(keep)
        if draws >= 1_000_000 and count / draws < 0.01:
            raise MapInfeasible(f"acceptance rate {count / draws:.4%} after {draws} draws")
    return np.concatenate(accepted)[:n] if accepted else np.empty((0, 2))


def sample_free_space(nav_map: NavMap, n: int, seed: int) -> PointCloud:
    """Rejection-sample ``n`` uniform points outside all obstacles."""
    pts = _draw_free(nav_map, n, np.random.default_rng(seed))
    return PointCloud(pts, 2, None, seed)


def default_nav_epsilon() -> float:
    return 0.005


def build_nav_graph(nav_map: NavMap, cloud: PointCloud, epsilon: Optional[float] = None) -> GeometricGraph:
    eps = default_nav_epsilon() if epsilon is None else epsilon
    return build_graph(cloud, eps, "obstacle_aware", nav_map)


@dataclass(frozen=True)
class NavDataset:
    cloud: PointCloud
    labeled_indices: np.ndarray
    labels: np.ndarray
    goal_index: int
    trajectories: tuple = ()
    skipped: int = 0
    distances: Optional[np.ndarray] = field(default=None, repr=False)

    def to_csv(self) -> str:
        lines = ["index,x,y,label_x,label_y"]
        for i, (lx, ly) in zip(self.labeled_indices, self.labels):
            x, y = self.cloud.points[i]
            lines.append(f"{i}," + ",".join(format(v, ".17g") for v in (x, y, lx, ly)))
        return "\n".join(lines) + "\n"


def path_edges(graph: GeometricGraph, cloud: PointCloud, radius: Optional[float] = None) -> csr_matrix:
    """Euclidean edge lengths between visible pairs within ``radius``.

    Gaussian weights never vanish, so pairs are kept when their distance is
    at most ``radius`` (default ``sqrt(eps)``, one kernel length) and their
    kernel weight is positive.
    """
    r = math.sqrt(graph.epsilon) if radius is None else radius
    pts = cloud.points
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    keep = (graph.adjacency > 0) & (dist <= r)
    np.fill_diagonal(keep, False)
    return csr_matrix(np.where(keep, dist, 0.0))


def dijkstra_labels(
    graph: GeometricGraph,
    cloud: PointCloud,
    nav_map: NavMap,
    n_trajectories: int = 4,
    seed: int = 0,
    radius: Optional[float] = None,
    starts: Optional[Sequence[int]] = None,
) -> NavDataset:
    """Shortest-path trajectories to the goal node, labelled with unit directions.

    The goal node is the sample nearest ``nav_map.goal``. Each trajectory
    node gets the unit vector towards its successor; starts that cannot
    reach the goal are skipped and counted.
    """
    pts = cloud.points
    goal = int(np.argmin(((pts - np.asarray(nav_map.goal)) ** 2).sum(axis=1)))
    edges = path_edges(graph, cloud, radius)
    dist, pred = dijkstra(edges, directed=False, indices=goal, return_predecessors=True)
    if starts is None:
        rng = np.random.default_rng(seed)
        starts = rng.choice(cloud.n, size=n_trajectories, replace=False)
    labels = {}
    trajectories, skipped = [], 0
    for s in (int(s) for s in starts):
        if not np.isfinite(dist[s]):
            skipped += 1
            continue
        path = [s]
        while path[-1] != goal:
            path.append(int(pred[path[-1]]))
        trajectories.append(tuple(path))
        for u, v in zip(path, path[1:]):
            step = pts[v] - pts[u]
            labels[u] = step / np.linalg.norm(step)
    if skipped:
        log.warning("%d start node(s) cannot reach the goal and were skipped", skipped)
    idx = np.array(sorted(labels), dtype=int)
    lab = np.array([labels[i] for i in idx]).reshape(-1, 2)
    return NavDataset(cloud, idx, lab, goal, tuple(trajectories), skipped, dist)


def normalized_gso(adjacency, iters: int = 500, tol: float = 1e-12) -> np.ndarray:
    """Adjacency divided by its largest eigenvalue (power iteration)."""
    W = np.asarray(adjacency, dtype=float)
    v = np.ones(len(W)) / math.sqrt(len(W))
    lam = 0.0
    for _ in range(iters):
        w = W @ v
        new = float(np.linalg.norm(w))
        if new == 0:
            raise InvalidArgument("adjacency is zero")
        v = w / new
        if abs(new - lam) <= tol * new:
            lam = new
            break
        lam = new
    return W / lam


@dataclass(frozen=True)
class FilterLayer:
    taps: np.ndarray  # (N_TAPS, f_in, f_out)
    nonlinearity: str = "none"

    def __post_init__(self):
        if self.nonlinearity not in ("tanh", "none"):
            raise InvalidArgument(f"unknown nonlinearity {self.nonlinearity!r}")
        t = np.array(self.taps, dtype=float)
        if t.ndim != 3:
            raise InvalidArgument("taps must have shape (taps, in_features, out_features)")
        object.__setattr__(self, "taps", t)


@dataclass(frozen=True)
class FilterNet:
    gso: np.ndarray
    layers: tuple

    @property
    def feature_widths(self) -> list[int]:
        return [self.layers[0].taps.shape[1]] + [l.taps.shape[2] for l in self.layers]

    @property
    def params(self) -> list[np.ndarray]:
        return [l.taps for l in self.layers]

    def with_params(self, params) -> "FilterNet":
        return replace(self, layers=tuple(replace(l, taps=p) for l, p in zip(self.layers, params)))

    def to_dict(self) -> dict:
        return {"layers": [{"taps": l.taps.tolist(), "nonlinearity": l.nonlinearity} for l in self.layers]}

    @classmethod
    def from_dict(cls, d, gso) -> "FilterNet":
        return cls(np.asarray(gso), tuple(FilterLayer(np.array(l["taps"]), l["nonlinearity"]) for l in d["layers"]))


def init_filter_net(gso, n_layers: int = 1, hidden: int = 32, seed: int = 0, nonlinearity: str = "tanh") -> FilterNet:
    """Tap banks drawn uniformly from [-0.1, 0.1]; 2 features in and out."""
    if n_layers < 1:
        raise InvalidArgument("need at least one layer")
    widths = [2] + [hidden] * (n_layers - 1) + [2]
    rng = np.random.default_rng(seed)
    layers = []
    for li, (fi, fo) in enumerate(zip(widths, widths[1:])):
        last = li == n_layers - 1
        taps = rng.uniform(-0.1, 0.1, size=(N_TAPS, fi, fo))
        layers.append(FilterLayer(taps, "none" if last else nonlinearity))
    return FilterNet(np.asarray(gso, dtype=float), tuple(layers))


def _powers(S, Z, k):
    out = [Z]
    for _ in range(k - 1):
        out.append(S @ out[-1])
    return out


def forward(net: FilterNet, X, return_cache: bool = False):
    Z = np.asarray(X, dtype=float)
    cache = []
    for layer in net.layers:
        P = _powers(net.gso, Z, layer.taps.shape[0])
        U = sum(p @ h for p, h in zip(P, layer.taps))
        Z = np.tanh(U) if layer.nonlinearity == "tanh" else U
        cache.append((P, Z))
    return (Z, cache) if return_cache else Z


def loss_and_grad(net: FilterNet, X, idx, labels):
    """Mean over labelled nodes of the squared error, and its gradients."""
    Y, cache = forward(net, X, return_cache=True)
    idx = np.asarray(idx, dtype=int)
    m = len(idx)
    if m == 0:
        raise InvalidArgument("no labelled nodes")
    resid = Y[idx] - labels
    loss = float((resid**2).sum() / m)
    dZ = np.zeros_like(Y)
    dZ[idx] = 2.0 * resid / m
    grads = [None] * len(net.layers)
    for li in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[li]
        P, A = cache[li]
        dU = dZ * (1.0 - A**2) if layer.nonlinearity == "tanh" else dZ
        grads[li] = np.stack([p.T @ dU for p in P])
        if li:
            G = dU @ layer.taps[-1].T
            for h in layer.taps[-2::-1]:
                G = net.gso @ G + dU @ h.T
            dZ = G
    return loss, grads


def node_features(cloud: PointCloud, nav_map: NavMap) -> np.ndarray:
    return cloud.points - np.asarray(nav_map.goal)


def train_filter(
    model: FilterNet,
    X,
    data: NavDataset,
    epochs: int = 3000,
    lr: float = 2e-4,
    reduction: str = "sum",
) -> tuple[FilterNet, list[float]]:
    """Full-batch gradient descent on the labelled nodes.

    The recorded loss is the mean over labelled nodes. With ``reduction="sum"``
    each update uses the summed per-node gradient, so one epoch moves as far
    as a pass of single-sample steps would; ``"mean"`` steps on the mean loss.
    Returns the trained model and the loss recorded before each update.
    """
    if reduction not in ("sum", "mean"):
        raise InvalidArgument(f"unknown reduction {reduction!r}")
    step = lr * (len(data.labeled_indices) if reduction == "sum" else 1)
    params = [p.copy() for p in model.params]
    history = []
    for epoch in range(epochs):
        loss, grads = loss_and_grad(model.with_params(params), X, data.labeled_indices, data.labels)
        if not math.isfinite(loss):
            raise Diverged(epoch, loss)
        history.append(loss)
        for p, g in zip(params, grads):
            p -= step * g
    return model.with_params(params), history


class NodeDirectionField:
    """Direction read at the sample node nearest to the query point."""

    def __init__(self, directions, cloud: PointCloud):
        self.directions = np.asarray(directions, dtype=float)
        self.tree = cKDTree(cloud.points)

    def __call__(self, p):
        _, i = self.tree.query(p)
        return self.directions[i]


@dataclass(frozen=True)
class Rollout:
    trajectory: np.ndarray
    success: bool
    steps: int
    reason: str


def rollout(
    field: Callable,
    nav_map: NavMap,
    start,
    step_size: float = 0.02,
    max_steps: int = 300,
    goal_radius: float = 0.05,
) -> Rollout:
    """Follow normalized field directions until goal, collision or step limit."""
    p = np.asarray(start, dtype=float)
    goal = np.asarray(nav_map.goal)
    traj = [p]
    steps = 0
    while True:
        if np.linalg.norm(p - goal) <= goal_radius:
            return Rollout(np.array(traj), True, steps, "goal")
        if steps >= max_steps:
            return Rollout(np.array(traj), False, steps, "max_steps")
        d = np.asarray(field(p), dtype=float)
        norm = np.linalg.norm(d)
        if not norm > 0 or not math.isfinite(norm):
            return Rollout(np.array(traj), False, steps, "stalled")
        q = p + step_size * d / norm
        if not nav_map.in_bounds(q):
            return Rollout(np.array(traj), False, steps, "out_of_bounds")
        if not visible(nav_map, p, q):
            return Rollout(np.array(traj), False, steps, "collision")
        p = q
        traj.append(p)
        steps += 1


def model_field(model: FilterNet, cloud: PointCloud, nav_map: NavMap) -> NodeDirectionField:
    return NodeDirectionField(forward(model, node_features(cloud, nav_map)), cloud)


def test_starts(nav_map: NavMap, n_tests: int, seed: int) -> np.ndarray:
    return _draw_free(nav_map, n_tests, np.random.default_rng(seed)) if n_tests else np.empty((0, 2))


def evaluate(
    field: Callable,
    nav_map: NavMap,
    n_tests: int = 100,
    seed: int = 0,
    **rollout_kw,
) -> int:
    """Number of successful rollouts from ``n_tests`` seeded free-space starts."""
    return sum(rollout(field, nav_map, s, **rollout_kw).success for s in test_starts(nav_map, n_tests, seed))


def derived_seeds(seed: int) -> dict:
    """Independent integer seeds for each random stage of the pipeline."""
    names = ("cloud", "labels", "init", "tests")
    kids = np.random.SeedSequence(seed).spawn(len(names))
    return {k: int(c.generate_state(1)[0]) for k, c in zip(names, kids)}


@dataclass
class TrainedNav:
    nav_map: NavMap
    cloud: PointCloud
    graph: GeometricGraph
    dataset: NavDataset
    model: FilterNet
    history: list
    meta: dict

    def field(self) -> NodeDirectionField:
        return model_field(self.model, self.cloud, self.nav_map)

    def to_dict(self) -> dict:
        return {"meta": self.meta, "map": self.nav_map.to_dict(), "model": self.model.to_dict()}


def _prepare(nav_map: NavMap, n: int, seed: int, epsilon, n_trajectories: int):
    seeds = derived_seeds(seed)
    cloud = sample_free_space(nav_map, n, seeds["cloud"])
    graph = build_nav_graph(nav_map, cloud, epsilon)
    data = dijkstra_labels(graph, cloud, nav_map, n_trajectories, seed=seeds["labels"])
    return seeds, cloud, graph, data


def train_navigation(
    nav_map: NavMap,
    n: int = 413,
    layers: int = 2,
    epochs: int = 3000,
    lr: float = 2e-4,
    seed: int = 0,
    epsilon: Optional[float] = None,
    n_trajectories: int = 4,
    hidden: int = 32,
    nonlinearity: str = "tanh",
    reduction: str = "sum",
) -> TrainedNav:
    """Sample, label, build the filter and train it; all randomness derives from ``seed``."""
    eps = default_nav_epsilon() if epsilon is None else float(epsilon)
    seeds, cloud, graph, data = _prepare(nav_map, n, seed, eps, n_trajectories)
    if len(data.labeled_indices) == 0:
        raise InvalidArgument("no labelled nodes: every trajectory was empty or skipped")
    net = init_filter_net(normalized_gso(graph.adjacency), layers, hidden, seeds["init"], nonlinearity)
    model, history = train_filter(net, node_features(cloud, nav_map), data, epochs, lr, reduction)
    meta = {
        "n": n, "layers": layers, "epochs": epochs, "lr": lr, "seed": seed, "epsilon": eps,
        "n_trajectories": n_trajectories, "hidden": hidden, "nonlinearity": nonlinearity,
        "reduction": reduction,
    }
    return TrainedNav(nav_map, cloud, graph, data, model, history, meta)


def load_trained(path) -> TrainedNav:
    """Rebuild a saved model; the cloud and graph are regenerated from the stored seed."""
    with open(path) as fh:
        body = json.load(fh)
    meta, nav_map = body["meta"], NavMap.from_dict(body["map"])
    _, cloud, graph, data = _prepare(nav_map, meta["n"], meta["seed"], meta["epsilon"], meta["n_trajectories"])
    model = FilterNet.from_dict(body["model"], normalized_gso(graph.adjacency))
    return TrainedNav(nav_map, cloud, graph, data, model, [], meta)


def rollout_table(trained: TrainedNav, nav_map: NavMap, n_tests: int = 100, seed: int = 0, **rollout_kw) -> list:
    """Per-test ``(start_x, start_y, steps, reason, success)`` rows."""
    field_ = model_field(trained.model, trained.cloud, nav_map)
    starts = test_starts(nav_map, n_tests, derived_seeds(seed)["tests"])
    rows = []
    for s in starts:
        r = rollout(field_, nav_map, s, **rollout_kw)
        rows.append((float(s[0]), float(s[1]), r.steps, r.reason, r.success))
    return rows
