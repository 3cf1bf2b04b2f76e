"""Latent-space graph construction and goal-distance precomputation.

Filtered state embeddings are clustered by a single sequential pass that
keeps cluster centers roughly half an edge length apart, cluster means
become graph nodes, and nodes within the edge length are connected. Because
states from different trajectories land in shared clusters, paths in this
graph compose behavior across trajectories.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

import numpy as np

from gas import te


class GraphBuildError(RuntimeError):
    pass


@dataclass
class Clustering:
    centers: np.ndarray      # (K, d) cluster means
    seed_indices: np.ndarray  # (K,) index into the input for each seed point
    assignments: np.ndarray  # (M,) cluster id per input point


def td_aware_cluster(latents: np.ndarray, h_td: float) -> Clustering:
    """One sequential pass: a point joins its nearest existing center when
    within h_td / 2, otherwise it seeds a new cluster; afterwards every
    center is replaced by the mean of its assigned points. Seeds are
    pairwise more than h_td / 2 apart by construction."""
    pts = np.asarray(latents, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise GraphBuildError("no states survived TE filtering")
    m = pts.shape[0]
    threshold = h_td / 2.0
    centers = np.empty_like(pts)
    centers[0] = pts[0]
    n_centers = 1
    seed_indices = [0]
    assignments = np.zeros(m, dtype=np.int64)
    for i in range(1, m):
        d = np.linalg.norm(centers[:n_centers] - pts[i], axis=1)
        nearest = int(np.argmin(d))
        if d[nearest] > threshold:
            centers[n_centers] = pts[i]
            assignments[i] = n_centers
            seed_indices.append(i)
            n_centers += 1
        else:
            assignments[i] = nearest
    means = np.zeros((n_centers, pts.shape[1]))
    counts = np.zeros(n_centers)
    np.add.at(means, assignments, pts)
    np.add.at(counts, assignments, 1.0)
    means /= counts[:, None]
    return Clustering(
        centers=means,
        seed_indices=np.asarray(seed_indices, dtype=np.int64),
        assignments=assignments,
    )


def connect_edges(nodes: np.ndarray, h_td: float) -> list[tuple[int, int, float]]:
    """All unordered node pairs with Euclidean distance <= h_td (inclusive),
    weighted by that distance. O(K^2) pair scan; candidates are prefiltered
    vectorized, then each edge weight is the per-pair norm so results match
    a pairwise scan bit for bit."""
    pts = np.asarray(nodes, dtype=np.float64)
    k = pts.shape[0]
    if k == 0:
        raise GraphBuildError("cannot connect edges of an empty node set")
    slack = h_td * (1.0 + 1e-12) + 1e-12
    edges = []
    for i in range(k - 1):
        d = np.linalg.norm(pts[i + 1 :] - pts[i], axis=1)
        for off in np.nonzero(d <= slack)[0]:
            j = i + 1 + int(off)
            w = float(np.linalg.norm(pts[i] - pts[j]))
            if w <= h_td:
                edges.append((i, j, w))
    return edges


@dataclass
class TdGraph:
    nodes: np.ndarray                       # (K, d) float64
    edges: list[tuple[int, int, float]]     # (i, j, weight), i < j, undirected
    h_td: float
    meta: dict = field(default_factory=dict)
    _adj: list | None = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def adjacency(self) -> list[list[tuple[int, float]]]:
        if self._adj is None:
            adj = [[] for _ in range(self.n_nodes)]
            for i, j, w in self.edges:
                adj[i].append((j, w))
                adj[j].append((i, w))
            self._adj = adj
        return self._adj


@dataclass
class GoalDistances:
    dists: np.ndarray       # (K,) shortest path length to the goal, +inf unreachable
    goal_latent: np.ndarray


def dijkstra_from_goal(goal_latent: np.ndarray, graph: TdGraph) -> GoalDistances:
    """Shortest distance from every node to a virtual goal node. The goal
    attaches to all nodes within h_td (weight = direct latent distance), or
    to its single nearest node when none qualifies."""
    if graph.n_nodes == 0:
        raise GraphBuildError("empty graph")
    goal = np.asarray(goal_latent, dtype=np.float64)
    direct = np.linalg.norm(graph.nodes - goal, axis=1)
    attached = np.nonzero(direct <= graph.h_td)[0]
    if attached.size == 0:
        attached = np.array([int(np.argmin(direct))])
    dists = np.full(graph.n_nodes, np.inf)
    heap = [(float(direct[i]), int(i)) for i in attached]
    heapq.heapify(heap)
    adj = graph.adjacency()
    while heap:
        d, u = heapq.heappop(heap)
        if d >= dists[u]:
            continue
        dists[u] = d
        for v, w in adj[u]:
            nd = d + w
            if nd < dists[v]:
                heapq.heappush(heap, (nd, v))
    return GoalDistances(dists=dists, goal_latent=goal)


# --- ablation baselines -------------------------------------------------------


def baseline_nodes_fps(latents: np.ndarray, k: int) -> np.ndarray:
    """Greedy farthest-point selection starting from the first point; ties
    broken by lowest index."""
    pts = np.asarray(latents, dtype=np.float64)
    if k <= 0:
        raise GraphBuildError("node count must be positive")
    if k > pts.shape[0]:
        raise GraphBuildError("cannot select more nodes than points")
    chosen = [0]
    min_d = np.linalg.norm(pts - pts[0], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1))
    return pts[chosen]


def _sq_dists(pts: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (pts * pts).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * pts @ centers.T
    )
    return np.maximum(d2, 0.0)


def baseline_nodes_kmeans(latents: np.ndarray, k: int, iters: int = 25, seed: int = 0) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations."""
    pts = np.asarray(latents, dtype=np.float64)
    if k <= 0:
        raise GraphBuildError("node count must be positive")
    if k > pts.shape[0]:
        raise GraphBuildError("cannot select more nodes than points")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[int(rng.integers(pts.shape[0]))]
    closest_sq = np.sum((pts - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = closest_sq.sum()
        if total <= 0:
            centers[c:] = pts[rng.integers(pts.shape[0], size=k - c)]
            break
        probs = closest_sq / total
        centers[c] = pts[int(rng.choice(pts.shape[0], p=probs))]
        closest_sq = np.minimum(closest_sq, np.sum((pts - centers[c]) ** 2, axis=1))
    for _ in range(iters):
        assign = np.argmin(_sq_dists(pts, centers), axis=1)
        for c in range(k):
            mask = assign == c
            if mask.any():
                centers[c] = pts[mask].mean(axis=0)
    return centers


def kmeans_objective(latents: np.ndarray, centers: np.ndarray) -> float:
    pts = np.asarray(latents, dtype=np.float64)
    return float(_sq_dists(pts, centers).min(axis=1).sum())


# --- end-to-end build ---------------------------------------------------------


def build_graph(
    data,
    tdr_model,
    h_td: float,
    te_thresh: float | None,
    node_method: str = "gas",
    node_count: int | None = None,
    kmeans_iters: int = 25,
    seed: int = 0,
    cross_trajectory: bool = True,
) -> TdGraph:
    """Filter -> cluster -> connect. `te_thresh=None` skips filtering and
    clusters every state. `cross_trajectory=False` builds each trajectory's
    clusters and edges in isolation (no-stitching control)."""
    if te_thresh is None:
        filtered = te.all_states(data, tdr_model)
    else:
        filtered = te.filter_states(data, tdr_model, h_td, te_thresh)
    if len(filtered) == 0:
        raise GraphBuildError("no states survived TE filtering")

    if not cross_trajectory:
        if node_method != "gas":
            raise GraphBuildError("per-trajectory graphs only support the gas node method")
        nodes_parts, edges = [], []
        offset = 0
        for tid in np.unique(filtered.traj_ids):
            pts = filtered.latents[filtered.traj_ids == tid]
            clustering = td_aware_cluster(pts, h_td)
            part = clustering.centers
            edges.extend(
                (i + offset, j + offset, w) for i, j, w in connect_edges(part, h_td)
            )
            nodes_parts.append(part)
            offset += part.shape[0]
        nodes = np.concatenate(nodes_parts)
    elif node_method == "gas":
        nodes = td_aware_cluster(filtered.latents, h_td).centers
        edges = connect_edges(nodes, h_td)
    elif node_method in ("fps", "kmeans"):
        if node_count is None:
            node_count = td_aware_cluster(filtered.latents, h_td).centers.shape[0]
        if node_method == "fps":
            nodes = baseline_nodes_fps(filtered.latents, node_count)
        else:
            nodes = baseline_nodes_kmeans(filtered.latents, node_count, iters=kmeans_iters, seed=seed)
        edges = connect_edges(nodes, h_td)
    else:
        raise GraphBuildError(f"unknown node method {node_method!r}")

    meta = {
        "te_thresh": te_thresh,
        "node_method": node_method,
        "cross_trajectory": cross_trajectory,
        "dataset_style": getattr(data, "style", ""),
        "dataset_seed": getattr(data, "seed", 0),
        "n_states": int(data.n_states),
        "n_filtered": int(len(filtered)),
        "n_nodes": int(nodes.shape[0]),
        "n_edges": int(len(edges)),
    }
    return TdGraph(nodes=nodes, edges=edges, h_td=float(h_td), meta=meta)


# --- persistence -------------------------------------------------------------


def save_graph(path, graph: TdGraph) -> None:
    payload = {
        "version": 1,
        "h_td": graph.h_td,
        "te_thresh": graph.meta.get("te_thresh"),
        "nodes": [[float(v) for v in row] for row in graph.nodes],
        "edges": [[int(i), int(j), float(w)] for i, j, w in graph.edges],
        "meta": graph.meta,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)
        f.write("\n")


def load_graph(path) -> TdGraph:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("version") != 1:
        raise ValueError("unsupported graph file version")
    nodes = np.asarray(payload["nodes"], dtype=np.float64)
    if nodes.ndim != 2:
        nodes = nodes.reshape(0, 0)
    edges = [(int(i), int(j), float(w)) for i, j, w in payload["edges"]]
    return TdGraph(nodes=nodes, edges=edges, h_td=float(payload["h_td"]), meta=payload["meta"])
