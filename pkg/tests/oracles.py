"""Independent brute-force re-derivations used to check the library.

Everything here is deliberately naive and shares no code path with the
implementations it verifies.
"""

from __future__ import annotations

import random
from fractions import Fraction

from minedetect.comm_graph import CommGraph, edge_key


def random_comm_graph(rng: random.Random, n: int, p: float, timestamp: int = 0) -> CommGraph:
    """Erdos-Renyi style test graph over string vertex ids."""
    vertices = [f"v{i:03d}" for i in range(n)]
    weights = {}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                weights[edge_key(vertices[i], vertices[j])] = rng.randint(1, 5)
    return CommGraph(frozenset(vertices), weights, timestamp)


def adjacency_sets(g: CommGraph) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {v: set() for v in g.vertices}
    for a, b in g.edge_weight:
        adj[a].add(b)
        adj[b].add(a)
    return adj


def snn_edges_pairwise_scan(g: CommGraph, k_shared: int) -> set[tuple[str, str]]:
    """Literal pairwise scan: for every pair (i, j), count the vertices m
    adjacent to both, and connect when the count reaches k_shared."""
    adj = adjacency_sets(g)
    order = sorted(g.vertices)
    edges = set()
    for i_pos, i in enumerate(order):
        for j in order[i_pos + 1 :]:
            counter = len(adj[i] & adj[j])  # |{m : i~m and j~m}|
            if counter >= k_shared:
                edges.add(edge_key(i, j))
    return edges


def triangle_count_brute(g: CommGraph, v: str) -> int:
    """Edges among v's neighbors by checking every neighbor pair."""
    nbrs = sorted(g.neighbors(v))
    count = 0
    for i in range(len(nbrs)):
        for j in range(i + 1, len(nbrs)):
            if g.has_edge(nbrs[i], nbrs[j]):
                count += 1
    return count


def clustering_fraction(k: int, triangles: int) -> Fraction:
    """Exact rational local clustering coefficient."""
    if k < 2:
        return Fraction(0)
    return Fraction(2 * triangles, k * (k - 1))


def knn_vote_oracle(
    distances: list[float],
    miner_flags: list[bool],
    k: int,
) -> tuple[bool, float]:
    """Neighbor selection + vote from a precomputed distance list.

    Selection: stable sort by distance (training-set order breaks ties),
    take the first k. Vote: majority; an exact 50/50 tie falls back to the
    nearest neighbor's label. Returns (is_miner, miner_fraction).
    """
    order = sorted(range(len(distances)), key=distances.__getitem__)
    chosen = order[:k]
    miner_votes = sum(1 for i in chosen if miner_flags[i])
    score = miner_votes / k
    if score > 0.5:
        return True, score
    if score < 0.5:
        return False, score
    return miner_flags[chosen[0]], score


def squared_distances_rowwise(queries, matrix):
    """Per-query squared distances accumulated feature by feature.

    Accumulation order matches the canonical per-feature order so float
    rounding is identical to any implementation doing the same scan.
    """
    import numpy as np

    matrix = np.asarray(matrix, dtype=np.float64)
    out = []
    for q in queries:
        d = (matrix[:, 0] - q[0]) ** 2
        for j in range(1, matrix.shape[1]):
            d += (matrix[:, j] - q[j]) ** 2
        out.append(d)
    return out


def roc_auc_pair_counting(scores, labels, positive=True) -> float:
    """O(n^2) pair counting: positive-over-negative wins plus half-ties."""
    pos = [s for s, label in zip(scores, labels) if label == positive]
    neg = [s for s, label in zip(scores, labels) if label != positive]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def roc_auc_threshold_sweep(scores, labels, positive=True) -> float:
    """ROC area by trapezoid over the (fpr, tpr) staircase.

    Sweeping distinct thresholds descending and integrating with
    trapezoids gives tied scores exactly half credit, so this matches the
    midrank formulation without sharing any code with it.
    """
    n_pos = sum(1 for label in labels if label == positive)
    n_neg = len(labels) - n_pos
    area = 0.0
    tp = fp = 0
    tpr_prev = fpr_prev = 0.0
    for threshold in sorted(set(scores), reverse=True):
        for s, label in zip(scores, labels):
            if s == threshold:
                if label == positive:
                    tp += 1
                else:
                    fp += 1
        tpr, fpr = tp / n_pos, fp / n_neg
        area += (fpr - fpr_prev) * (tpr + tpr_prev) / 2.0
        tpr_prev, fpr_prev = tpr, fpr
    return area


def prc_auc_all_thresholds(scores, labels, positive=True) -> float:
    """Enumerate every distinct score as a threshold, accumulate step area."""
    n_pos = sum(1 for label in labels if label == positive)
    area = 0.0
    recall_prev = 0.0
    for threshold in sorted(set(scores), reverse=True):
        tp = sum(1 for s, label in zip(scores, labels) if s >= threshold and label == positive)
        fp = sum(1 for s, label in zip(scores, labels) if s >= threshold and label != positive)
        precision = tp / (tp + fp)
        recall = tp / n_pos
        area += (recall - recall_prev) * precision
        recall_prev = recall
    return area


def fingerprint_match_brute(flow, ports, min_duration, required_flags, pool_hosts) -> bool:
    """Re-evaluate the mining-fingerprint conjunction from scratch."""
    if flow.protocol.value != "TCP":
        return False
    if (flow.end_time - flow.start_time) < min_duration:
        return False
    for flag in required_flags:
        if flag not in flow.flags:
            return False
    return flow.dst_port in ports or flow.dst_host in pool_hosts
