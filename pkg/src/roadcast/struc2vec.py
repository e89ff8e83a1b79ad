"""Structural node embeddings (struc2vec) for the latent graph.

The procedure is the exact, unapproximated one: ordered degree sequences of
k-hop rings, layer-wise structural distances accumulated through dynamic
time warping, a multilayer context graph with similarity-derived weights,
biased random walks over it, and skip-gram with negative sampling over the
walk corpus. Everything is deterministic under the config seed.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

EMPTY_SEQUENCE_PENALTY = 1.0


@dataclass
class Struc2vecConfig:
    max_layer: int = 5
    walks_per_node: int = 10
    walk_length: int = 40
    window: int = 5
    negative_samples: int = 5
    epochs: int = 3
    stay_probability: float = 0.3
    learning_rate: float = 0.025
    dimensions: int = 2
    seed: int = 0

    def __post_init__(self):
        counts = {
            "walks_per_node": self.walks_per_node,
            "walk_length": self.walk_length,
            "window": self.window,
            "negative_samples": self.negative_samples,
            "epochs": self.epochs,
            "dimensions": self.dimensions,
        }
        for name, value in counts.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.max_layer < 0:
            raise ValueError("max_layer must be nonnegative")
        if not (0.0 < self.stay_probability < 1.0):
            raise ValueError("stay_probability must be in (0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


def _element_cost(x, y):
    # ratios are taken over values clamped to >= 1, the convention used for
    # comparing degree sequences
    a = x if x >= 1.0 else 1.0
    b = y if y >= 1.0 else 1.0
    return (a / b if a >= b else b / a) - 1.0


def dtw_cost(a, b):
    """Dynamic-time-warping cost between two degree sequences.

    Empty-vs-nonempty pairs cost one penalty unit per element of the
    nonempty side; two empty sequences cost nothing.
    """
    n, m = len(a), len(b)
    if n == 0 and m == 0:
        return 0.0
    if n == 0 or m == 0:
        return float(max(n, m)) * EMPTY_SEQUENCE_PENALTY
    prev = [math.inf] * (m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur = [math.inf] * (m + 1)
        ai = a[i - 1]
        for j in range(1, m + 1):
            c = _element_cost(ai, b[j - 1])
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = c + best
        prev = cur
    return prev[m]


def _neighbor_sets(adjacency):
    adj = np.asarray(adjacency)
    n = adj.shape[0]
    sym = (adj != 0) | (adj.T != 0)
    np.fill_diagonal(sym, False)
    return [set(np.flatnonzero(sym[i]).tolist()) for i in range(n)]


def _hop_distances(neighbors, src):
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in neighbors[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def graph_diameter(neighbors):
    """Largest finite hop distance over the undirected view."""
    best = 0
    for src in range(len(neighbors)):
        dist = _hop_distances(neighbors, src)
        best = max(best, max(dist.values()))
    return best


def ring_degree_sequences(neighbors, max_k):
    """Per node, the sorted degree sequence of each k-hop ring, k = 0..max_k.

    Ring 0 is the node itself; rings past a node's eccentricity are empty.
    """
    n = len(neighbors)
    degrees = np.array([len(neighbors[i]) for i in range(n)], dtype=np.float64)
    sequences = []
    for src in range(n):
        dist = _hop_distances(neighbors, src)
        rings = [[] for _ in range(max_k + 1)]
        for node, d in dist.items():
            if d <= max_k:
                rings[d].append(degrees[node])
        sequences.append([np.array(sorted(r)) for r in rings])
    return sequences


def structural_distances(sequences, max_k):
    """Layered structural distance f_k(u, v), cumulative over ring DTW costs."""
    n = len(sequences)
    f = np.zeros((max_k + 1, n, n))
    for k in range(max_k + 1):
        base = f[k - 1] if k > 0 else 0.0
        for u in range(n):
            for v in range(u + 1, n):
                cost = dtw_cost(sequences[u][k], sequences[v][k])
                total = (base[u, v] if k > 0 else 0.0) + cost
                f[k, u, v] = total
                f[k, v, u] = total
    return f


class _MultilayerGraph:
    """Walk weights of the layered context graph."""

    def __init__(self, f):
        self.n_layers, self.n, _ = f.shape
        self.intra = np.exp(-f)
        for k in range(self.n_layers):
            np.fill_diagonal(self.intra[k], 0.0)
        # per layer: chance of moving up grows with how many of the node's
        # edges are heavier than the layer average
        self.up_weight = np.empty((self.n_layers, self.n))
        for k in range(self.n_layers):
            w = self.intra[k]
            if self.n > 1:
                avg = w.sum() / (self.n * (self.n - 1))
                gamma = (w > avg).sum(axis=1)
            else:
                gamma = np.zeros(self.n)
            self.up_weight[k] = np.log(gamma + math.e)
        # cumulative intra-layer distributions for O(log n) sampling
        self.candidates = [np.array([j for j in range(self.n) if j != i]) for i in range(self.n)]
        self.cumulative = np.empty((self.n_layers, self.n, max(self.n - 1, 1)))
        for k in range(self.n_layers):
            for i in range(self.n):
                weights = self.intra[k, i, self.candidates[i]] if self.n > 1 else np.array([1.0])
                self.cumulative[k, i] = np.cumsum(weights)

    def sample_neighbor(self, layer, node, rng):
        if self.n == 1:
            return node
        cum = self.cumulative[layer, node]
        r = rng.random() * cum[-1]
        return int(self.candidates[node][np.searchsorted(cum, r, side="right")])


def generate_walks(graph, cfg, seed_seq):
    """Biased walks: stay in the layer (and emit a node) or shift layers."""
    walks = []
    starts = [(node, w) for w in range(cfg.walks_per_node) for node in range(graph.n)]
    streams = seed_seq.spawn(len(starts))
    top = graph.n_layers - 1
    for (start, _), child in zip(starts, streams):
        rng = np.random.default_rng(child)
        node, layer = start, 0
        walk = [node]
        while len(walk) < cfg.walk_length:
            if rng.random() < cfg.stay_probability:
                node = graph.sample_neighbor(layer, node, rng)
                walk.append(node)
            elif top == 0:
                continue
            elif layer == 0:
                layer = 1
            elif layer == top:
                layer -= 1
            else:
                up = graph.up_weight[layer, node]
                layer += 1 if rng.random() < up / (up + 1.0) else -1
        walks.append(walk)
    return walks


def _train_skipgram(walks, n_nodes, cfg, seed_seq):
    rng = np.random.default_rng(seed_seq.spawn(1)[0])
    dim = cfg.dimensions
    emb_in = rng.uniform(-0.5 / dim, 0.5 / dim, size=(n_nodes, dim))
    emb_out = np.zeros((n_nodes, dim))

    counts = np.zeros(n_nodes)
    for walk in walks:
        for node in walk:
            counts[node] += 1
    noise = counts**0.75
    noise_cum = np.cumsum(noise)
    noise_total = noise_cum[-1]

    pairs = []
    for wi, walk in enumerate(walks):
        for i, center in enumerate(walk):
            lo = max(0, i - cfg.window)
            hi = min(len(walk), i + cfg.window + 1)
            for j in range(lo, hi):
                if j != i:
                    pairs.append((center, walk[j]))
    pairs = np.array(pairs, dtype=np.int64)
    total_updates = max(len(pairs) * cfg.epochs, 1)
    lr0, lr_min = cfg.learning_rate, 1e-4
    labels = np.zeros(1 + cfg.negative_samples)
    labels[0] = 1.0

    done = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        for idx in order:
            center, context = pairs[idx]
            targets = np.empty(1 + cfg.negative_samples, dtype=np.int64)
            targets[0] = context
            for t in range(cfg.negative_samples):
                while True:
                    draw = int(np.searchsorted(noise_cum, rng.random() * noise_total, side="right"))
                    if draw != context:
                        break
                targets[t + 1] = draw
            lr = max(lr_min, lr0 * (1.0 - done / total_updates))
            h = emb_in[center]
            vs = emb_out[targets]
            z = vs @ h
            with np.errstate(over="ignore"):
                p = 1.0 / (1.0 + np.exp(-z))
            coef = (labels - p) * lr
            emb_in[center] = h + coef @ vs
            emb_out[targets] += coef[:, None] * h
            done += 1
    return emb_in


def struc2vec_embed(adjacency, cfg):
    """Structural embedding rows for each node of a binary adjacency matrix.

    The graph is treated as undirected and unweighted. The number of layers
    is ``cfg.max_layer`` capped at the graph diameter.
    """
    adj = np.asarray(adjacency)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError(f"adjacency must be square, got {adj.shape}")
    n = adj.shape[0]
    if n == 0:
        raise ValueError("empty graph")
    neighbors = _neighbor_sets(adj)
    max_k = min(cfg.max_layer, graph_diameter(neighbors))
    sequences = ring_degree_sequences(neighbors, max_k)
    f = structural_distances(sequences, max_k)
    graph = _MultilayerGraph(f)
    seed_seq = np.random.SeedSequence(cfg.seed)
    walk_seeds, sg_seeds = seed_seq.spawn(2)
    walks = generate_walks(graph, cfg, walk_seeds)
    return _train_skipgram(walks, n, cfg, sg_seeds)
