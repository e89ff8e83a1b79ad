"""Construction of the two sensor graphs driving the forecaster.

The distance graph thresholds a Gaussian kernel of all-pairs shortest-path
road distances. The latent graph applies the same kernel to hyperbolic
distances between structural node embeddings (see :mod:`roadcast.struc2vec`),
so sensors that sit in similar road-network structures get connected even
when they are far apart.
"""

from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

UNIT_DISK_HEADROOM = 1.05


@dataclass
class RoadNetwork:
    """Directed weighted sensor graph with 2-D sensor coordinates."""

    sensor_ids: list[str]
    coordinates: np.ndarray  # (N, 2) longitude/latitude per sensor
    edges: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.coordinates = np.asarray(self.coordinates, dtype=np.float64)
        if len(set(self.sensor_ids)) != len(self.sensor_ids):
            dupes = sorted({s for s in self.sensor_ids if self.sensor_ids.count(s) > 1})
            raise DataError(f"duplicate sensor ids: {dupes}")
        if self.coordinates.shape != (len(self.sensor_ids), 2):
            raise DataError(
                f"coordinates shape {self.coordinates.shape} does not match {len(self.sensor_ids)} sensors"
            )
        if not np.all(np.isfinite(self.coordinates)):
            raise DataError("non-finite sensor coordinates")
        n = len(self.sensor_ids)
        for u, v, w in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise DataError(f"edge ({u}, {v}) references a missing sensor")
            if not (math.isfinite(w) and w >= 0.0):
                raise DataError(f"edge ({u}, {v}) has invalid distance {w}")

    @property
    def n_sensors(self):
        return len(self.sensor_ids)

    def adjacency_lists(self):
        out = [[] for _ in range(self.n_sensors)]
        for u, v, w in self.edges:
            out[u].append((v, w))
        return out

    def undirected_neighbor_sets(self):
        """Neighbor sets treating every edge as undirected (self-loops dropped)."""
        nbrs = [set() for _ in range(self.n_sensors)]
        for u, v, _ in self.edges:
            if u != v:
                nbrs[u].add(v)
                nbrs[v].add(u)
        return nbrs


def load_road_network(sensors_path, edges_path):
    """Read the ``sensor_id,longitude,latitude`` and ``from,to,distance`` CSVs."""
    ids, coords = [], []
    with open(sensors_path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, ("sensor_id", "longitude", "latitude"), sensors_path)
        for row in reader:
            ids.append(row["sensor_id"])
            coords.append((float(row["longitude"]), float(row["latitude"])))
    if not ids:
        raise DataError(f"no sensors in {sensors_path}")
    index = {sid: i for i, sid in enumerate(ids)}
    edges = []
    with open(edges_path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader, ("from", "to", "distance"), edges_path)
        for row in reader:
            try:
                u, v = index[row["from"]], index[row["to"]]
            except KeyError as exc:
                raise DataError(f"edge references unknown sensor {exc.args[0]!r}") from None
            edges.append((u, v, float(row["distance"])))
    return RoadNetwork(ids, np.array(coords), edges)


def save_road_network(net, sensors_path, edges_path):
    with open(sensors_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_id", "longitude", "latitude"])
        for sid, (lon, lat) in zip(net.sensor_ids, net.coordinates):
            writer.writerow([sid, repr(float(lon)), repr(float(lat))])
    with open(edges_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["from", "to", "distance"])
        for u, v, w in net.edges:
            writer.writerow([net.sensor_ids[u], net.sensor_ids[v], repr(float(w))])


def _require_columns(reader, needed, path):
    have = reader.fieldnames or []
    missing = [c for c in needed if c not in have]
    if missing:
        raise DataError(f"{path}: missing columns {missing} (found {have})")


def all_pairs_shortest_paths(net):
    """Exact shortest-path distances over the directed graph, +inf if unreachable.

    One Dijkstra run per source node; edge weights must be nonnegative.
    """
    for u, v, w in net.edges:
        if w < 0:
            raise ValueError(f"negative edge weight {w} on ({u}, {v})")
    n = net.n_sensors
    adj = net.adjacency_lists()
    dist = np.full((n, n), np.inf)
    for src in range(n):
        row = dist[src]
        row[src] = 0.0
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > row[u]:
                continue
            for v, w in adj[u]:
                nd = d + w
                if nd < row[v]:
                    row[v] = nd
                    heapq.heappush(heap, (nd, v))
    return dist


@dataclass
class KernelConfig:
    """Thresholded Gaussian kernel: edge iff exp(-dist^2 / delta) >= epsilon."""

    delta: float
    epsilon: float

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"kernel delta must be positive, got {self.delta}")
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"kernel epsilon must be in (0, 1], got {self.epsilon}")


def delta_from_distances(dist):
    """Default kernel scale: standard deviation of finite off-diagonal distances."""
    dist = np.asarray(dist, dtype=np.float64)
    off = ~np.eye(dist.shape[0], dtype=bool)
    vals = dist[off & np.isfinite(dist)]
    if vals.size == 0:
        raise DataError("no finite off-diagonal distances; pass an explicit delta")
    sd = float(vals.std())
    if sd <= 0.0:
        raise DataError("distance spread is zero; pass an explicit delta")
    return sd


def gaussian_threshold_adjacency(dist, cfg):
    """Binary adjacency from a distance matrix; +inf distances never connect."""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError(f"distance matrix must be square, got {dist.shape}")
    with np.errstate(over="ignore"):
        kernel = np.exp(-(dist * dist) / cfg.delta)
    kernel[~np.isfinite(dist)] = 0.0
    adjacency = (kernel >= cfg.epsilon).astype(np.float64)
    np.fill_diagonal(adjacency, 0.0)
    return adjacency


def rescale_to_unit_disk(raw):
    """Scale embedding rows so every norm stays strictly inside the unit disk.

    The 1.05 headroom keeps the denominators of the hyperbolic distance away
    from zero. An all-zero input is already at the origin and passes through.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite embedding values")
    max_norm = float(np.linalg.norm(raw, axis=1).max()) if raw.size else 0.0
    if max_norm == 0.0:
        return raw.copy()
    return raw / (max_norm * UNIT_DISK_HEADROOM)


def hyperbolic_distance(a, b):
    """Distance between two points of the open unit disk.

    arcosh(1 + 2|a-b|^2 / ((1-|a|^2)(1-|b|^2))), with
    arcosh(x) = ln(x + sqrt(x^2 - 1)).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = float(a @ a), float(b @ b)
    if na >= 1.0 or nb >= 1.0:
        raise ValueError(f"embedding norms must be < 1, got {math.sqrt(na):.6f} and {math.sqrt(nb):.6f}")
    d = a - b
    x = 1.0 + 2.0 * float(d @ d) / ((1.0 - na) * (1.0 - nb))
    return math.log(x + math.sqrt(x * x - 1.0))


def pairwise_hyperbolic_distances(embedding):
    """All-pairs hyperbolic distances for rows of an embedding matrix."""
    emb = np.asarray(embedding, dtype=np.float64)
    sq = np.sum(emb * emb, axis=1)
    if np.any(sq >= 1.0):
        bad = int(np.argmax(sq))
        raise ValueError(f"embedding row {bad} has norm >= 1; rescale first")
    diff = emb[:, None, :] - emb[None, :, :]
    num = np.sum(diff * diff, axis=2)
    denom = (1.0 - sq)[:, None] * (1.0 - sq)[None, :]
    x = 1.0 + 2.0 * num / denom
    # arcosh via the log form; clip the sqrt argument against -0.0 roundoff
    out = np.log(x + np.sqrt(np.maximum(x * x - 1.0, 0.0)))
    np.fill_diagonal(out, 0.0)
    return out


def build_latent_graph(embedding, cfg):
    """Latent-structure adjacency: kernel-threshold the hyperbolic distances."""
    return gaussian_threshold_adjacency(pairwise_hyperbolic_distances(embedding), cfg)


def build_distance_graph(net, epsilon, delta=None):
    """Distance adjacency from the road network; returns (adjacency, delta used)."""
    dist = all_pairs_shortest_paths(net)
    if delta is None:
        delta = delta_from_distances(dist)
    cfg = KernelConfig(delta=delta, epsilon=epsilon)
    return gaussian_threshold_adjacency(dist, cfg), delta
