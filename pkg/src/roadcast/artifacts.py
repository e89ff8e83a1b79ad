"""On-disk artifact formats: graph directories and attention dumps.

A graph directory holds the two binary adjacencies as N x N CSV matrices,
the struc2vec embeddings, the region tensors as four stacked N x N CSV
blocks (with a JSON header naming the quadrant convention), and a JSON
sidecar recording kernel parameters, the seed, the config hash, and a
content digest used to pair checkpoints with the exact graphs they were
trained on.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

SIDECAR = "graphs.json"
REGION_CONVENTION = "sign of pos[j]-pos[i]: (++,+-,-+,--) -> regions (0,1,2,3); ties nonnegative"


def _write_matrix(path, matrix, fmt):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(matrix):
            writer.writerow([fmt(v) for v in row])


def _read_matrix(path):
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        raise DataError(f"{path}: empty matrix file")
    return np.array(rows)


def content_digest(arrays):
    """sha256 over shapes and raw bytes of the arrays, order-sensitive."""
    h = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass
class GraphArtifacts:
    sensor_ids: list
    coordinates: np.ndarray
    adjacency_distance: np.ndarray
    adjacency_latent: np.ndarray
    embeddings: np.ndarray
    regions_distance: np.ndarray
    regions_latent: np.ndarray
    meta: dict

    def digest(self):
        return content_digest(
            [
                self.adjacency_distance,
                self.adjacency_latent,
                self.embeddings,
                self.regions_distance,
                self.regions_latent,
            ]
        )


def save_graph_dir(out_dir, artifacts):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    binary = lambda v: str(int(v))
    _write_matrix(out / "adj_distance.csv", artifacts.adjacency_distance, binary)
    _write_matrix(out / "adj_latent.csv", artifacts.adjacency_latent, binary)
    with open(out / "embeddings.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor_id", "e0", "e1"])
        for sid, row in zip(artifacts.sensor_ids, artifacts.embeddings):
            writer.writerow([sid] + [repr(float(v)) for v in row])
    for label, tensor in (("distance", artifacts.regions_distance), ("latent", artifacts.regions_latent)):
        stacked = tensor.reshape(-1, tensor.shape[-1])
        _write_matrix(out / f"regions_{label}.csv", stacked, lambda v: repr(float(v)))
        header = {"regions": int(tensor.shape[0]), "convention": REGION_CONVENTION}
        (out / f"regions_{label}.json").write_text(json.dumps(header, indent=2) + "\n")
    meta = dict(artifacts.meta)
    meta["content_digest"] = artifacts.digest()
    meta["sensor_ids"] = list(artifacts.sensor_ids)
    meta["coordinates"] = [[float(x) for x in row] for row in artifacts.coordinates]
    (out / SIDECAR).write_text(json.dumps(meta, indent=2) + "\n")


def load_graph_dir(path):
    root = Path(path)
    sidecar = root / SIDECAR
    if not sidecar.exists():
        raise DataError(f"{root}: not a graph directory (missing {SIDECAR})")
    meta = json.loads(sidecar.read_text())
    adjacency_distance = _read_matrix(root / "adj_distance.csv")
    adjacency_latent = _read_matrix(root / "adj_latent.csv")
    embeddings = []
    with open(root / "embeddings.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            embeddings.append((float(row["e0"]), float(row["e1"])))
    embeddings = np.array(embeddings)
    n = adjacency_distance.shape[0]

    def read_regions(label, header_regions):
        stacked = _read_matrix(root / f"regions_{label}.csv")
        r = stacked.shape[0] // n
        if r != header_regions or stacked.shape[0] != r * n:
            raise DataError(f"regions_{label}.csv does not hold {header_regions} {n}x{n} blocks")
        return stacked.reshape(r, n, n)

    headers = {
        label: json.loads((root / f"regions_{label}.json").read_text())["regions"]
        for label in ("distance", "latent")
    }
    artifacts = GraphArtifacts(
        sensor_ids=meta["sensor_ids"],
        coordinates=np.array(meta["coordinates"]),
        adjacency_distance=adjacency_distance,
        adjacency_latent=adjacency_latent,
        embeddings=embeddings,
        regions_distance=read_regions("distance", headers["distance"]),
        regions_latent=read_regions("latent", headers["latent"]),
        meta=meta,
    )
    if artifacts.digest() != meta.get("content_digest"):
        raise DataError(f"{root}: graph files do not match their recorded digest")
    return artifacts


def write_attention_csv(path, rows, sensor_ids):
    """Rows of (timestep, sensor, channel, region, alpha) from recorder output.

    Coefficients are averaged over layers and gates per (timestep, channel),
    which matches the one-weight-per-region export schema.
    """
    grouped = {}
    counts = {}
    for row in rows:
        key = (row["timestep"], row["channel"])
        alpha = row["alpha"][:, :, :, 0]  # (regions, batch, sensors)
        if key not in grouped:
            grouped[key] = alpha.astype(np.float64).copy()
            counts[key] = 1
        else:
            grouped[key] += alpha
            counts[key] += 1
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestep", "sensor_id", "channel", "region", "alpha"])
        for (timestep, channel), total in sorted(grouped.items()):
            mean = total / counts[(timestep, channel)]
            n_regions, _, n_sensors = mean.shape
            for sensor in range(n_sensors):
                for region in range(n_regions):
                    value = mean[region, :, sensor].mean()
                    writer.writerow([timestep, sensor_ids[sensor], channel, region, repr(float(value))])
