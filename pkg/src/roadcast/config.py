"""Run configuration: one structured document drives the whole pipeline.

The canonical hash of a config (sorted-key compact JSON, sha256) is stamped
into graph directories and checkpoints so that mismatched artifacts are
refused instead of silently combined.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

from .errors import DataError


def canonical_hash(obj):
    """sha256 over the canonical JSON serialization; changes iff a field does."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ModelConfig:
    """Architecture and ablation switches of the forecaster."""

    hidden_dim: int = 64
    layers: int = 2
    history: int = 12
    horizon: int = 12
    batch_size: int = 32
    in_features: int = 1
    use_latent: bool = True
    use_dynamic_regions: bool = True
    use_mask: bool = True
    attention_on_conv_output: bool = True

    def __post_init__(self):
        for name in ("hidden_dim", "layers", "history", "horizon", "batch_size", "in_features"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class TrainConfig:
    """Optimization schedule: Adam with stepped decay and scheduled sampling."""

    learning_rate: float = 0.001
    decay_rate: float = 0.2
    decay_epochs: tuple = (30, 40, 50)
    epochs: int = 80
    ss_tau: float = 3000.0
    seed: int = 0
    patience: int | None = None
    train_loss_target: float | None = None

    def __post_init__(self):
        self.decay_epochs = tuple(self.decay_epochs)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.decay_rate < 1.0):
            raise ValueError("decay_rate must be in (0, 1)")
        if list(self.decay_epochs) != sorted(self.decay_epochs) or len(set(self.decay_epochs)) != len(self.decay_epochs):
            raise ValueError("decay_epochs must be strictly increasing")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.ss_tau <= 0:
            raise ValueError("ss_tau must be positive")

    def learning_rate_at(self, epoch):
        """Learning rate for a 1-based epoch; each marker multiplies by the
        decay rate from that epoch on."""
        n = sum(1 for m in self.decay_epochs if epoch >= m)
        return self.learning_rate * self.decay_rate**n


_DEFAULTS = {
    "kernel": {
        "epsilon_distance": 0.1,
        "epsilon_latent": 0.5,
        "delta_distance": None,
        "delta_latent": None,
    },
    "struc2vec": {
        "max_layer": 5,
        "walks_per_node": 10,
        "walk_length": 40,
        "window": 5,
        "negative_samples": 5,
        "epochs": 3,
        "stay_probability": 0.3,
        "learning_rate": 0.025,
        "dimensions": 2,
        "seed": 0,
    },
    "model": {
        "hidden_dim": 64,
        "layers": 2,
        "history": 12,
        "horizon": 12,
        "batch_size": 32,
        "in_features": 1,
        "use_latent": True,
        "use_dynamic_regions": True,
        "use_mask": True,
        "attention_on_conv_output": True,
    },
    "train": {
        "learning_rate": 0.001,
        "decay_rate": 0.2,
        "decay_epochs": [30, 40, 50],
        "epochs": 80,
        "ss_tau": 3000.0,
        "seed": 0,
        "patience": None,
        "train_loss_target": None,
    },
    "split": {"ratios": [0.7, 0.1, 0.2]},
    "paths": {"data": None, "graphs": None, "out": None},
}


@dataclass
class RunConfig:
    """Full pipeline configuration document."""

    document: dict = field(default_factory=lambda: json.loads(json.dumps(_DEFAULTS)))

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON ({exc})") from None
        doc = json.loads(json.dumps(_DEFAULTS))
        for section, values in user.items():
            if section not in doc:
                raise DataError(f"{path}: unknown config section {section!r}")
            if not isinstance(values, dict):
                raise DataError(f"{path}: section {section!r} must be an object")
            for key, value in values.items():
                if key not in doc[section]:
                    raise DataError(f"{path}: unknown key {section}.{key}")
                doc[section][key] = value
        return cls(doc)

    @property
    def hash(self):
        return canonical_hash(self.document)

    def model_config(self):
        return ModelConfig(**self.document["model"])

    def train_config(self):
        return TrainConfig(**self.document["train"])

    def split_ratios(self):
        return tuple(self.document["split"]["ratios"])


def graph_build_config(epsilon_distance, epsilon_latent, struc2vec_cfg, delta_distance=None, delta_latent=None):
    """The config subset whose hash identifies a graph directory."""
    return {
        "kernel": {
            "epsilon_distance": epsilon_distance,
            "epsilon_latent": epsilon_latent,
            "delta_distance": delta_distance,
            "delta_latent": delta_latent,
        },
        "struc2vec": asdict(struc2vec_cfg),
    }
