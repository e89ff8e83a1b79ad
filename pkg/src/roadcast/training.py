"""Training loop and checkpointing for the forecaster.

One batch step: encode the history window, scheduled-sampling decode, L1
loss on de-normalized predictions, one Adam update. The learning rate drops
by the decay factor at each decay epoch; the iteration counter driving the
teacher-forcing probability advances once per batch. Validation runs free
decoding after every epoch and feeds the optional early stop.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .autodiff import AdamState, Tensor, adam_step, backward, no_grad
from .config import ModelConfig, TrainConfig
from .data import NormStats, SplitSpec, batch_indices, chronological_split, make_windows, zscore
from .errors import NumericalError
from .metrics import metrics
from .recurrent import Forecaster, l1_loss, scheduled_sampling_probability
from .spatial import ChannelGraph, GraphBundle, MaskDriftError

MASK_CLAMP_RETRIES = 3


@dataclass
class SupervisedSplits:
    """Windowed, normalized views of the three chronological partitions."""

    stats: NormStats
    train_inputs: np.ndarray
    train_targets_norm: np.ndarray
    train_targets_raw: np.ndarray
    val_inputs: np.ndarray
    val_targets_raw: np.ndarray
    test_inputs: np.ndarray
    test_targets_raw: np.ndarray


def prepare_splits(values, ratios, history, horizon):
    spec = SplitSpec(tuple(ratios))
    train, val, test = chronological_split(values, spec, min_length=history + horizon)
    stats = NormStats.from_training(train)
    out = {}
    for name, part in (("train", train), ("val", val), ("test", test)):
        inputs_raw, targets_raw = make_windows(part, history, horizon)
        out[name] = (zscore(inputs_raw, stats), targets_raw)
    return SupervisedSplits(
        stats=stats,
        train_inputs=out["train"][0],
        train_targets_norm=zscore(out["train"][1], stats),
        train_targets_raw=out["train"][1],
        val_inputs=out["val"][0],
        val_targets_raw=out["val"][1],
        test_inputs=out["test"][0],
        test_targets_raw=out["test"][1],
    )


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_mae: float
    val_rmse: float
    val_mape: float
    lr: float
    teacher_forcing_prob: float


def write_training_log(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_mae", "val_rmse", "val_mape", "lr", "teacher_forcing_prob"])
        for row in history:
            writer.writerow(
                [row.epoch, row.train_loss, row.val_mae, row.val_rmse, row.val_mape, row.lr, row.teacher_forcing_prob]
            )


def predict_windows(model, inputs_norm, stats, batch_size=64):
    """Free-running forecasts for a stack of normalized input windows,
    returned on the original scale."""
    horizon = model.cfg.horizon
    outputs = []
    with no_grad():
        for start in range(0, inputs_norm.shape[0], batch_size):
            chunk = inputs_norm[start : start + batch_size]
            states = model.encode(chunk)
            preds = model.decode_free(states, horizon, batch=chunk.shape[0])
            outputs.append(preds.data * stats.std + stats.mean)
    return np.concatenate(outputs, axis=0)


def _train_batch(model, inputs, targets_norm, targets_raw, stats, iteration, tau, ss_rng):
    mean_t = Tensor(stats.mean)
    std_t = Tensor(stats.std)
    for attempt in range(MASK_CLAMP_RETRIES + 1):
        try:
            states = model.encode(inputs)
            preds_norm, forced = model.decode_teacher(targets_norm, states, iteration, tau, ss_rng)
            preds = preds_norm * std_t + mean_t
            return l1_loss(preds, targets_raw), forced
        except MaskDriftError as drift:
            if attempt == MASK_CLAMP_RETRIES:
                raise
            drift.clamp_offending_entries()


def train(model, splits, cfg, log_path=None):
    """Run the batched scheduled-sampling loop; returns the epoch history.

    Stops at the epoch budget, on the optional validation-MAE patience, or
    when the train loss reaches the optional target.
    """
    params = model.named_parameters()
    state = AdamState()
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    batch_rng = np.random.default_rng(seeds[0])
    ss_rng = np.random.default_rng(seeds[1])
    n_train = splits.train_inputs.shape[0]
    iteration = 1
    history = []
    best_val = np.inf
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate_at(epoch)
        total_loss = 0.0
        for batch in batch_indices(n_train, model.cfg.batch_size, batch_rng):
            iteration += 1
            loss, _ = _train_batch(
                model,
                splits.train_inputs[batch],
                splits.train_targets_norm[batch],
                splits.train_targets_raw[batch],
                splits.stats,
                iteration,
                cfg.ss_tau,
                ss_rng,
            )
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch offset {int(batch[0])}")
            backward(loss)
            adam_step(params, state, lr)
            total_loss += value * len(batch)
        train_loss = total_loss / n_train

        val_pred = predict_windows(model, splits.val_inputs, splits.stats, model.cfg.batch_size)
        report = metrics(val_pred, splits.val_targets_raw)
        history.append(
            EpochLog(
                epoch=epoch,
                train_loss=train_loss,
                val_mae=report.overall.mae,
                val_rmse=report.overall.rmse,
                val_mape=report.overall.mape_pct if report.overall.mape_pct is not None else float("nan"),
                lr=lr,
                teacher_forcing_prob=scheduled_sampling_probability(iteration, cfg.ss_tau),
            )
        )
        if cfg.train_loss_target is not None and train_loss <= cfg.train_loss_target:
            break
        if cfg.patience is not None:
            if report.overall.mae < best_val - 1e-12:
                best_val = report.overall.mae
                stale = 0
            else:
                stale += 1
                if stale > cfg.patience:
                    break
    if log_path is not None:
        write_training_log(log_path, history)
    return history, state


def bundle_from_artifacts(artifacts):
    """GraphBundle from a loaded graph directory."""
    distance = ChannelGraph.from_regions(
        artifacts.adjacency_distance, artifacts.regions_distance, artifacts.coordinates, "distance"
    )
    latent = ChannelGraph.from_regions(
        artifacts.adjacency_latent, artifacts.regions_latent, artifacts.embeddings, "latent"
    )
    return GraphBundle(distance=distance, latent=latent)


def save_checkpoint(path, model, adam_state, epoch, run_document, run_hash, graphs_meta, stats):
    """Single-file .npz: parameters, optimizer state, graphs, and metadata."""
    arrays = {}
    for name, tensor in model.named_parameters().items():
        arrays[f"param/{name}"] = tensor.data
        if name in adam_state.m:
            arrays[f"adam_m/{name}"] = adam_state.m[name]
            arrays[f"adam_v/{name}"] = adam_state.v[name]
    for graph in model.bundle.channels(model.cfg.use_latent):
        arrays[f"graph/{graph.label}/adjacency"] = graph.adjacency
        arrays[f"graph/{graph.label}/regions"] = graph.regions
        arrays[f"graph/{graph.label}/positions"] = graph.positions
    meta = {
        "format_version": 1,
        "epoch": epoch,
        "adam_step": adam_state.step,
        "run_config": run_document,
        "run_hash": run_hash,
        "graphs_hash": graphs_meta.get("config_hash"),
        "graphs_digest": graphs_meta.get("content_digest"),
        "sensor_ids": graphs_meta.get("sensor_ids"),
        "norm_mean": [float(v) for v in np.atleast_1d(stats.mean)],
        "norm_std": [float(v) for v in np.atleast_1d(stats.std)],
    }
    arrays["meta"] = np.array(json.dumps(meta))
    np.savez(path, **arrays)


@dataclass
class Checkpoint:
    model: Forecaster
    adam_state: AdamState
    meta: dict
    stats: NormStats

    @property
    def sensor_ids(self):
        return self.meta["sensor_ids"]


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as blob:
        meta = json.loads(str(blob["meta"]))
        cfg = ModelConfig(**meta["run_config"]["model"])
        channels = {}
        for label in ("latent", "distance"):
            key = f"graph/{label}/adjacency"
            if key in blob:
                channels[label] = ChannelGraph.from_regions(
                    blob[key], blob[f"graph/{label}/regions"], blob[f"graph/{label}/positions"], label
                )
        bundle = GraphBundle(distance=channels["distance"], latent=channels.get("latent"))
        model = Forecaster(cfg, bundle, np.random.default_rng(0))
        adam_state = AdamState()
        adam_state.step = int(meta["adam_step"])
        for name, tensor in model.named_parameters().items():
            key = f"param/{name}"
            if key not in blob:
                raise NumericalError(f"checkpoint missing parameter {name}")
            tensor.data = blob[key].copy()
            if f"adam_m/{name}" in blob:
                adam_state.m[name] = blob[f"adam_m/{name}"].copy()
                adam_state.v[name] = blob[f"adam_v/{name}"].copy()
        stats = NormStats(np.array(meta["norm_mean"]), np.array(meta["norm_std"]))
    return Checkpoint(model=model, adam_state=adam_state, meta=meta, stats=stats)


def build_model(run_config_doc, bundle, seed):
    cfg = ModelConfig(**run_config_doc["model"])
    return Forecaster(cfg, bundle, np.random.default_rng(np.random.SeedSequence([seed, 7])))
