"""Dual-graph convolution: mask, per-region convolution, attention, fusion.

One call runs the same machinery over the latent-graph channel and the
distance-graph channel. Each channel multiplies its (learnable) mask into
the region-partitioned adjacency, runs a degree-normalized graph convolution
with a weight shared across regions, weights the region outputs through a
small attention MLP, and the two channel outputs are fused with a twice
linearly mapped copy of the input.

Inputs are batched: hidden tensors are (batch, sensors, features).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import NumericalError
from .regions import partition_by_quadrant


class MaskDriftError(NumericalError):
    """A trained mask drove some region row degree nonpositive.

    Carries enough context for the training loop to clamp the offending
    mask entries to zero and retry.
    """

    def __init__(self, channel, rows, mask, regions):
        self.channel = channel
        self.rows = rows  # list of (region, row) pairs
        self.mask = mask
        self.regions = regions
        super().__init__(f"nonpositive degree in channel {channel!r} at (region, row) {rows[:4]}")

    def clamp_offending_entries(self):
        """Zero the negative mask entries feeding each nonpositive degree row."""
        for region, row in self.rows:
            support = self.regions[region, row] != 0.0
            entries = self.mask.data[row]
            entries[support & (entries < 0.0)] = 0.0


class ChannelGraph:
    """Static per-channel graph constants, cached as reusable tensors."""

    def __init__(self, adjacency, positions, label):
        adjacency = np.asarray(adjacency, dtype=np.float64)
        self.label = label
        self.adjacency = adjacency
        self.positions = np.asarray(positions, dtype=np.float64)
        self.n = adjacency.shape[0]
        self.regions = partition_by_quadrant(adjacency, self.positions)
        self.whole = adjacency[None, :, :]  # single-region view for ablations
        self._eye = np.eye(self.n)
        self.regions_t = Tensor(self.regions)
        self.whole_t = Tensor(self.whole)
        self.eye_t = Tensor(self._eye)
        # when no mask is in play the normalized operator is constant
        self.norm_regions_t = Tensor(self._normalized(self.regions))
        self.norm_whole_t = Tensor(self._normalized(self.whole))

    @classmethod
    def from_regions(cls, adjacency, regions, positions, label):
        graph = cls.__new__(cls)
        adjacency = np.asarray(adjacency, dtype=np.float64)
        graph.label = label
        graph.adjacency = adjacency
        graph.positions = np.asarray(positions, dtype=np.float64)
        graph.n = adjacency.shape[0]
        graph.regions = np.asarray(regions, dtype=np.float64)
        graph.whole = adjacency[None, :, :]
        graph._eye = np.eye(graph.n)
        graph.regions_t = Tensor(graph.regions)
        graph.whole_t = Tensor(graph.whole)
        graph.eye_t = Tensor(graph._eye)
        graph.norm_regions_t = Tensor(graph._normalized(graph.regions))
        graph.norm_whole_t = Tensor(graph._normalized(graph.whole))
        return graph

    def _normalized(self, regions):
        # the row/column scaling is applied as (d_i * d_j)^-1/2 in a single
        # power, which rounds once (2-node case lands exactly on 1/2); the
        # masked path mirrors this op sequence so an all-ones mask
        # reproduces the constant bit for bit
        deg = regions.sum(axis=2) + 1.0
        scale = (deg[:, :, None] * deg[:, None, :]) ** -0.5
        return (regions + self._eye) * scale


@dataclass
class GraphBundle:
    distance: ChannelGraph
    latent: ChannelGraph | None = None

    def channels(self, use_latent):
        chans = []
        if use_latent:
            if self.latent is None:
                raise ValueError("model config enables the latent channel but no latent graph was given")
            chans.append(self.latent)
        chans.append(self.distance)
        return chans

    @property
    def n_sensors(self):
        return self.distance.n


@dataclass
class ChannelParams:
    weight: Tensor
    attn_w1: Tensor | None = None
    attn_b1: Tensor | None = None
    attn_w2: Tensor | None = None
    attn_b2: Tensor | None = None
    mask: Tensor | None = None


@dataclass
class GateParams:
    channels: dict
    fuse_in1: Tensor
    fuse_in2: Tensor
    fuse_out: dict


def uniform_init(rng, shape, fan_in):
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_gate_params(rng, in_dim, out_dim, n_sensors, labels, cfg):
    """Fresh parameters for one convolution site (one gate of one layer)."""
    channels = {}
    for label in labels:
        p = ChannelParams(weight=uniform_init(rng, (in_dim, out_dim), in_dim))
        if cfg.use_dynamic_regions:
            p.attn_w1 = uniform_init(rng, (out_dim, out_dim), out_dim)
            p.attn_b1 = Tensor(np.zeros(out_dim), requires_grad=True)
            p.attn_w2 = uniform_init(rng, (out_dim, 1), out_dim)
            p.attn_b2 = Tensor(np.zeros(1), requires_grad=True)
        if cfg.use_mask:
            # all-ones start keeps the masked adjacency equal to the input
            p.mask = Tensor(np.ones((n_sensors, n_sensors)), requires_grad=True)
        channels[label] = p
    return GateParams(
        channels=channels,
        fuse_in1=uniform_init(rng, (in_dim, out_dim), in_dim),
        fuse_in2=uniform_init(rng, (out_dim, out_dim), out_dim),
        fuse_out={label: uniform_init(rng, (out_dim, out_dim), out_dim) for label in labels},
    )


def named_gate_params(gate_params, prefix):
    """Stable name -> Tensor mapping for checkpoints and the optimizer."""
    out = {}
    for label, p in gate_params.channels.items():
        base = f"{prefix}.{label}"
        out[f"{base}.conv_w"] = p.weight
        if p.attn_w1 is not None:
            out[f"{base}.attn_w1"] = p.attn_w1
            out[f"{base}.attn_b1"] = p.attn_b1
            out[f"{base}.attn_w2"] = p.attn_w2
            out[f"{base}.attn_b2"] = p.attn_b2
        if p.mask is not None:
            out[f"{base}.mask"] = p.mask
    out[f"{prefix}.fuse_in1"] = gate_params.fuse_in1
    out[f"{prefix}.fuse_in2"] = gate_params.fuse_in2
    for label, w in gate_params.fuse_out.items():
        out[f"{prefix}.fuse_{label}"] = w
    return out


class AttentionRecorder:
    """Collects region-attention coefficients during a forward pass."""

    def __init__(self):
        self.rows = []
        self.context = {}

    def record(self, channel, alpha):
        self.rows.append({**self.context, "channel": channel, "alpha": alpha})


def apply_mask(adjacency, mask):
    """Learnable elementwise reweighting; zeros of the adjacency stay zero."""
    if adjacency.shape[-2:] != mask.shape:
        raise ValueError(f"mask shape {mask.shape} does not match adjacency {adjacency.shape}")
    return adjacency * mask


def _masked_operator(graph, mask, use_regions):
    """Degree-normalized propagation operator with gradients through the mask."""
    regions_t = graph.regions_t if use_regions else graph.whole_t
    masked = apply_mask(regions_t, mask)
    deg = masked.sum(axis=2) + 1.0
    if np.any(deg.data <= 0.0):
        bad = np.argwhere(deg.data <= 0.0)
        rows = [(int(r), int(j)) for r, j in bad]
        raise MaskDriftError(graph.label, rows, mask, regions_t.data)
    n_regions = regions_t.shape[0]
    scale = (deg.reshape(n_regions, graph.n, 1) * deg.reshape(n_regions, 1, graph.n)).pow(-0.5)
    return (masked + graph.eye_t) * scale


def _linear(x, weight):
    """x @ weight over the trailing axis, flattened into one GEMM."""
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1]) @ weight
    return flat.reshape(*lead, weight.shape[-1])


def build_operator(graph, params, cfg):
    """Propagation operator for one channel.

    Constant across the timesteps of one forward graph, so callers that
    unroll a recurrence should build it once per step and reuse it.
    """
    if params.mask is not None:
        return _masked_operator(graph, params.mask, cfg.use_dynamic_regions)
    return graph.norm_regions_t if cfg.use_dynamic_regions else graph.norm_whole_t


def channel_conv(h, graph, params, cfg, operator=None, recorder=None):
    """One channel: mask, per-region convolution, region attention."""
    use_regions = cfg.use_dynamic_regions
    if operator is None:
        operator = build_operator(graph, params, cfg)
    n_regions = operator.shape[0]
    batch, n, _ = h.shape
    out_dim = params.weight.shape[-1]
    # the shared weight commutes with neighborhood aggregation; applying it
    # first keeps the region matmul at (R,N,N) @ (N, B*out) gemm sizes
    hw = _linear(h, params.weight)  # (B, N, out)
    hw_cols = hw.transpose(1, 0, 2).reshape(n, batch * out_dim)
    prop = operator @ hw_cols  # (R, N, B*out)
    lin = prop.reshape(n_regions, n, batch, out_dim).transpose(0, 2, 1, 3)
    conv = lin.sigmoid()
    if not use_regions:
        return conv.reshape(batch, n, out_dim)
    att_in = conv if cfg.attention_on_conv_output else lin
    hidden = (_linear(att_in, params.attn_w1) + params.attn_b1).relu()
    logits = _linear(hidden, params.attn_w2) + params.attn_b2  # (R, B, N, 1)
    alpha = logits.softmax(axis=0)
    if recorder is not None:
        recorder.record(graph.label, alpha.data.copy())
    return (alpha * conv).sum(axis=0)


def build_operators(bundle, gate_params, cfg):
    """Per-channel operators for one convolution site of one forward graph."""
    return {
        graph.label: build_operator(graph, gate_params.channels[graph.label], cfg)
        for graph in bundle.channels(cfg.use_latent)
    }


def dual_graph_conv(h, bundle, gate_params, cfg, operators=None, recorder=None):
    """Full block: both channels plus the three-way linear fusion."""
    if h.ndim != 3:
        raise ValueError(f"hidden input must be (batch, sensors, features), got {h.shape}")
    out = _linear(_linear(h, gate_params.fuse_in1), gate_params.fuse_in2)
    for graph in bundle.channels(cfg.use_latent):
        operator = operators[graph.label] if operators is not None else None
        channel_out = channel_conv(h, graph, gate_params.channels[graph.label], cfg, operator, recorder)
        out = out + _linear(channel_out, gate_params.fuse_out[graph.label])
    return out
