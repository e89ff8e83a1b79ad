"""GRU encoder-decoder whose linear maps are dual-graph convolutions.

The cell computes, per layer, update and reset gates from the concatenated
input and previous hidden state, a candidate state from the reset-scaled
history, and the convex update H = U * H_prev + (1 - U) * C. Encoder and
decoder share one parameter set and one continuous hidden-state stream; the
decoder starts from a zero signal and feeds back either the ground truth
(scheduled sampling, training only) or its own previous prediction.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor, concat, stack
from .spatial import build_operators, dual_graph_conv, init_gate_params, named_gate_params, uniform_init

GATES = ("update", "reset", "candidate")


def scheduled_sampling_probability(iteration, tau):
    """Inverse-sigmoid decay tau / (tau + exp(iteration / tau))."""
    if iteration < 1:
        raise ValueError("iteration must be >= 1")
    try:
        return tau / (tau + math.exp(iteration / tau))
    except OverflowError:
        return 0.0


def l1_loss(pred, truth):
    """Mean absolute error over every element of the two stacked windows."""
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch for l1_loss: {pred.shape} vs {truth.shape}")
    return (pred - truth).abs().mean()


class Forecaster:
    """Stacked graph-conv GRU with a linear readout."""

    def __init__(self, cfg, bundle, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        self.bundle = bundle
        self.channel_labels = [g.label for g in bundle.channels(cfg.use_latent)]
        n = bundle.n_sensors
        d = cfg.hidden_dim
        self.layers = []
        for layer in range(cfg.layers):
            in_dim = (cfg.in_features if layer == 0 else d) + d
            gates = {
                gate: init_gate_params(rng, in_dim, d, n, self.channel_labels, cfg)
                for gate in GATES
            }
            self.layers.append(gates)
        self.out_w = uniform_init(rng, (d, cfg.in_features), d)
        self.out_b = Tensor(np.zeros(cfg.in_features), requires_grad=True)

    def named_parameters(self):
        params = {}
        for i, gates in enumerate(self.layers):
            for gate in GATES:
                params.update(named_gate_params(gates[gate], f"layer{i}.{gate}"))
        params["output.w"] = self.out_w
        params["output.b"] = self.out_b
        return params

    def zero_state(self, batch):
        n, d = self.bundle.n_sensors, self.cfg.hidden_dim
        return [Tensor(np.zeros((batch, n, d))) for _ in range(self.cfg.layers)]

    def step_operators(self):
        """Propagation operators for every convolution site, built once per
        forward graph; the masked operator is constant across timesteps."""
        return {
            (layer, gate): build_operators(self.bundle, self.layers[layer][gate], self.cfg)
            for layer in range(self.cfg.layers)
            for gate in GATES
        }

    def _cell(self, layer, x, h_prev, ops=None, recorder=None):
        gates = self.layers[layer]

        def conv(gate, tensor):
            if recorder is not None:
                recorder.context = {**recorder.context, "layer": layer, "gate": gate}
            operators = ops[(layer, gate)] if ops is not None else None
            return dual_graph_conv(tensor, self.bundle, gates[gate], self.cfg, operators, recorder)

        z = concat([x, h_prev], axis=2)
        update = conv("update", z).sigmoid()
        reset = conv("reset", z).sigmoid()
        cand = conv("candidate", concat([x, reset * h_prev], axis=2)).tanh()
        return update * h_prev + (1.0 - update) * cand

    def step(self, x, states, ops=None, recorder=None):
        """Advance all layers one timestep; returns the new state list."""
        new_states = []
        inp = x
        for layer in range(self.cfg.layers):
            h = self._cell(layer, inp, states[layer], ops, recorder)
            new_states.append(h)
            inp = h
        return new_states

    def project(self, hidden):
        return hidden @ self.out_w + self.out_b

    def encode(self, inputs, ops=None, recorder=None):
        """Consume a (batch, history, sensors, features) window from a zero state."""
        inputs = np.asarray(inputs, dtype=np.float64)
        batch = inputs.shape[0]
        if ops is None:
            ops = self.step_operators()
        states = self.zero_state(batch)
        for t in range(inputs.shape[1]):
            if recorder is not None:
                recorder.context = {"timestep": t + 1}
            states = self.step(Tensor(inputs[:, t]), states, ops, recorder)
        return states

    def _zero_signal(self, batch):
        return Tensor(np.zeros((batch, self.bundle.n_sensors, self.cfg.in_features)))

    def decode_teacher(self, targets, states, iteration, tau, rng, ops=None):
        """Scheduled-sampling decode: each step draws once and feeds either
        the previous ground truth or the previous prediction. Returns the
        stacked predictions and the number of teacher-forced steps."""
        targets = np.asarray(targets, dtype=np.float64)
        batch, horizon = targets.shape[0], targets.shape[1]
        if ops is None:
            ops = self.step_operators()
        p_teacher = scheduled_sampling_probability(iteration, tau)
        preds = []
        forced = 0
        for t in range(1, horizon + 1):
            teacher = bool(rng.random() < p_teacher)
            forced += teacher
            if t == 1:
                inp = self._zero_signal(batch)  # truth for step 0 is the zero start token
            elif teacher:
                inp = Tensor(targets[:, t - 2])
            else:
                inp = preds[-1]
            states = self.step(inp, states, ops)
            preds.append(self.project(states[-1]))
        return stack(preds, axis=1), forced

    def decode_free(self, states, horizon, batch, ops=None, recorder=None):
        """Autoregressive decode from the zero start token; deterministic."""
        if ops is None:
            ops = self.step_operators()
        preds = []
        prev = self._zero_signal(batch)
        offset = self.cfg.history
        for t in range(horizon):
            if recorder is not None:
                recorder.context = {"timestep": offset + t + 1}
            states = self.step(prev, states, ops, recorder)
            prev = self.project(states[-1])
            preds.append(prev)
        return stack(preds, axis=1)
