"""Feed-forward spike response model networks and their simulator.

A network is a stack of hidden spiking layers followed by a non-spiking
output layer. Hidden neurons accumulate kernel responses to their inputs,
pay a refractory cost for their own past spikes, and fire whenever the
voltage reaches the fixed threshold of 1. The output layer is an affine
read-out of kernel responses to the last hidden layer's spikes.

Simulation is strictly causal and discrete: one threshold test per neuron
per step, at most one spike per step, and the refractory term only ever
sees strictly past spikes.

Implementation notes: responses to real-valued inputs are computed as
dense causal convolutions (realized as banded-matrix products, which are
exact and fast for the short grids used here); responses to spike trains
place one kernel copy per spike, which is algebraically identical to
convolving the 0/1 spike indicator with the discretized kernel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelFamily, KernelSpec, PlacedKernel, Rectification
from .signals import DiscreteSignal, SpikeTrainSet

THRESHOLD = 1.0


@dataclass
class LayerParams:
    """Parameters of one layer; hidden layers carry the refractory fields."""

    weights: np.ndarray          # (neurons, inputs)
    bias: np.ndarray             # (neurons,)
    delay: np.ndarray            # (neurons,) >= 0
    support: np.ndarray          # (neurons,) > 0
    pspk: KernelSpec
    spike_cost: np.ndarray | None = None   # (neurons,), hidden only
    rf_support: np.ndarray | None = None   # (neurons,) > 0, hidden only
    rfk: KernelSpec | None = None          # hidden only

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        self.delay = np.asarray(self.delay, dtype=float)
        self.support = np.asarray(self.support, dtype=float)
        n = self.weights.shape[0]
        for name, vec in (("bias", self.bias), ("delay", self.delay), ("support", self.support)):
            if vec.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},), got {vec.shape}")
        if np.any(self.delay < 0):
            raise ValueError("delays must be non-negative")
        if np.any(self.support <= 0):
            raise ValueError("supports must be positive")
        hidden_fields = (self.spike_cost, self.rf_support, self.rfk)
        if any(f is not None for f in hidden_fields) and not all(
            f is not None for f in hidden_fields
        ):
            raise ValueError("spike_cost, rf_support and rfk must be set together")
        if self.spike_cost is not None:
            self.spike_cost = np.asarray(self.spike_cost, dtype=float)
            self.rf_support = np.asarray(self.rf_support, dtype=float)
            if np.any(self.rf_support <= 0):
                raise ValueError("refractory supports must be positive")

    @property
    def n_neurons(self) -> int:
        return self.weights.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[1]

    @property
    def is_hidden(self) -> bool:
        return self.spike_cost is not None

    def placed_kernel(self, neuron: int) -> PlacedKernel:
        return PlacedKernel(self.pspk, float(self.delay[neuron]), float(self.support[neuron]))


@dataclass
class GridSpec:
    """Time grid of a model: dt, total steps, and the forecast horizon."""

    dt: float = 1.0
    total_steps: int = 0
    horizon: int = 0

    @property
    def obs_steps(self) -> int:
        return self.total_steps - self.horizon

    @property
    def window(self) -> tuple[int, int]:
        """The forecast window [T, T+H) in step indices."""
        return (self.obs_steps, self.total_steps)


@dataclass
class SnnModel:
    layers: list                 # L hidden LayerParams + 1 output LayerParams
    d_in: int = 0
    d_out: int = 0
    grid: GridSpec = field(default_factory=GridSpec)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        widths = [self.d_in] + [lay.n_neurons for lay in self.layers]
        for i, lay in enumerate(self.layers):
            if lay.n_inputs != widths[i]:
                raise ValueError(
                    f"layer {i} expects {lay.n_inputs} inputs but upstream width is {widths[i]}"
                )
        if self.layers[-1].n_neurons != self.d_out:
            raise ValueError("output layer width must equal d_out")
        if self.layers[-1].is_hidden:
            raise ValueError("the last layer must be a non-spiking output layer")
        for lay in self.layers[:-1]:
            if not lay.is_hidden:
                raise ValueError("all layers before the last must be hidden layers")

    @property
    def n_hidden_layers(self) -> int:
        return len(self.layers) - 1


# ---------------------------------------------------------------------------
# convolution machinery


def causal_conv_matrix(taps: np.ndarray, n_steps: int) -> np.ndarray:
    """Banded matrix C with C[t, s] = taps[t - s]; then conv(x) = x @ C.T."""
    taps = np.asarray(taps, dtype=float)
    c = np.zeros((n_steps, n_steps))
    for d in range(min(taps.size, n_steps)):
        if taps[d] != 0.0:
            np.fill_diagonal(c[d:, : n_steps - d], taps[d])
    return c


def psp_window_matrix(pk: PlacedKernel, n_steps: int, window: tuple[int, int],
                      dt: float = 1.0) -> np.ndarray:
    """K[t, h] = placed kernel evaluated at (window[0] + h - t) * dt.

    For a spike indicator ``comb`` of shape (..., n_steps), ``comb @ K``
    yields the kernel response on the window.
    """
    lo, hi = window
    t = np.arange(n_steps) * dt
    h = (lo + np.arange(hi - lo)) * dt
    return pk.sample_at(h[None, :] - t[:, None])


def dense_input(inputs, n_steps: int) -> np.ndarray:
    """Channels-by-steps matrix for a signal or spike train set, zero-padded."""
    if isinstance(inputs, SpikeTrainSet):
        if inputs.n_steps != n_steps:
            raise ValueError(
                f"spike trains live on {inputs.n_steps} steps, expected {n_steps}"
            )
        return inputs.to_dense()
    if isinstance(inputs, DiscreteSignal):
        vals = inputs.values
    else:
        vals = np.asarray(inputs, dtype=float)
    if vals.shape[1] > n_steps:
        raise ValueError(f"input has {vals.shape[1]} steps, grid only {n_steps}")
    if vals.shape[1] < n_steps:
        padded = np.zeros((vals.shape[0], n_steps))
        padded[:, : vals.shape[1]] = vals
        vals = padded
    return vals


def layer_taps(layer: LayerParams, neuron: int, n_steps: int, dt: float = 1.0) -> np.ndarray:
    pk = layer.placed_kernel(neuron)
    span = min(pk.tap_span(dt), n_steps)
    return pk.taps(span, dt)


# ---------------------------------------------------------------------------
# single-sample operations (the public contract)


def psp_contributions(layer: LayerParams, neuron: int, inputs,
                      window: tuple[int, int] | None = None,
                      dt: float = 1.0) -> DiscreteSignal:
    """Kernel responses of one neuron to every input channel.

    Real-valued inputs are causally convolved with the neuron's placed
    kernel; spike inputs receive one kernel copy per spike. The result is
    restricted to ``window`` if given.
    """
    if isinstance(inputs, SpikeTrainSet):
        n_steps = inputs.n_steps
    else:
        vals = inputs.values if isinstance(inputs, DiscreteSignal) else np.asarray(inputs)
        n_steps = vals.shape[1]
    dense = dense_input(inputs, n_steps)
    if dense.shape[0] != layer.n_inputs:
        raise ValueError(
            f"layer expects {layer.n_inputs} input channels, got {dense.shape[0]}"
        )
    if window is None:
        window = (0, n_steps)
    if isinstance(inputs, SpikeTrainSet):
        k = psp_window_matrix(layer.placed_kernel(neuron), n_steps, window, dt)
        out = dense @ k
    else:
        taps = layer_taps(layer, neuron, n_steps, dt)
        c = causal_conv_matrix(taps, n_steps)
        out = (dense @ c.T)[:, window[0]: window[1]]
    return DiscreteSignal(values=out, dt=dt)


def hidden_drive_batch(layer: LayerParams, dense_in: np.ndarray,
                       dt: float = 1.0) -> np.ndarray:
    """Input contribution plus bias for a batch: (samples, neurons, steps).

    Exploits linearity: the weighted sum of per-channel kernel responses
    equals the kernel response of the weighted input sum.
    """
    n_steps = dense_in.shape[-1]
    projected = np.matmul(layer.weights, dense_in)  # (M, N, G)
    drive = np.empty_like(projected)
    for i in range(layer.n_neurons):
        taps = layer_taps(layer, i, n_steps, dt)
        c = causal_conv_matrix(taps, n_steps)
        drive[:, i, :] = projected[:, i, :] @ c.T
    drive += layer.bias[None, :, None]
    return drive


def refractory_taps(layer: LayerParams, dt: float = 1.0) -> np.ndarray:
    """Per-neuron refractory kernel taps at lags 1..D (lag 0 excluded)."""
    max_lag = int(np.floor(np.max(layer.rf_support) / dt))
    if max_lag < 1:
        return np.zeros((layer.n_neurons, 0))
    lags = np.arange(1, max_lag + 1) * dt
    x = lags[None, :] / layer.rf_support[:, None]
    taps = layer.rfk.evaluate(x.ravel()).reshape(x.shape)
    return np.where(x <= 1.0, taps, 0.0)


def simulate_hidden_batch(layer: LayerParams, dense_in: np.ndarray,
                          dt: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Run a hidden layer over a batch; returns (spike mask, voltages).

    The time loop is sequential: each step's voltage includes the spike
    cost of strictly earlier spikes only.
    """
    if not layer.is_hidden:
        raise ValueError("simulate_hidden_batch needs a hidden layer")
    drive = hidden_drive_batch(layer, dense_in, dt)
    n_samples, n_neurons, n_steps = drive.shape
    q_taps = refractory_taps(layer, dt)
    max_lag = q_taps.shape[1]
    cost_taps = layer.spike_cost[:, None] * q_taps  # (N, D)
    spiked = np.zeros((n_samples, n_neurons, n_steps), dtype=bool)
    volt = np.empty_like(drive)
    for t in range(n_steps):
        v = drive[:, :, t].copy()
        for d in range(1, min(max_lag, t) + 1):
            active = cost_taps[:, d - 1]
            if np.any(active):
                v += active[None, :] * spiked[:, :, t - d]
        volt[:, :, t] = v
        spiked[:, :, t] = v >= THRESHOLD
    return spiked, volt


def simulate_hidden_layer(layer: LayerParams, inputs,
                          window: tuple[int, int] | None = None,
                          dt: float = 1.0) -> tuple[SpikeTrainSet, DiscreteSignal]:
    """Simulate one hidden layer on a single sample."""
    if isinstance(inputs, SpikeTrainSet):
        n_steps = inputs.n_steps
    elif isinstance(inputs, DiscreteSignal):
        n_steps = inputs.n_steps
    else:
        n_steps = np.asarray(inputs).shape[1]
    dense = dense_input(inputs, n_steps)[None, :, :]
    if dense.shape[1] != layer.n_inputs:
        raise ValueError(
            f"layer expects {layer.n_inputs} input channels, got {dense.shape[1]}"
        )
    spiked, volt = simulate_hidden_batch(layer, dense, dt)
    if window is None:
        window = (0, n_steps)
    lo, hi = window
    mask = np.zeros_like(spiked[0])
    mask[:, lo:hi] = spiked[0, :, lo:hi]
    trains = SpikeTrainSet.from_dense(mask)
    return trains, DiscreteSignal(values=volt[0, :, lo:hi], dt=dt)


def output_voltages_batch(layer: LayerParams, dense_spikes: np.ndarray,
                          window: tuple[int, int], dt: float = 1.0) -> np.ndarray:
    """Affine read-out on a window for a batch of spike indicators."""
    n_steps = dense_spikes.shape[-1]
    width = window[1] - window[0]
    out = np.empty((dense_spikes.shape[0], layer.n_neurons, width))
    for i in range(layer.n_neurons):
        k = psp_window_matrix(layer.placed_kernel(i), n_steps, window, dt)
        psp = np.matmul(dense_spikes, k)  # (M, N_L, W)
        out[:, i, :] = np.tensordot(psp, layer.weights[i], axes=([1], [0]))
        out[:, i, :] += layer.bias[i]
    return out


def output_voltages(layer: LayerParams, spikes: SpikeTrainSet,
                    window: tuple[int, int], dt: float = 1.0) -> DiscreteSignal:
    """Model prediction of the output layer on the forecast window."""
    if layer.is_hidden:
        raise ValueError("output_voltages needs the non-spiking output layer")
    if spikes.n_neurons != layer.n_inputs:
        raise ValueError(
            f"layer expects {layer.n_inputs} input trains, got {spikes.n_neurons}"
        )
    dense = spikes.to_dense()[None, :, :]
    vals = output_voltages_batch(layer, dense, window, dt)[0]
    return DiscreteSignal(values=vals, dt=dt)


def forward(model: SnnModel, x) -> tuple[DiscreteSignal, list]:
    """Full forward pass: prediction on [T, T+H) and all hidden spike trains."""
    n_steps = model.grid.total_steps
    dense = dense_input(x, n_steps)
    if dense.shape[0] != model.d_in:
        raise ValueError(f"model expects {model.d_in} input channels, got {dense.shape[0]}")
    dense = dense[None, :, :]
    hidden_spikes = []
    for layer in model.layers[:-1]:
        spiked, _ = simulate_hidden_batch(layer, dense, model.grid.dt)
        hidden_spikes.append(SpikeTrainSet.from_dense(spiked[0]))
        dense = spiked.astype(float)
    vals = output_voltages_batch(model.layers[-1], dense, model.grid.window, model.grid.dt)[0]
    return DiscreteSignal(values=vals, dt=model.grid.dt), hidden_spikes


def forward_batch(model: SnnModel, dense_in: np.ndarray) -> tuple[np.ndarray, list]:
    """Batched forward pass; returns predictions (M, D_out, H) and spike masks."""
    dense = dense_in
    masks = []
    for layer in model.layers[:-1]:
        spiked, _ = simulate_hidden_batch(layer, dense, model.grid.dt)
        masks.append(spiked)
        dense = spiked.astype(float)
    preds = output_voltages_batch(model.layers[-1], dense, model.grid.window, model.grid.dt)
    return preds, masks


# ---------------------------------------------------------------------------
# serialization


def _kernel_to_dict(spec: KernelSpec) -> dict:
    return {"family": spec.family.value, "rectification": spec.rectification.value}


def _kernel_from_dict(d: dict) -> KernelSpec:
    return KernelSpec(KernelFamily(d["family"]), Rectification(d["rectification"]))


def _layer_to_dict(layer: LayerParams) -> dict:
    d = {
        "weights": layer.weights.tolist(),
        "bias": layer.bias.tolist(),
        "delay": layer.delay.tolist(),
        "support": layer.support.tolist(),
        "pspk": _kernel_to_dict(layer.pspk),
    }
    if layer.is_hidden:
        d["spike_cost"] = layer.spike_cost.tolist()
        d["rf_support"] = layer.rf_support.tolist()
        d["rfk"] = _kernel_to_dict(layer.rfk)
    return d


def _layer_from_dict(d: dict) -> LayerParams:
    kwargs = {}
    if "spike_cost" in d:
        kwargs = {
            "spike_cost": np.array(d["spike_cost"]),
            "rf_support": np.array(d["rf_support"]),
            "rfk": _kernel_from_dict(d["rfk"]),
        }
    return LayerParams(
        weights=np.array(d["weights"]),
        bias=np.array(d["bias"]),
        delay=np.array(d["delay"]),
        support=np.array(d["support"]),
        pspk=_kernel_from_dict(d["pspk"]),
        **kwargs,
    )


def model_to_dict(model: SnnModel) -> dict:
    return {
        "format": "sswim-model-v1",
        "d_in": model.d_in,
        "d_out": model.d_out,
        "grid": {
            "dt": model.grid.dt,
            "total_steps": model.grid.total_steps,
            "horizon": model.grid.horizon,
        },
        "layers": [_layer_to_dict(lay) for lay in model.layers],
        "metadata": model.metadata,
    }


def model_from_dict(d: dict) -> SnnModel:
    if d.get("format") != "sswim-model-v1":
        raise ValueError("not a recognized model file")
    grid = GridSpec(
        dt=d["grid"]["dt"],
        total_steps=d["grid"]["total_steps"],
        horizon=d["grid"]["horizon"],
    )
    return SnnModel(
        layers=[_layer_from_dict(ld) for ld in d["layers"]],
        d_in=d["d_in"],
        d_out=d["d_out"],
        grid=grid,
        metadata=d.get("metadata", {}),
    )


def save_model(model: SnnModel, path) -> None:
    """Write the model as JSON; floats round-trip exactly via shortest repr."""
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> SnnModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
