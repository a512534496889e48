"""Core containers for gridded signals and spike trains.

Everything in the package lives on a uniform time grid with step ``dt``
(1 timestep by default). Real-valued signals are dense channel-by-step
matrices; spike trains are kept sparse as sorted step indices per neuron.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class DiscreteSignal:
    """Multivariate real-valued function sampled on a uniform time grid."""

    values: np.ndarray  # (channels, steps)
    dt: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"signal values must be 2-D, got shape {self.values.shape}")
        if self.values.shape[0] < 1:
            raise ValueError("signal needs at least one channel")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("signal contains non-finite entries")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]


@dataclass
class SpikeTrainSet:
    """Per-neuron sorted spike step indices on a shared grid.

    Each train is strictly increasing, so a neuron fires at most once per
    timestep by construction.
    """

    trains: list = field(default_factory=list)
    n_steps: int = 0

    def __post_init__(self):
        clean = []
        for i, train in enumerate(self.trains):
            arr = np.asarray(train, dtype=np.int64)
            if arr.ndim != 1:
                raise ValueError(f"train {i} must be 1-D")
            if arr.size:
                if np.any(np.diff(arr) <= 0):
                    raise ValueError(f"train {i} is not strictly increasing")
                if arr[0] < 0 or arr[-1] >= self.n_steps:
                    raise ValueError(
                        f"train {i} has spikes outside [0, {self.n_steps})"
                    )
            clean.append(arr)
        self.trains = clean

    @property
    def n_neurons(self) -> int:
        return len(self.trains)

    def counts(self) -> np.ndarray:
        return np.array([t.size for t in self.trains], dtype=np.int64)

    def total_spikes(self) -> int:
        return int(self.counts().sum())

    def to_dense(self) -> np.ndarray:
        """0/1 spike indicator matrix of shape (neurons, steps)."""
        dense = np.zeros((self.n_neurons, self.n_steps))
        for i, train in enumerate(self.trains):
            dense[i, train] = 1.0
        return dense

    @classmethod
    def from_dense(cls, mask: np.ndarray) -> "SpikeTrainSet":
        mask = np.asarray(mask)
        trains = [np.flatnonzero(mask[i]).astype(np.int64) for i in range(mask.shape[0])]
        return cls(trains=trains, n_steps=mask.shape[1])
