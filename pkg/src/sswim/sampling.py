"""Pseudometrics on signal and spike-train spaces, and pair sampling.

Distances are built by embedding centered signals into a complex function
space and taking the norm of the embedding difference, which makes every
shipped distance a pseudometric by construction. Spike trains are first
mapped to real-valued functions by convolving each train with a kernel,
so the same embeddings apply.

Pairs of samples are drawn with probability proportional to the ratio of
output distance to input distance, so pairs whose targets differ a lot
while their inputs barely do ("steep" pairs) are picked most often. The
Shannon entropy of that distribution doubles as a selection criterion
between candidate distance functions: lower entropy means the distance
pair separates the dataset more decisively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistributionError
from .kernels import KernelSpec, PlacedKernel
from .network import causal_conv_matrix
from .signals import DiscreteSignal, SpikeTrainSet


@dataclass(frozen=True)
class EmbeddingSpec:
    """One of the shipped embeddings; ``band`` only applies to kind="band"."""

    kind: str                       # "l2" | "cos" | "mag" | "phase" | "band"
    band: tuple | None = None       # (lo, hi) DFT bin range, half-open

    def __post_init__(self):
        if self.kind not in ("l2", "cos", "mag", "phase", "band"):
            raise ValueError(f"unknown embedding kind: {self.kind!r}")
        if self.kind == "band":
            if self.band is None or len(self.band) != 2 or self.band[0] >= self.band[1]:
                raise ValueError("band embedding needs bins (lo, hi) with lo < hi")
        elif self.band is not None:
            raise ValueError("band bins are only valid for the band embedding")

    @property
    def name(self) -> str:
        if self.kind == "band":
            return f"band:{self.band[0]}:{self.band[1]}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "EmbeddingSpec":
        if text.startswith("band:"):
            parts = text.split(":")
            if len(parts) != 3:
                raise ValueError(f"band spec must look like 'band:lo:hi', got {text!r}")
            return cls("band", (int(parts[1]), int(parts[2])))
        return cls(text)


def center_rows(values: np.ndarray) -> np.ndarray:
    """Subtract each channel's temporal mean."""
    return values - values.mean(axis=-1, keepdims=True)


def embed(spec: EmbeddingSpec, values, dt: float = 1.0) -> np.ndarray:
    """Apply an embedding to a (channels, steps) array; may return complex."""
    if isinstance(values, DiscreteSignal):
        dt = values.dt
        values = values.values
    values = np.asarray(values, dtype=float)
    if spec.kind == "l2":
        return values.copy()
    if spec.kind == "cos":
        norm = np.sqrt(np.sum(values * values) * dt)
        if norm == 0.0:
            return values.copy()
        return values / norm
    spectrum = np.fft.fft(values, axis=-1, norm="ortho")
    if spec.kind == "mag":
        return np.abs(spectrum)
    if spec.kind == "phase":
        mag = np.abs(spectrum)
        out = np.zeros_like(spectrum)
        nz = mag > 0.0
        out[nz] = spectrum[nz] / mag[nz]
        return out
    lo, hi = spec.band
    if hi > values.shape[-1]:
        raise ValueError(
            f"band bins [{lo}, {hi}) exceed the {values.shape[-1]}-bin spectrum"
        )
    out = np.zeros_like(spectrum)
    out[..., lo:hi] = spectrum[..., lo:hi]
    return out


@dataclass(frozen=True)
class VanRossumLift:
    """Maps spike trains to functions by placing one kernel copy per spike."""

    kernel: KernelSpec
    support: float = 1.0

    def conv_matrix(self, n_steps: int, dt: float = 1.0) -> np.ndarray:
        pk = PlacedKernel(self.kernel, 0.0, self.support)
        taps = pk.taps(min(pk.tap_span(dt), n_steps), dt)
        return causal_conv_matrix(taps, n_steps)

    def apply(self, trains: SpikeTrainSet, dt: float = 1.0) -> np.ndarray:
        return trains.to_dense() @ self.conv_matrix(trains.n_steps, dt).T

    def apply_batch(self, dense_combs: np.ndarray, dt: float = 1.0) -> np.ndarray:
        c = self.conv_matrix(dense_combs.shape[-1], dt)
        return dense_combs @ c.T


@dataclass(frozen=True)
class Pseudometric:
    """Embedding-based distance, optionally lifting spike trains first."""

    embedding: EmbeddingSpec
    lift: VanRossumLift | None = None

    @property
    def name(self) -> str:
        if self.lift is None:
            return self.embedding.name
        return f"vr[{self.lift.kernel.family.value}]+{self.embedding.name}"

    def _to_dense(self, sample, dt: float) -> np.ndarray:
        if isinstance(sample, SpikeTrainSet):
            if self.lift is None:
                raise ValueError("spike-train inputs need a pseudometric with a lift")
            return self.lift.apply(sample, dt)
        if isinstance(sample, DiscreteSignal):
            return sample.values
        return np.asarray(sample, dtype=float)

    def prepare(self, sample, dt: float = 1.0) -> np.ndarray:
        """Centered, embedded, quadrature-weighted flat vector of one sample."""
        dense = self._to_dense(sample, dt)
        emb = embed(self.embedding, center_rows(dense), dt)
        return (emb * np.sqrt(dt)).ravel()

    def prepare_batch(self, dense: np.ndarray, dt: float = 1.0) -> np.ndarray:
        """Same as prepare, vectorized over a (samples, channels, steps) array."""
        if self.lift is not None:
            dense = self.lift.apply_batch(dense, dt)
        centered = dense - dense.mean(axis=-1, keepdims=True)
        rows = [embed(self.embedding, centered[i], dt).ravel() for i in range(dense.shape[0])]
        return np.stack(rows) * np.sqrt(dt)

    def centered_channel_norms(self, dense: np.ndarray, dt: float = 1.0) -> np.ndarray:
        """Per-channel L2 norms after lifting and centering: (samples, channels)."""
        if self.lift is not None:
            dense = self.lift.apply_batch(dense, dt)
        centered = dense - dense.mean(axis=-1, keepdims=True)
        return np.sqrt(np.sum(centered * centered, axis=-1) * dt)

    def distance(self, a, b, dt: float = 1.0) -> float:
        va = self.prepare(a, dt)
        vb = self.prepare(b, dt)
        return float(np.linalg.norm(va - vb))

    def pairwise(self, dense: np.ndarray, dt: float = 1.0) -> np.ndarray:
        """Full symmetric distance matrix over a batch of samples."""
        vecs = self.prepare_batch(dense, dt)
        sq = np.sum((vecs * vecs.conj()).real, axis=1)
        gram = (vecs @ vecs.conj().T).real
        d2 = sq[:, None] + sq[None, :] - 2.0 * gram
        np.maximum(d2, 0.0, out=d2)
        dist = np.sqrt(d2)
        dist = np.tril(dist, -1)
        dist = dist + dist.T
        return dist


def pseudometric(metric: Pseudometric, a, b, dt: float = 1.0) -> float:
    return metric.distance(a, b, dt)


# ---------------------------------------------------------------------------
# pair distribution


@dataclass
class PairProbabilities:
    """Normalized sampling distribution over distinct sample pairs (n > m)."""

    probs: np.ndarray        # (K,) normalized, K = M(M-1)/2
    pair_n: np.ndarray       # (K,) first index of each pair
    pair_m: np.ndarray       # (K,) second index, pair_m < pair_n
    n_samples: int = 0

    @property
    def n_pairs(self) -> int:
        return self.probs.size


def _pair_index_arrays(n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    n_idx, m_idx = np.tril_indices(n_samples, k=-1)
    return n_idx.astype(np.int64), m_idx.astype(np.int64)


def pair_probabilities_from_matrices(dist_in: np.ndarray, dist_out: np.ndarray,
                                     eps: float, valid: np.ndarray | None = None
                                     ) -> PairProbabilities:
    """Build the pair distribution from precomputed distance matrices."""
    n = dist_in.shape[0]
    n_idx, m_idx = _pair_index_arrays(n)
    raw = dist_out[n_idx, m_idx] / (dist_in[n_idx, m_idx] + eps)
    if valid is not None:
        keep = valid[n_idx] & valid[m_idx]
        raw = np.where(keep, raw, 0.0)
    total = raw.sum()
    if total <= 0.0:
        raise DegenerateDistributionError("every pair has zero probability")
    return PairProbabilities(probs=raw / total, pair_n=n_idx, pair_m=m_idx, n_samples=n)


def pair_probabilities(inputs_dense: np.ndarray, targets_dense: np.ndarray,
                       d_in: Pseudometric, d_out: Pseudometric,
                       eps: float = 1e-6, min_norm: float = 1e-6,
                       dt: float = 1.0) -> PairProbabilities:
    """Pair distribution over an initialization batch.

    A sample is filtered out (all its pairs get probability zero) when every
    one of its input channels has an L2 norm below ``min_norm`` after
    centering.
    """
    if inputs_dense.shape[0] != targets_dense.shape[0]:
        raise ValueError("inputs and targets must have the same sample count")
    if inputs_dense.shape[0] < 2:
        raise ValueError("need at least two samples to form pairs")
    dist_in = d_in.pairwise(inputs_dense, dt)
    dist_out = d_out.pairwise(targets_dense, dt)
    norms = d_in.centered_channel_norms(inputs_dense, dt)
    valid = np.any(norms >= min_norm, axis=1)
    return pair_probabilities_from_matrices(dist_in, dist_out, eps, valid)


def sample_pair(pairs: PairProbabilities, rng: np.random.Generator) -> tuple[int, int]:
    """Draw one pair of distinct sample indices."""
    k = rng.choice(pairs.n_pairs, p=pairs.probs)
    return int(pairs.pair_n[k]), int(pairs.pair_m[k])


def shannon_entropy(probs) -> float:
    """Natural-log entropy with the 0*log(0) = 0 convention."""
    if isinstance(probs, PairProbabilities):
        probs = probs.probs
    probs = np.asarray(probs, dtype=float)
    nz = probs[probs > 0.0]
    return float(-np.sum(nz * np.log(nz)))


def select_metrics(inputs_dense: np.ndarray, targets_dense: np.ndarray,
                   candidates_in, candidates_out,
                   eps: float = 1e-6, min_norm: float = 1e-6,
                   min_entropy: float | None = None,
                   dt: float = 1.0) -> tuple[Pseudometric, Pseudometric]:
    """Pick the candidate pair whose sampling distribution has least entropy.

    Distance matrices are computed once per candidate and reused across
    combinations. Ties keep the earliest pair in candidate-list order;
    combinations whose distribution is degenerate (or whose entropy falls
    below ``min_entropy``, when given) are skipped.
    """
    if not candidates_in or not candidates_out:
        raise ValueError("candidate sets must be nonempty")
    mats_in, valids = [], []
    for cand in candidates_in:
        mats_in.append(cand.pairwise(inputs_dense, dt))
        norms = cand.centered_channel_norms(inputs_dense, dt)
        valids.append(np.any(norms >= min_norm, axis=1))
    mats_out = [cand.pairwise(targets_dense, dt) for cand in candidates_out]
    best = None
    best_entropy = np.inf
    for i, cand_in in enumerate(candidates_in):
        for j, cand_out in enumerate(candidates_out):
            try:
                pairs = pair_probabilities_from_matrices(
                    mats_in[i], mats_out[j], eps, valids[i]
                )
            except DegenerateDistributionError:
                continue
            h = shannon_entropy(pairs)
            if min_entropy is not None and h < min_entropy:
                continue
            if h < best_entropy:
                best_entropy = h
                best = (cand_in, cand_out)
    if best is None:
        raise DegenerateDistributionError(
            "no candidate combination yields a usable sampling distribution"
        )
    return best
