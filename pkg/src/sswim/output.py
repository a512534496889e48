"""Output-layer fitting: delays, kernel supports, and ridge weights.

Delays come from a correlation analysis: the centered target is summed at
every spike time shifted by a candidate lag, the magnitudes aggregated
over samples and hidden neurons, and the lag of the peak taken. Kernel
supports come from a one-dimensional search over a power-law candidate
grid, scored by the exact least-squares residual obtained from a thin QR
factorization of a design matrix shared by all output neurons. The final
weights and biases solve ridge-regularized normal equations accumulated
in batches, with the regularization strength selected on a validation
split via a single symmetric eigendecomposition per neuron.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import EigensolverError, SilentNetworkError
from .kernels import KernelSpec, PlacedKernel, kernel_peak_offset
from .network import psp_window_matrix
from .signals import SpikeTrainSet


# ---------------------------------------------------------------------------
# delays


@dataclass
class DelayEstimate:
    per_neuron: np.ndarray   # (d_out,) delay per output neuron, in steps
    aggregate: float         # shared delay used for the support search
    aggregation: str = "median"


def _aggregate_delays(delays: np.ndarray, how: str) -> float:
    if how == "median":
        return float(np.median(delays))
    if how == "min":
        return float(np.min(delays))
    raise ValueError(f"unknown delay aggregation: {how!r}")


def estimate_delays(spike_sets: list, targets: np.ndarray, pspk_spec: KernelSpec,
                    obs_len: int, window_start: int,
                    aggregation: str = "median", dt: float = 1.0) -> DelayEstimate:
    """Correlation-based delay per output neuron.

    ``spike_sets`` holds one SpikeTrainSet per sample (hidden-layer output
    on the initialization batch); ``targets`` is (samples, d_out, horizon)
    on the window starting at ``window_start``. For each candidate lag in
    [0, obs_len) the centered target is evaluated at every spike time plus
    the lag (zero outside its window), magnitudes are aggregated over
    samples and trains, and the peak lag wins. Ties fall to the smallest
    lag.
    """
    n_samples, d_out, horizon = targets.shape
    if len(spike_sets) != n_samples:
        raise ValueError("one spike train set per sample is required")
    if not any(s.total_spikes() for s in spike_sets):
        raise SilentNetworkError("no hidden spikes; delays cannot be estimated")
    lags = np.arange(obs_len)
    agg = np.zeros((d_out, obs_len))
    for spikes, target in zip(spike_sets, targets):
        centered = target - target.mean(axis=1, keepdims=True)
        padded = np.zeros((d_out, spikes.n_steps + obs_len))
        padded[:, window_start: window_start + horizon] = centered
        counts = spikes.counts()
        nonempty = np.flatnonzero(counts)
        if nonempty.size == 0:
            continue
        all_spikes = np.concatenate([spikes.trains[j] for j in nonempty])
        gathered = padded[:, all_spikes[:, None] + lags[None, :]]  # (d_out, F, O)
        starts = np.concatenate([[0], np.cumsum(counts[nonempty])[:-1]])
        per_train = np.add.reduceat(gathered, starts, axis=1)      # (d_out, J, O)
        agg += np.abs(per_train).sum(axis=1)
    delta_k = kernel_peak_offset(pspk_spec)
    per_neuron = np.clip(np.argmax(agg, axis=1) * dt - delta_k, 0.0, (obs_len - 1) * dt)
    return DelayEstimate(
        per_neuron=per_neuron,
        aggregate=_aggregate_delays(per_neuron, aggregation),
        aggregation=aggregation,
    )


# ---------------------------------------------------------------------------
# support candidates and the residual search


@dataclass
class SupportCandidates:
    values: np.ndarray
    alpha: float
    bounds: tuple
    count: int


def support_candidates(lo: float, hi: float, alpha: float, count: int) -> SupportCandidates:
    """Power-law spaced candidates between ``lo`` and almost ``hi``.

    The grid is linear in x**(1/alpha): the first point equals ``lo``
    exactly while the last stops short of ``hi`` by one grid fraction.
    """
    if lo < 0 or hi <= lo:
        raise ValueError("need 0 <= lo < hi")
    if alpha < 1.0:
        raise ValueError("spacing exponent must be at least 1")
    if count < 2:
        raise ValueError("need at least two candidates")
    m = np.arange(1, count + 1)
    frac = (m - 1) / count
    values = ((1.0 - frac) * lo ** (1.0 / alpha) + frac * hi ** (1.0 / alpha)) ** alpha
    return SupportCandidates(values=values, alpha=alpha, bounds=(lo, hi), count=count)


def _stack_spike_combs(spike_sets) -> np.ndarray:
    """Dense (samples, neurons, steps) indicator from spike sets or a mask."""
    if isinstance(spike_sets, np.ndarray):
        return spike_sets.astype(float)
    return np.stack([s.to_dense() for s in spike_sets])


def assemble_design(dense_combs: np.ndarray, pk: PlacedKernel,
                    window: tuple[int, int], dt: float = 1.0) -> np.ndarray:
    """Stacked design matrix: a ones column plus one kernel-response column
    per hidden neuron, rows running over samples x window steps."""
    n_samples, n_hidden, n_steps = dense_combs.shape
    k = psp_window_matrix(pk, n_steps, window, dt)
    psp = np.matmul(dense_combs, k)                    # (M, N_L, W)
    width = window[1] - window[0]
    design = np.empty((n_samples * width, n_hidden + 1))
    design[:, 0] = 1.0
    design[:, 1:] = psp.transpose(0, 2, 1).reshape(n_samples * width, n_hidden)
    return design


def _stack_targets(targets: np.ndarray) -> np.ndarray:
    """(samples, d_out, H) -> (samples * H, d_out) matching design row order."""
    return targets.transpose(0, 2, 1).reshape(-1, targets.shape[1])


def projection_residuals(design: np.ndarray, stacked_targets: np.ndarray) -> np.ndarray:
    """||y||^2 - ||Q^T y||^2 per target column, via rank-revealing thin QR."""
    q, r, _ = scipy.linalg.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size and diag[0] > 0.0:
        tol = max(design.shape) * np.finfo(float).eps * diag[0]
        rank = int(np.sum(diag > tol))
    else:
        rank = 0
    q = q[:, :rank]
    y_sq = np.sum(stacked_targets**2, axis=0)
    proj_sq = np.sum((q.T @ stacked_targets) ** 2, axis=0)
    return np.maximum(y_sq - proj_sq, 0.0)


def residual_for_candidate(spike_sets: list, targets: np.ndarray,
                           tau_bar: float, sigma_c: float, pspk_spec: KernelSpec,
                           window: tuple[int, int], dt: float = 1.0) -> np.ndarray:
    """Optimal least-squares residual norms per output neuron for one support."""
    combs = _stack_spike_combs(spike_sets)
    design = assemble_design(combs, PlacedKernel(pspk_spec, tau_bar, sigma_c), window, dt)
    return projection_residuals(design, _stack_targets(targets))


def select_supports(spike_sets: list, targets: np.ndarray, delays: DelayEstimate,
                    candidates: SupportCandidates, pspk_spec: KernelSpec,
                    window: tuple[int, int], dt: float = 1.0) -> np.ndarray:
    """Residual-minimizing support per output neuron over the candidate grid.

    One QR factorization per candidate is shared across all output neurons;
    ties resolve to the smallest candidate.
    """
    combs = _stack_spike_combs(spike_sets)
    stacked = _stack_targets(targets)
    residuals = np.empty((candidates.count, targets.shape[1]))
    for c, sigma_c in enumerate(candidates.values):
        design = assemble_design(
            combs, PlacedKernel(pspk_spec, delays.aggregate, float(sigma_c)), window, dt
        )
        residuals[c] = projection_residuals(design, stacked)
    return candidates.values[np.argmin(residuals, axis=0)]


# ---------------------------------------------------------------------------
# batched normal equations


@dataclass
class GramAccumulator:
    """Streaming sums for ridge normal equations over one design geometry.

    Holds the Gram matrix of the stacked design, the right-hand sides for
    any number of target columns, the targets' squared norms, and the
    number of samples seen. Peak memory is independent of how many samples
    stream through.
    """

    n_features: int
    n_targets: int
    gram: np.ndarray = field(init=False)
    rhs: np.ndarray = field(init=False)
    target_sq: np.ndarray = field(init=False)
    count: int = 0

    def __post_init__(self):
        self.gram = np.zeros((self.n_features, self.n_features))
        self.rhs = np.zeros((self.n_features, self.n_targets))
        self.target_sq = np.zeros(self.n_targets)

    def add_block(self, design: np.ndarray, targets: np.ndarray, n_samples: int) -> None:
        if design.shape[1] != self.n_features:
            raise ValueError("design block has the wrong number of columns")
        if targets.shape != (design.shape[0], self.n_targets):
            raise ValueError("target block shape does not match the design block")
        self.gram += design.T @ design
        self.rhs += design.T @ targets
        self.target_sq += np.sum(targets**2, axis=0)
        self.count += n_samples

    def merge(self, other: "GramAccumulator") -> "GramAccumulator":
        if (self.n_features, self.n_targets) != (other.n_features, other.n_targets):
            raise ValueError("accumulators have different shapes")
        out = GramAccumulator(self.n_features, self.n_targets)
        out.gram = self.gram + other.gram
        out.rhs = self.rhs + other.rhs
        out.target_sq = self.target_sq + other.target_sq
        out.count = self.count + other.count
        return out

    def validate(self, tol: float = 1e-8) -> None:
        asym = np.max(np.abs(self.gram - self.gram.T))
        if asym > tol:
            raise ValueError(f"gram matrix asymmetry {asym:.3e} exceeds {tol:.0e}")


@dataclass
class NormalEquations:
    """Per-output-neuron accumulators, deduplicated over equal (delay, support)."""

    groups: list            # list of GramAccumulator
    group_of_neuron: list   # neuron index -> (group index, target column)
    delays: np.ndarray
    supports: np.ndarray

    def accumulator_for(self, neuron: int) -> tuple[GramAccumulator, int]:
        g, col = self.group_of_neuron[neuron]
        return self.groups[g], col


def _dedupe_params(delays: np.ndarray, supports: np.ndarray):
    groups = {}
    group_of_neuron = []
    members = []
    for i, key in enumerate(zip(delays.tolist(), supports.tolist())):
        if key not in groups:
            groups[key] = len(members)
            members.append([])
        g = groups[key]
        group_of_neuron.append((g, len(members[g])))
        members[g].append(i)
    keys = list(groups)
    return keys, members, group_of_neuron


def accumulate_normal_equations(batches, delays: np.ndarray, supports: np.ndarray,
                                pspk_spec: KernelSpec, window: tuple[int, int],
                                dt: float = 1.0) -> NormalEquations:
    """Stream (spike_sets, targets) batches into per-neuron normal equations.

    ``batches`` yields tuples of a list of SpikeTrainSet and the matching
    (samples, d_out, horizon) target array. Neurons sharing the same
    (delay, support) share one Gram matrix; the full stacked design is
    never materialized.
    """
    delays = np.asarray(delays, dtype=float)
    supports = np.asarray(supports, dtype=float)
    keys, members, group_of_neuron = _dedupe_params(delays, supports)
    accs = None
    for spike_sets, targets in batches:
        combs = _stack_spike_combs(spike_sets)
        stacked = _stack_targets(targets)
        if accs is None:
            n_features = combs.shape[1] + 1
            accs = [GramAccumulator(n_features, len(m)) for m in members]
        for g, (key, cols) in enumerate(zip(keys, members)):
            design = assemble_design(
                combs, PlacedKernel(pspk_spec, key[0], key[1]), window, dt
            )
            accs[g].add_block(design, stacked[:, cols], combs.shape[0])
    if accs is None:
        raise ValueError("no batches were streamed")
    remap = [(g, col) for g, col in group_of_neuron]
    return NormalEquations(
        groups=accs, group_of_neuron=remap, delays=delays, supports=supports
    )


def lambda_grid(count: int = 32, lo: float = 1e-5, hi: float = 0.5) -> np.ndarray:
    """Logarithmically spaced ridge candidates."""
    if count < 1:
        raise ValueError("need at least one candidate")
    if count == 1:
        return np.array([lo])
    return np.logspace(np.log10(lo), np.log10(hi), count)


def solve_with_lambda_search(train_ne: NormalEquations, valid_ne: NormalEquations,
                             lambdas: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ridge solve per output neuron with validation-selected regularization.

    One symmetric eigendecomposition of the training Gram per neuron covers
    every candidate: with gram = V diag(e) V^T the ridge solution for
    candidate lam is V diag(1/(e + M*lam)) V^T rhs. Candidates are scored
    by the validation quadratic loss; ties keep the larger lambda.

    Returns (weights (d_out, n_hidden), bias (d_out,), chosen lambda (d_out,)).
    """
    lambdas = np.asarray(lambdas, dtype=float)
    n_neurons = len(train_ne.group_of_neuron)
    n_features = train_ne.groups[0].n_features
    weights = np.empty((n_neurons, n_features - 1))
    bias = np.empty(n_neurons)
    chosen = np.empty(n_neurons)
    eig_cache = {}
    for i in range(n_neurons):
        g, col = train_ne.group_of_neuron[i]
        acc = train_ne.groups[g]
        vacc, vcol = valid_ne.accumulator_for(i)
        if g not in eig_cache:
            sym = 0.5 * (acc.gram + acc.gram.T)
            try:
                eig_cache[g] = np.linalg.eigh(sym)
            except np.linalg.LinAlgError as exc:
                raise EigensolverError(
                    f"eigendecomposition failed for output neuron {i}: {exc}", neuron=i
                ) from exc
        evals, evecs = eig_cache[g]
        rhs = acc.rhs[:, col]
        rot_rhs = evecs.T @ rhs
        best_loss = np.inf
        best_p = None
        best_lam = None
        for lam in lambdas:
            p = evecs @ (rot_rhs / (evals + acc.count * lam))
            loss = p @ (vacc.gram @ p) - 2.0 * (p @ vacc.rhs[:, vcol]) + vacc.target_sq[vcol]
            if loss <= best_loss:
                best_loss = loss
                best_p = p
                best_lam = lam
        bias[i] = best_p[0]
        weights[i] = best_p[1:]
        chosen[i] = best_lam
    return weights, bias, chosen


def condition_bound_diagnostic(acc: GramAccumulator, lam: float,
                               spike_counts: np.ndarray, window_len: int,
                               kernel_sq_norm: float) -> float:
    """Closed-form upper bound on the ridge system's condition number.

    The ones column contributes ``window_len`` per sample and each spike at
    most one full copy of the discretized kernel, so the bound is
    1 + window_len / lam + kernel_sq_norm * sum(|T|^2) / (count * lam).
    Purely diagnostic.
    """
    if lam <= 0.0:
        raise ValueError("the bound requires a positive regularization")
    counts_sq = float(np.sum(np.asarray(spike_counts, dtype=float) ** 2))
    return 1.0 + window_len / lam + kernel_sq_norm * counts_sq / (acc.count * lam)
