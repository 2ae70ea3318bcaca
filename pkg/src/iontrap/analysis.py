"""Noisy runs, replication with confidence intervals, error rates and the
decoherence/operational-error correlation."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from . import _kernels
from .benchmarks import ReferenceTrace, reference_trace, sample_points
from .circuits import Circuit, PulseSchedule, compile
from .engine import (
    DEFAULT_MEMORY_CAP,
    DenseState,
    PulseOp,
    PRUNE_THRESHOLD,
    PULSE_KINDS,
    QuantumState,
    inner_product,
    new_state,
    probability_of,
)
from .noise import DecoherenceModel, ErrorModel, NoiseStream, jump_step, perturb_angles


def fidelity_at(noisy: QuantumState, reference: QuantumState) -> float:
    """``|<reference|noisy>|**2``; the noisy state is not renormalized."""
    return abs(inner_product(reference, noisy)) ** 2


@dataclass(frozen=True)
class Sample:
    gate_index: int
    pulse_index: int
    fidelity: float
    norm_sq: float
    success_prob: float | None = None
    marker: str = ""


@dataclass
class RunTrace:
    benchmark: str
    seed: int
    error: ErrorModel
    decoherence: DecoherenceModel
    representation: str
    samples: list[Sample]
    fidelity_gate: int
    emissions: int = 0

    @property
    def gate_indices(self) -> np.ndarray:
        return np.array([s.gate_index for s in self.samples])

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([s.fidelity for s in self.samples])

    def sample_at(self, gate_index: int) -> Sample:
        for s in self.samples:
            if s.gate_index == gate_index:
                return s
        raise KeyError(gate_index)

    @property
    def final_fidelity(self) -> float:
        return self.sample_at(self.fidelity_gate).fidelity

    def success_by_marker(self) -> dict[str, float]:
        return {s.marker: s.success_prob for s in self.samples if s.marker and s.success_prob is not None}


@dataclass
class SimulationConfig:
    """Everything that defines a run except the seed."""

    circuit: Circuit
    error: ErrorModel = field(default_factory=ErrorModel)
    decoherence: DecoherenceModel = field(default_factory=DecoherenceModel)
    stride: int = 10
    representation: str = "dense"
    memory_cap: int | None = DEFAULT_MEMORY_CAP
    schedule: PulseSchedule | None = None
    reference: ReferenceTrace | None = None

    def prepared(self) -> SimulationConfig:
        """Compile and build the zero-error reference once."""
        if self.schedule is None:
            self.schedule = compile(self.circuit)
        if self.reference is None:
            self.reference = reference_trace(self.circuit, self.stride, self.schedule)
        return self

    def with_models(self, error: ErrorModel | None = None, decoherence: DecoherenceModel | None = None):
        return SimulationConfig(
            self.circuit,
            self.error if error is None else error,
            self.decoherence if decoherence is None else decoherence,
            self.stride,
            self.representation,
            self.memory_cap,
            self.schedule,
            self.reference,
        )

    @property
    def is_deterministic(self) -> bool:
        return not self.error.is_stochastic and not (
            self.decoherence.mode == "jump" and self.decoherence.dec > 0
        )


def _marker_names(circuit: Circuit) -> dict[int, str]:
    names: dict[int, str] = {}
    for name, g in sorted(circuit.marks.items(), key=lambda kv: kv[1]):
        names.setdefault(g, name)
    return names


def run_noisy(config: SimulationConfig, seed: int) -> RunTrace:
    """Perturb every pulse, apply it, then decohere; sample at gate boundaries."""
    config.prepared()
    circuit, sched, ref = config.circuit, config.schedule, config.reference
    error, deco = config.error, config.decoherence
    stream = NoiseStream(seed)
    thetas, phis = perturb_angles(sched.thetas, sched.phis, error, stream)
    state = new_state(circuit.num_qubits, circuit.initial_bits, config.representation, config.memory_cap)
    points = sample_points(circuit, config.stride)
    missing = [g for g in points if g not in ref.snapshots]
    if missing:
        raise ValueError(f"reference trace lacks snapshots at gates {missing[:5]}")

    success_qubits = circuit.metadata.get("success_qubits")
    success_patterns = circuit.metadata.get("success_patterns")
    markers = _marker_names(circuit)
    emissions = 0
    samples: list[Sample] = []
    done = 0
    for g in points:
        start, stop = sched.pulses_before(done), sched.pulses_before(g)
        emissions += _advance(state, sched, thetas, phis, deco, stream, start, stop)
        done = g
        success = None
        if success_qubits is not None:
            success = probability_of(state, success_qubits, success_patterns)
        samples.append(
            Sample(g, stop, fidelity_at(state, ref.snapshots[g]), state.norm_sq(), success, markers.get(g, ""))
        )
    return RunTrace(
        circuit.name, seed, error, deco, config.representation, samples, circuit.fidelity_gate, emissions
    )


def run_final_state(config: SimulationConfig, seed: int) -> QuantumState:
    """Run the whole schedule and return the state (no sampling)."""
    config.prepared()
    circuit, sched = config.circuit, config.schedule
    stream = NoiseStream(seed)
    thetas, phis = perturb_angles(sched.thetas, sched.phis, config.error, stream)
    state = new_state(circuit.num_qubits, circuit.initial_bits, config.representation, config.memory_cap)
    _advance(state, sched, thetas, phis, config.decoherence, stream, 0, sched.num_pulses)
    return state


def _advance(state, sched, thetas, phis, deco: DecoherenceModel, stream: NoiseStream, start: int, stop: int) -> int:
    """Apply pulses ``start:stop`` with decoherence after each; returns the emission count."""
    m = state.num_qubits
    if deco.mode == "decay":
        factor = math.exp(-deco.dec / 2)
        top = 3 if deco.aux_levels else 1
        if isinstance(state, DenseState):
            _kernels.run_pulses(state.amplitudes, m, sched.kinds, sched.qubits, thetas, phis, start, stop, factor, top)
        else:
            state.indices, state.values = _kernels.run_pulses_sparse(
                state.indices, state.values, m, sched.kinds, sched.qubits, thetas, phis,
                start, stop, factor, top, PRUNE_THRESHOLD,
            )
        return 0
    emissions = 0
    for k in range(start, stop):
        state.apply_pulse(PulseOp(PULSE_KINDS[sched.kinds[k]], int(sched.qubits[k]), float(thetas[k]), float(phis[k]), k))
        _, emitted = jump_step(state, deco.dec, stream, k, deco.aux_levels)
        emissions += emitted
    return emissions


# ---------------------------------------------------------------------------
# parallel map


def parallel_map(func: Callable, items: Sequence, workers: int = 1) -> list:
    """Order-preserving map; ``workers > 1`` uses a process pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))


def run_many(config: SimulationConfig, seeds: Iterable[int], workers: int = 1) -> list[RunTrace]:
    config.prepared()
    seeds = sorted(seeds)
    return parallel_map(partial(run_noisy, config), seeds, workers)


# ---------------------------------------------------------------------------
# replication


def t_interval(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float]:
    """(mean, half-width) of a Student-t confidence interval."""
    x = np.asarray(values, dtype=np.float64)
    n = x.shape[0]
    mean = float(np.mean(x))
    if n < 2:
        return mean, 0.0
    sem = float(np.std(x, ddof=1)) / math.sqrt(n)
    return mean, float(stats.t.ppf(0.5 + confidence / 2, n - 1)) * sem


@dataclass
class ReplicationSummary:
    gate_indices: np.ndarray
    mean_fidelity: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_runs: int
    target_half_width: float
    fidelity_gate: int
    seeds: list[int]
    traces: list[RunTrace]
    capped: bool = False
    mean_success: dict[str, float] = field(default_factory=dict)
    success_half_width: dict[str, float] = field(default_factory=dict)

    def _final_pos(self) -> int:
        return int(np.flatnonzero(self.gate_indices == self.fidelity_gate)[0])

    @property
    def mean_final_fidelity(self) -> float:
        return float(self.mean_fidelity[self._final_pos()])

    @property
    def final_ci(self) -> tuple[float, float]:
        i = self._final_pos()
        return float(self.ci_low[i]), float(self.ci_high[i])

    @property
    def final_half_width(self) -> float:
        lo, hi = self.final_ci
        return (hi - lo) / 2

    @property
    def peak_success(self) -> tuple[str, float]:
        marker = max(self.mean_success, key=self.mean_success.get)
        return marker, self.mean_success[marker]


def summarize(traces: Sequence[RunTrace], target_half_width: float, capped: bool = False) -> ReplicationSummary:
    traces = sorted(traces, key=lambda t: t.seed)
    gates = traces[0].gate_indices
    fids = np.array([t.fidelities for t in traces])
    n = fids.shape[0]
    means = fids.mean(axis=0)
    half = np.array([t_interval(fids[:, j])[1] for j in range(fids.shape[1])])
    mean_success, success_hw = {}, {}
    for marker in traces[0].success_by_marker():
        vals = [t.success_by_marker()[marker] for t in traces]
        mean_success[marker], success_hw[marker] = t_interval(vals)
    return ReplicationSummary(
        gates, means, means - half, means + half, n, target_half_width,
        traces[0].fidelity_gate, [t.seed for t in traces], list(traces), capped,
        mean_success, success_hw,
    )


def default_half_width(error: ErrorModel) -> float:
    """0.02, or 0.03 when only the phase angle is perturbed."""
    phi_only = (error.sigma_phi or error.mu_phi) and not (error.sigma_theta or error.mu_theta)
    return 0.03 if phi_only else 0.02


def replicate(
    config: SimulationConfig,
    target_half_width: float | None = None,
    min_runs: int = 4,
    max_runs: int = 64,
    base_seed: int = 1,
    workers: int = 1,
    metric: str = "fidelity",
) -> ReplicationSummary:
    """Seeded runs in batches until the 95% CI half-width meets the target.

    ``metric='fidelity'`` tracks the final fidelity; ``'success'`` tracks
    every marked success probability (Grover iterations) and stops on the
    widest one. Deterministic configurations run once.
    """
    target = default_half_width(config.error) if target_half_width is None else target_half_width
    config.prepared()
    if config.is_deterministic:
        return summarize(run_many(config, [base_seed]), target)
    traces: list[RunTrace] = []
    batch = max(min_runs, workers)
    next_seed = base_seed
    while True:
        seeds = range(next_seed, next_seed + batch)
        next_seed += batch
        traces += run_many(config, seeds, workers)
        summary = summarize(traces, target)
        if metric == "success":
            width = max(summary.success_half_width.values())
        else:
            width = summary.final_half_width
        if width <= target:
            return summary
        if len(traces) >= max_runs:
            summary.capped = True
            return summary
        batch = max(workers, min(len(traces), max_runs - len(traces)))


# ---------------------------------------------------------------------------
# error rate per gate


@dataclass
class ErrorRateReport:
    rate: float
    gate_indices: np.ndarray
    rates: np.ndarray
    pulses_per_gate: float | None = None


def error_rate(
    source: RunTrace | ReplicationSummary, stride: int = 10, pulses_per_gate: float | None = None
) -> ErrorRateReport:
    """Mean over sample points of ``(1 - fidelity) / gates`` every ``stride`` gates."""
    if isinstance(source, ReplicationSummary):
        gates, fids = source.gate_indices, source.mean_fidelity
    else:
        gates, fids = source.gate_indices, source.fidelities
    upto = source.fidelity_gate
    sel = (gates > 0) & (gates % stride == 0) & (gates <= upto)
    if not np.any(sel):
        raise ValueError(f"no samples on a {stride}-gate stride")
    rates = (1.0 - fids[sel]) / gates[sel]
    return ErrorRateReport(float(np.mean(rates)), gates[sel], rates, pulses_per_gate)


# ---------------------------------------------------------------------------
# correlation between decoherence and operational error


@dataclass
class CorrelationReport:
    gate_indices: np.ndarray
    f_both: np.ndarray
    f_dec: np.ndarray
    f_op: np.ndarray
    omega: np.ndarray
    seeds: list[int]
    op_traces: list[RunTrace] = field(default_factory=list, repr=False)

    @property
    def omega_max(self) -> float:
        return float(np.max(np.abs(self.omega[self.gate_indices > 0])))

    @property
    def omega_avg(self) -> float:
        return float(np.mean(np.abs(self.omega[self.gate_indices > 0])))


def correlation(
    config: SimulationConfig,
    seeds: Sequence[int],
    workers: int = 1,
    op_traces: Sequence[RunTrace] | None = None,
) -> CorrelationReport:
    """Paired-seed ``F_both - F_dec * F_op`` at every sample point.

    ``config`` carries both the operational error and the decoherence; the
    op-only and combined legs share seeds so the seed variance cancels.
    Op-only traces from an earlier call with the same error model may be
    passed in to skip that leg (handy when sweeping ``dec``).
    """
    config.prepared()
    seeds = sorted(seeds)
    dec_only = config.with_models(error=ErrorModel())
    dec_traces = run_many(dec_only, seeds if not dec_only.is_deterministic else seeds[:1], workers)
    if op_traces is None:
        op_traces = run_many(config.with_models(decoherence=DecoherenceModel()), seeds, workers)
    elif [t.seed for t in op_traces] != seeds or any(t.error != config.error for t in op_traces):
        raise ValueError("op-only traces must match the seeds and error model")
    both_traces = run_many(config, seeds, workers)
    f_dec = np.mean([t.fidelities for t in dec_traces], axis=0)
    f_op = np.array([t.fidelities for t in op_traces])
    f_both = np.array([t.fidelities for t in both_traces])
    omega = np.mean(f_both - f_dec[None, :] * f_op, axis=0)
    return CorrelationReport(
        op_traces[0].gate_indices, f_both.mean(axis=0), f_dec, f_op.mean(axis=0), omega, list(seeds),
        list(op_traces),
    )
