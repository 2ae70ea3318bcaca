"""State vectors over (phonon level x qubit bit-string) and laser-pulse dynamics.

Every amplitude is addressed by ``index = p * 2**M + b`` where ``b`` is the
qubit bit-string (qubit ``q`` is bit ``q`` of ``b``) and ``p`` is the level of
the shared phonon bus. Four levels are kept: 0 and 1 are the bus ground and
first excited state, 2 is the shared auxiliary level reached by ``A`` pulses
and 3 is the parking level reached by ``P`` pulses.

Two representations are provided. :class:`DenseState` stores all
``4 * 2**M`` amplitudes and runs pulses through numba kernels.
:class:`SparseState` stores only non-zero amplitudes together with their
explicit index, which keeps decoherence-only runs at the size of the
superposition instead of the size of the register.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import _kernels

PHONON_LEVELS = 4
PULSE_KINDS = ("V", "U", "A", "P")
KIND_CODES = {name: code for code, name in enumerate(PULSE_KINDS)}

#: amplitudes below this magnitude are dropped from sparse states
PRUNE_THRESHOLD = 1e-15
#: default cap on the dense amplitude buffer (bytes)
DEFAULT_MEMORY_CAP = 2 * 1024**3

# (first plane, first qubit value, second plane, second qubit value)
_SIDEBAND = {1: (1, 0, 0, 1), 2: (1, 0, 2, 0), 3: (1, 0, 3, 0)}


class CapacityError(MemoryError):
    """Raised when a dense state would exceed the configured memory cap."""


@dataclass(frozen=True)
class PulseOp:
    """One laser pulse. ``kind`` is one of ``V``, ``U``, ``A``, ``P``."""

    kind: str
    qubit: int
    theta: float
    phi: float
    pulse_index: int = 0

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if self.qubit < 0:
            raise ValueError("qubit index must be non-negative")
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise ValueError("pulse angles must be finite")

    def with_angles(self, theta: float, phi: float) -> PulseOp:
        return replace(self, theta=theta, phi=phi)


def rotation_block(theta: float, phi: float) -> np.ndarray:
    """The 2x2 block shared by all pulse kinds."""
    c = math.cos(theta / 2)
    s = math.sin(theta / 2)
    return np.array(
        [
            [c, -1j * cmath.exp(-1j * phi) * s],
            [-1j * cmath.exp(1j * phi) * s, c],
        ],
        dtype=np.complex128,
    )


def dense_bytes(num_qubits: int) -> int:
    return PHONON_LEVELS * (1 << num_qubits) * np.dtype(np.complex128).itemsize


def _check_bits(num_qubits: int, bits: int) -> None:
    if num_qubits < 1:
        raise ValueError("num_qubits must be >= 1")
    if not 0 <= bits < (1 << num_qubits):
        raise ValueError(f"initial bit-string {bits} out of range for {num_qubits} qubits")


class DenseState:
    """Full amplitude vector of length ``4 * 2**num_qubits``."""

    representation = "dense"

    def __init__(self, num_qubits: int, amplitudes: np.ndarray):
        self.num_qubits = num_qubits
        self.amplitudes = amplitudes

    @classmethod
    def basis(cls, num_qubits: int, bits: int = 0, memory_cap: int | None = DEFAULT_MEMORY_CAP):
        _check_bits(num_qubits, bits)
        if memory_cap is not None and dense_bytes(num_qubits) > memory_cap:
            raise CapacityError(
                f"dense state for {num_qubits} qubits needs {dense_bytes(num_qubits)} bytes "
                f"(cap {memory_cap})"
            )
        psi = np.zeros(PHONON_LEVELS << num_qubits, dtype=np.complex128)
        psi[bits] = 1.0
        return cls(num_qubits, psi)

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    def copy(self) -> DenseState:
        return DenseState(self.num_qubits, self.amplitudes.copy())

    def apply_pulse(self, op: PulseOp) -> None:
        _check_qubit(op, self.num_qubits)
        _kernels.apply_pulse(
            self.amplitudes, self.num_qubits, KIND_CODES[op.kind], op.qubit, op.theta, op.phi
        )

    def apply_decay(self, dec: float, aux_levels: bool = True) -> None:
        if dec < 0:
            raise ValueError("dec must be >= 0")
        if dec == 0:
            return
        _kernels.apply_decay(
            self.amplitudes, self.num_qubits, math.exp(-dec / 2), 3 if aux_levels else 1
        )

    def norm_sq(self) -> float:
        return float(_kernels.norm_sq(self.amplitudes))

    def scale(self, factor: float) -> None:
        self.amplitudes *= factor

    def reset_phonon(self, aux_levels: bool = True) -> None:
        """Move the excited-bus component onto level 0, dropping the rest."""
        dim = 1 << self.num_qubits
        top = 4 if aux_levels else 2
        ground = self.amplitudes[dim : top * dim].reshape(top - 1, dim).sum(axis=0)
        self.amplitudes[:] = 0
        self.amplitudes[:dim] = ground

    def to_dense(self) -> DenseState:
        return self

    def to_sparse(self) -> SparseState:
        idx = np.flatnonzero(np.abs(self.amplitudes) >= PRUNE_THRESHOLD)
        return SparseState(self.num_qubits, idx.astype(np.int64), self.amplitudes[idx].copy())

    def entries(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.flatnonzero(self.amplitudes)
        return idx, self.amplitudes[idx]


class SparseState:
    """Non-zero amplitudes with explicit ``index = p * 2**M + b`` keys, sorted."""

    representation = "sparse"

    def __init__(self, num_qubits: int, indices: np.ndarray, values: np.ndarray):
        self.num_qubits = num_qubits
        self.indices = indices
        self.values = values

    @classmethod
    def basis(cls, num_qubits: int, bits: int = 0):
        _check_bits(num_qubits, bits)
        return cls(
            num_qubits,
            np.array([bits], dtype=np.int64),
            np.array([1.0 + 0.0j], dtype=np.complex128),
        )

    @property
    def dim(self) -> int:
        return PHONON_LEVELS << self.num_qubits

    @property
    def nnz(self) -> int:
        return self.indices.shape[0]

    def copy(self) -> SparseState:
        return SparseState(self.num_qubits, self.indices.copy(), self.values.copy())

    def apply_pulse(self, op: PulseOp) -> None:
        _check_qubit(op, self.num_qubits)
        m = self.num_qubits
        dim = 1 << m
        bit = 1 << op.qubit
        idx = self.indices
        vals = self.values
        plane = idx >> m
        qval = (idx >> op.qubit) & 1
        base = (idx & (dim - 1)) & ~bit

        code = KIND_CODES[op.kind]
        if code == 0:
            first = qval == 0
            second = ~first
            key = (plane << m) | base
            member = np.ones(idx.shape[0], dtype=bool)
        else:
            pa, qa, pb, qb = _SIDEBAND[code]
            first = (plane == pa) & (qval == qa)
            second = (plane == pb) & (qval == qb)
            member = first | second
            key = base

        keys, inverse = np.unique(key[member], return_inverse=True)
        a0 = np.zeros(keys.shape[0], dtype=np.complex128)
        a1 = np.zeros(keys.shape[0], dtype=np.complex128)
        is_first = first[member]
        mvals = vals[member]
        a0[inverse[is_first]] = mvals[is_first]
        a1[inverse[~is_first]] = mvals[~is_first]

        r = rotation_block(op.theta, op.phi)
        n0 = r[0, 0] * a0 + r[0, 1] * a1
        n1 = r[1, 0] * a0 + r[1, 1] * a1

        if code == 0:
            i0 = keys
            i1 = keys | bit
        else:
            i0 = (pa << m) | keys | (qa * bit)
            i1 = (pb << m) | keys | (qb * bit)

        new_idx = np.concatenate([idx[~member], i0, i1])
        new_vals = np.concatenate([vals[~member], n0, n1])
        keep = np.abs(new_vals) >= PRUNE_THRESHOLD
        new_idx = new_idx[keep]
        new_vals = new_vals[keep]
        order = np.argsort(new_idx, kind="stable")
        self.indices = new_idx[order]
        self.values = new_vals[order]

    def apply_decay(self, dec: float, aux_levels: bool = True) -> None:
        if dec < 0:
            raise ValueError("dec must be >= 0")
        if dec == 0:
            return
        plane = self.indices >> self.num_qubits
        excited = (plane >= 1) if aux_levels else (plane == 1)
        self.values[excited] *= math.exp(-dec / 2)

    def norm_sq(self) -> float:
        v = self.values
        return float(np.sum(v.real * v.real + v.imag * v.imag))

    def scale(self, factor: float) -> None:
        self.values *= factor

    def reset_phonon(self, aux_levels: bool = True) -> None:
        m = self.num_qubits
        plane = self.indices >> m
        excited = (plane >= 1) if aux_levels else (plane == 1)
        bits = self.indices[excited] & ((1 << m) - 1)
        keys, inverse = np.unique(bits, return_inverse=True)
        vals = np.zeros(keys.shape[0], dtype=np.complex128)
        np.add.at(vals, inverse, self.values[excited])
        keep = np.abs(vals) >= PRUNE_THRESHOLD
        self.indices = keys[keep].astype(np.int64)
        self.values = vals[keep]

    def to_dense(self, memory_cap: int | None = DEFAULT_MEMORY_CAP) -> DenseState:
        out = DenseState.basis(self.num_qubits, 0, memory_cap)
        out.amplitudes[0] = 0
        out.amplitudes[self.indices] = self.values
        return out

    def to_sparse(self) -> SparseState:
        return self

    def entries(self) -> tuple[np.ndarray, np.ndarray]:
        return self.indices, self.values


QuantumState = DenseState | SparseState


def _check_qubit(op: PulseOp, num_qubits: int) -> None:
    if not 0 <= op.qubit < num_qubits:
        raise ValueError(f"pulse on qubit {op.qubit} but state has {num_qubits} qubits")


def new_state(
    num_qubits: int,
    initial_bits: int = 0,
    representation: str = "dense",
    memory_cap: int | None = DEFAULT_MEMORY_CAP,
) -> QuantumState:
    if representation == "dense":
        return DenseState.basis(num_qubits, initial_bits, memory_cap)
    if representation == "sparse":
        return SparseState.basis(num_qubits, initial_bits)
    raise ValueError(f"unknown representation {representation!r}")


def apply_pulse(state: QuantumState, op: PulseOp) -> QuantumState:
    state.apply_pulse(op)
    return state


def apply_decay(state: QuantumState, dec: float, aux_levels: bool = True) -> QuantumState:
    state.apply_decay(dec, aux_levels)
    return state


def norm_sq(state: QuantumState) -> float:
    return state.norm_sq()


def inner_product(a: QuantumState, b: QuantumState) -> complex:
    """``sum(conj(a_i) * b_i)`` over the full index space."""
    if a.num_qubits != b.num_qubits:
        raise ValueError(f"dimension mismatch: {a.num_qubits} vs {b.num_qubits} qubits")
    if isinstance(a, DenseState) and isinstance(b, DenseState):
        return complex(np.vdot(a.amplitudes, b.amplitudes))
    if isinstance(a, SparseState) and isinstance(b, DenseState):
        return complex(np.dot(np.conj(a.values), b.amplitudes[a.indices]))
    if isinstance(a, DenseState) and isinstance(b, SparseState):
        return complex(np.dot(np.conj(a.amplitudes[b.indices]), b.values))
    _, ia, ib = np.intersect1d(a.indices, b.indices, assume_unique=True, return_indices=True)
    return complex(np.dot(np.conj(a.values[ia]), b.values[ib]))


def measure_distribution(state: QuantumState, qubits: Sequence[int]) -> dict[int, float]:
    """Marginal probabilities of ``qubits``; bit ``j`` of a key is ``qubits[j]``.

    Sums over every other qubit and every phonon level, so the total equals
    :func:`norm_sq`. Patterns with exactly zero probability are omitted.
    """
    qubits = list(qubits)
    if not qubits:
        raise ValueError("qubit subset must be non-empty")
    idx, vals = state.entries()
    bits = idx & ((1 << state.num_qubits) - 1)
    pattern = np.zeros(idx.shape[0], dtype=np.int64)
    for j, q in enumerate(qubits):
        pattern |= ((bits >> q) & 1) << j
    probs = np.bincount(pattern, weights=np.abs(vals) ** 2, minlength=1 << len(qubits))
    return {int(k): float(p) for k, p in enumerate(probs) if p > 0}


def probability_of(state: QuantumState, qubits: Sequence[int], patterns: Iterable[int]) -> float:
    dist = measure_distribution(state, qubits)
    return float(sum(dist.get(int(p), 0.0) for p in patterns))
