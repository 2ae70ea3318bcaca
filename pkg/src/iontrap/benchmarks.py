"""Benchmark circuits: circuit-SAT Grover search, modular multiplication and
Shor factoring, plus their zero-error reference traces.

Register layout for the modular arithmetic (``L = N.bit_length()``)::

    controls | y (L) | z (L+1) | carries (L) | t | flag

``y`` holds the multiplicand, ``z`` is a scratch accumulator whose top bit
doubles as the sign bit of the modular adder, ``t`` is the AND of the
multiplication control and one bit of ``y``, and ``flag`` records the
"subtract N overflowed" condition inside each modular addition.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from . import _kernels
from .circuits import (
    CCNOT,
    CNOT,
    CPHASE,
    NOT,
    Circuit,
    Gate,
    PulseSchedule,
    compile,
    hadamard_equiv,
    hadamard_equiv_dagger,
    inverse,
)
from .engine import DEFAULT_MEMORY_CAP, PRUNE_THRESHOLD, QuantumState, SparseState, new_state


class AncillaError(ValueError):
    """Not enough clean ancillas for a multi-controlled gate."""


# ---------------------------------------------------------------------------
# classical evaluation (oracle for reversible sub-circuits)


def evaluate_classical(gates: Sequence[Gate], bits: int) -> int:
    for g in gates:
        q = g.qubits
        if g.name == "NOT":
            bits ^= 1 << q[0]
        elif g.name == "CNOT":
            if (bits >> q[0]) & 1:
                bits ^= 1 << q[1]
        elif g.name == "CCNOT":
            if (bits >> q[0]) & 1 and (bits >> q[1]) & 1:
                bits ^= 1 << q[2]
        else:
            raise ValueError(f"{g.name} is not a classical reversible gate")
    return bits


def pack(values: dict[tuple[int, ...], int]) -> int:
    """Build a bit-string from ``{register: value}`` (register = qubit tuple, LSB first)."""
    bits = 0
    for reg, val in values.items():
        for i, q in enumerate(reg):
            bits |= ((val >> i) & 1) << q
    return bits


def unpack(bits: int, reg: Sequence[int]) -> int:
    return sum(((bits >> q) & 1) << i for i, q in enumerate(reg))


# ---------------------------------------------------------------------------
# multi-controlled NOT


def and_into(controls: Sequence[int], target: int, ancillas: Sequence[int]) -> list[Gate]:
    """``target ^= AND(controls)`` using clean ``ancillas`` (returned clean)."""
    controls = list(controls)
    n = len(controls)
    if n == 0:
        return [NOT(target)]
    if n == 1:
        return [CNOT(controls[0], target)]
    if n == 2:
        return [CCNOT(controls[0], controls[1], target)]
    if len(ancillas) >= n - 2:
        chain = list(ancillas[: n - 2])
        compute = [CCNOT(controls[0], controls[1], chain[0])]
        for i in range(1, n - 2):
            compute.append(CCNOT(chain[i - 1], controls[i + 1], chain[i]))
        return compute + [CCNOT(chain[-1], controls[-1], target)] + compute[::-1]
    if not ancillas:
        raise AncillaError(f"{n}-controlled NOT needs ancillas, none available")
    # split: fold a prefix of the controls into one ancilla, recurse on the rest.
    # An even split is cheapest; otherwise take the longest prefix one chain can hold.
    x, rest = ancillas[0], list(ancillas[1:])
    for k in dict.fromkeys((n // 2, min(n - 1, len(rest) + 2))):
        try:
            left = and_into(controls[:k], x, rest)
            return left + and_into(controls[k:] + [x], target, rest) + left
        except AncillaError:
            continue
    raise AncillaError(f"{n}-controlled NOT does not fit in {len(ancillas)} ancillas")


# ---------------------------------------------------------------------------
# ripple-carry constant adders


def add_constant(
    z: Sequence[int], carries: Sequence[int], a: int, ctrl: int | None = None
) -> list[Gate]:
    """``z += ctrl * a  (mod 2**len(z))`` with clean carry qubits.

    ``z`` has ``L + 1`` qubits and ``carries`` ``L`` qubits; ``carries[i]``
    holds the carry into bit ``i + 1``. ``ctrl=None`` adds unconditionally.
    """
    L = len(carries)
    if len(z) != L + 1:
        raise ValueError("z must have one more qubit than carries")
    if not 0 <= a < (1 << L):
        raise ValueError(f"constant {a} does not fit in {L} bits")

    def carry_step(i: int) -> list[Gate]:
        out = carries[i]
        has_in = i > 0
        cin = carries[i - 1] if has_in else None
        if not (a >> i) & 1:
            return [CCNOT(z[i], cin, out)] if has_in else []
        if ctrl is None:
            if not has_in:
                return [CNOT(z[i], out)]
            return [CNOT(z[i], out), CNOT(cin, out), CCNOT(z[i], cin, out)]
        if not has_in:
            return [CCNOT(z[i], ctrl, out)]
        return [CCNOT(z[i], ctrl, out), CCNOT(z[i], cin, out), CCNOT(ctrl, cin, out)]

    def sum_step(i: int) -> list[Gate]:
        out = []
        if i > 0:
            out.append(CNOT(carries[i - 1], z[i]))
        if (a >> i) & 1:
            out.append(NOT(z[i]) if ctrl is None else CNOT(ctrl, z[i]))
        return out

    gates: list[Gate] = []
    for i in range(L):
        gates += carry_step(i)
    gates.append(CNOT(carries[L - 1], z[L]))
    for i in reversed(range(L)):
        gates += carry_step(i)
        gates += sum_step(i)
    return gates


def subtract_constant(z, carries, a, ctrl=None) -> list[Gate]:
    return inverse(add_constant(z, carries, a, ctrl))


def modular_add_constant(
    z: Sequence[int], carries: Sequence[int], flag: int, a: int, modulus: int, ctrl: int
) -> list[Gate]:
    """``z <- (z + ctrl * a) mod modulus`` for ``0 <= z < modulus``; ``flag`` returns clean."""
    sign = z[-1]
    gates = add_constant(z, carries, a, ctrl)
    gates += subtract_constant(z, carries, modulus)
    gates.append(CNOT(sign, flag))
    gates += add_constant(z, carries, modulus, flag)
    gates += subtract_constant(z, carries, a, ctrl)
    gates += [NOT(sign), CNOT(sign, flag), NOT(sign)]
    gates += add_constant(z, carries, a, ctrl)
    return gates


@dataclass(frozen=True)
class MultiplierLayout:
    y: tuple[int, ...]
    z: tuple[int, ...]
    carries: tuple[int, ...]
    t: int
    flag: int

    @classmethod
    def after(cls, offset: int, width: int) -> MultiplierLayout:
        y = tuple(range(offset, offset + width))
        z = tuple(range(y[-1] + 1, y[-1] + 2 + width))
        carries = tuple(range(z[-1] + 1, z[-1] + 1 + width))
        return cls(y, z, carries, carries[-1] + 1, carries[-1] + 2)

    @property
    def num_qubits(self) -> int:
        return self.flag + 1


def modular_double(lay: MultiplierLayout, modulus: int) -> list[Gate]:
    """``z <- 2 z mod modulus`` (odd modulus, ``0 <= z < modulus``); ``flag`` returns clean."""
    z = lay.z
    gates: list[Gate] = []
    for i in reversed(range(1, len(z))):
        gates += [CNOT(z[i], z[i - 1]), CNOT(z[i - 1], z[i]), CNOT(z[i], z[i - 1])]
    gates += subtract_constant(z, lay.carries, modulus)
    gates.append(CNOT(z[-1], lay.flag))
    gates += add_constant(z, lay.carries, modulus, lay.flag)
    # the result is even exactly when N was added back
    gates += [NOT(z[0]), CNOT(z[0], lay.flag), NOT(z[0])]
    return gates


def controlled_multiply_accumulate(ctrl: int, lay: MultiplierLayout, factor: int, modulus: int) -> list[Gate]:
    """``z <- z + ctrl * factor * y  (mod modulus)`` for ``z = 0`` on entry.

    Add-and-shift (Horner) order: from the top bit of ``y`` down, double the
    accumulator modulo N and add ``factor`` when ``ctrl`` and ``y_j`` are set.
    """
    factor %= modulus
    gates: list[Gate] = []
    for j in reversed(range(len(lay.y))):
        yj = lay.y[j]
        if j < len(lay.y) - 1:
            gates += modular_double(lay, modulus)
        gates.append(CCNOT(ctrl, yj, lay.t))
        gates += modular_add_constant(lay.z, lay.carries, lay.flag, factor, modulus, lay.t)
        gates.append(CCNOT(ctrl, yj, lay.t))
    return gates


def controlled_modmult(ctrl: int, lay: MultiplierLayout, factor: int, modulus: int) -> list[Gate]:
    """In place ``y <- factor * y mod modulus`` when ``ctrl`` is 1 (``z`` clean before and after)."""
    inv = pow(factor, -1, modulus)
    gates = controlled_multiply_accumulate(ctrl, lay, factor, modulus)
    for yj, zj in zip(lay.y, lay.z):
        gates += [CNOT(zj, yj), CCNOT(ctrl, yj, zj), CNOT(zj, yj)]
    gates += inverse(controlled_multiply_accumulate(ctrl, lay, inv, modulus))
    return gates


# ---------------------------------------------------------------------------
# factoring


@dataclass(frozen=True)
class FactorSpec:
    """``N`` to factor, base ``X`` and the width of the exponent register.

    ``strategy='unrolled'`` applies the multiplication by ``X**(2**i)`` as
    ``2**i`` successive multiplications by ``X``; ``'squared'`` multiplies
    once by the classically precomputed constant.
    """

    N: int
    X: int
    a_bits: int
    strategy: str = "squared"

    def __post_init__(self):
        if self.N < 3 or self.N % 2 == 0 or _is_prime(self.N):
            raise ValueError(f"N={self.N} must be an odd composite")
        if math.gcd(self.X, self.N) != 1 or not 1 < self.X < self.N:
            raise ValueError(f"X={self.X} must be coprime to N={self.N}")
        if self.a_bits < 2:
            raise ValueError("a_bits must be >= 2")
        if self.strategy not in ("unrolled", "squared"):
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def L(self) -> int:
        return self.N.bit_length()


def _is_prime(n: int) -> bool:
    return n >= 2 and all(n % d for d in range(2, math.isqrt(n) + 1))


def build_modmult(spec: FactorSpec) -> Circuit:
    """One controlled in-place modular multiplication by ``X`` (the ``mult`` benchmark).

    The control starts in an equal superposition and ``y = 1``, i.e. the
    first multiplication step of the factoring circuit.
    """
    lay = MultiplierLayout.after(1, spec.L)
    gates = hadamard_equiv(0) + controlled_modmult(0, lay, spec.X, spec.N)
    return Circuit(
        lay.num_qubits,
        gates,
        initial_bits=pack({lay.y: 1}),
        name="mult",
        metadata={"layout": lay, "control": 0, "spec": spec},
    )


def build_qft(qubits: Sequence[int]) -> list[Gate]:
    """Quantum Fourier transform on ``qubits`` (LSB first), without the final swaps.

    Uses :func:`hadamard_equiv_dagger` (Z.H) as the Hadamard, so the output
    carries an extra Z on every qubit; measurement statistics are those of
    the textbook transform. The output register is bit-reversed:
    use :func:`qft_readout` to relabel.
    """
    qubits = list(qubits)
    if not qubits:
        raise ValueError("QFT needs at least one qubit")
    gates: list[Gate] = []
    for j in reversed(range(len(qubits))):
        gates += hadamard_equiv_dagger(qubits[j])
        for k in reversed(range(j)):
            gates.append(CPHASE(qubits[k], qubits[j], math.pi / 2 ** (j - k)))
    return gates


def qft_readout(distribution: dict[int, float], bits: int) -> dict[int, float]:
    """Undo the QFT's bit reversal on a measured distribution."""
    out: dict[int, float] = {}
    for k, p in distribution.items():
        rev = int(format(k, f"0{bits}b")[::-1], 2)
        out[rev] = out.get(rev, 0.0) + p
    return out


def build_factor(spec: FactorSpec) -> Circuit:
    a_reg = tuple(range(spec.a_bits))
    lay = MultiplierLayout.after(spec.a_bits, spec.L)
    gates: list[Gate] = []
    for q in a_reg:
        gates += hadamard_equiv(q)
    for i, q in enumerate(a_reg):
        if spec.strategy == "unrolled":
            for _ in range(2**i):
                gates += controlled_modmult(q, lay, spec.X, spec.N)
        else:
            gates += controlled_modmult(q, lay, pow(spec.X, 2**i, spec.N), spec.N)
    pre_qft = len(gates)
    gates += build_qft(a_reg)
    return Circuit(
        lay.num_qubits,
        gates,
        initial_bits=pack({lay.y: 1}),
        name=f"factor{spec.N}",
        marks={"pre_qft": pre_qft},
        fidelity_mark="pre_qft",
        metadata={"layout": lay, "a_register": a_reg, "spec": spec},
    )


# ---------------------------------------------------------------------------
# Grover


@dataclass
class GroverInstance:
    """Circuit-SAT search over ``key_bits`` keys.

    ``sat_circuit`` flips ``result`` exactly for satisfying keys and leaves
    every ancilla clean. Qubits: keys ``0..n-1``, then ``ancillas``, then
    ``result``.
    """

    key_bits: int
    sat_circuit: list[Gate]
    num_solutions: int
    iterations: int
    ancillas: tuple[int, ...]
    result: int
    solutions: tuple[int, ...] = field(default=())

    @property
    def num_qubits(self) -> int:
        return self.result + 1

    @property
    def keys(self) -> tuple[int, ...]:
        return tuple(range(self.key_bits))

    def satisfying_keys(self) -> list[int]:
        """Brute-force evaluation of ``sat_circuit`` over every key."""
        found = []
        for key in range(1 << self.key_bits):
            out = evaluate_classical(self.sat_circuit, key)
            if (out >> self.result) & 1:
                found.append(key)
            if out & ~(1 << self.result) != key:
                raise ValueError("sat_circuit does not restore keys/ancillas")
        return found

    def check(self) -> None:
        found = self.satisfying_keys()
        if len(found) != self.num_solutions:
            raise ValueError(f"sat circuit has {len(found)} solutions, expected {self.num_solutions}")
        self.solutions = tuple(found)


def default_grover_instance(iterations: int = 8) -> GroverInstance:
    """8 key bits, 4 ancillas, 1 result qubit: 13 qubits.

    The SAT circuit first folds neighbouring keys together with a CNOT chain
    (key ``i+1`` becomes ``x_i XOR x_(i+1)`` for ``i = 2..5``), then ANDs
    keys 0..6 into the result and unfolds the chain. A key satisfies it when
    ``x0 = x1 = x2 = 1`` and ``x2..x6`` alternate; key 7 is free, so exactly
    two keys match and the success peak falls on iteration 8.
    """
    n = 8
    ancillas = (8, 9, 10, 11)
    result = 12
    fold = [CNOT(i, i + 1) for i in range(5, 1, -1)]
    sat = fold + and_into(range(7), result, ancillas) + fold[::-1]
    inst = GroverInstance(n, sat, 2, iterations, ancillas, result)
    inst.check()
    return inst


def random_grover_instance(key_bits: int, num_solutions: int, iterations: int, seed: int) -> GroverInstance:
    """Marked keys chosen at random; oracle is one pattern-matching AND per key."""
    rng = random.Random(seed)
    marked = sorted(rng.sample(range(1 << key_bits), num_solutions))
    ancillas = tuple(range(key_bits, key_bits + max(key_bits - 2, 0)))
    result = key_bits + len(ancillas)
    sat: list[Gate] = []
    for key in marked:
        flips = [NOT(q) for q in range(key_bits) if not (key >> q) & 1]
        sat += flips + and_into(range(key_bits), result, ancillas) + flips
    inst = GroverInstance(key_bits, sat, num_solutions, iterations, ancillas, result)
    inst.check()
    return inst


def diffusion(inst: GroverInstance) -> list[Gate]:
    """Inversion about the mean, up to a global sign.

    ``hadamard_equiv`` maps the uniform superposition of each key qubit to
    |1>, so the reflection is a phase kick on |1...1> (via ``result`` held
    in |->) between a layer of those rotations and their inverses.
    """
    keys = inst.keys
    gates: list[Gate] = []
    for q in keys:
        gates += hadamard_equiv(q)
    gates += and_into(keys, inst.result, inst.ancillas)
    for q in keys:
        gates += hadamard_equiv_dagger(q)
    return gates


def build_grover(inst: GroverInstance) -> Circuit:
    gates: list[Gate] = []
    for q in inst.keys:
        gates += hadamard_equiv(q)
    gates += hadamard_equiv_dagger(inst.result)  # |0> -> |->
    marks = {"iteration_0": len(gates)}
    for j in range(1, inst.iterations + 1):
        gates += inst.sat_circuit
        gates += diffusion(inst)
        marks[f"iteration_{j}"] = len(gates)
    return Circuit(
        inst.num_qubits,
        gates,
        name="grover",
        marks=marks,
        metadata={"instance": inst, "success_qubits": inst.keys, "success_patterns": inst.solutions},
    )


def grover_success_closed_form(key_bits: int, num_solutions: int, j: int) -> float:
    theta0 = math.asin(math.sqrt(num_solutions / 2**key_bits))
    return math.sin((2 * j + 1) * theta0) ** 2


# ---------------------------------------------------------------------------
# registry

FACTOR_DEFAULTS = {
    15: FactorSpec(15, 7, 3, "unrolled"),
    21: FactorSpec(21, 2, 6),
    35: FactorSpec(35, 2, 6),
    57: FactorSpec(57, 2, 6),
}
#: round(pi / (4 theta0) - 1/2) for 2 solutions among 2**8 keys
GROVER_OPTIMAL_ITERATIONS = 8
BENCHMARK_NAMES = ("grover", "mult", "factor15", "factor21", "factor35", "factor57")
#: reported figures for comparison: (qubits, laser pulses)
PUBLISHED_COUNTS = {
    "grover": (13, 1838),
    "mult": (16, 8854),
    "factor15": (18, 70793),
    "factor21": (24, 69884),
    "factor35": (27, 99387),
    "factor57": (27, 97939),
}


def get_benchmark(name: str, **options) -> Circuit:
    if name == "grover":
        iterations = options.get("iterations") or GROVER_OPTIMAL_ITERATIONS
        return build_grover(default_grover_instance(iterations))
    if name == "mult":
        return build_modmult(FACTOR_DEFAULTS[15])
    if name.startswith("factor") and name[6:].isdigit() and int(name[6:]) in FACTOR_DEFAULTS:
        return build_factor(FACTOR_DEFAULTS[int(name[6:])])
    raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARK_NAMES)}")


# ---------------------------------------------------------------------------
# reference traces


def sample_points(circuit: Circuit, stride: int, upto: int | None = None) -> list[int]:
    """Gate counts at which fidelity is sampled: 0, every ``stride`` gates, marks, end."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    end = circuit.num_gates if upto is None else upto
    points = set(range(0, end + 1, stride)) | {0, end}
    points |= {g for g in circuit.marks.values() if g <= end}
    return sorted(points)


@dataclass
class ReferenceTrace:
    """Zero-error states keyed by the number of gates completed."""

    stride: int
    snapshots: dict[int, QuantumState]

    @property
    def gate_indices(self) -> list[int]:
        return sorted(self.snapshots)


def reference_trace(
    circuit: Circuit,
    stride: int = 10,
    schedule: PulseSchedule | None = None,
    representation: str = "sparse",
    memory_cap: int | None = DEFAULT_MEMORY_CAP,
) -> ReferenceTrace:
    """Run the circuit with no error and keep snapshots at the sample points.

    Sparse snapshots are the default: the ideal state of every benchmark
    holds only the superposition's terms.
    """
    schedule = schedule or compile(circuit)
    state = new_state(circuit.num_qubits, circuit.initial_bits, representation, memory_cap)
    snaps: dict[int, QuantumState] = {}
    m, kinds, qubits = circuit.num_qubits, schedule.kinds, schedule.qubits
    done = 0
    for g in sample_points(circuit, stride):
        start, stop = schedule.pulses_before(done), schedule.pulses_before(g)
        if isinstance(state, SparseState):
            state.indices, state.values = _kernels.run_pulses_sparse(
                state.indices, state.values, m, kinds, qubits, schedule.thetas, schedule.phis,
                start, stop, 1.0, 3, PRUNE_THRESHOLD,
            )
        else:
            _kernels.run_pulses(state.amplitudes, m, kinds, qubits, schedule.thetas, schedule.phis, start, stop, 1.0, 3)
        done = g
        snaps[g] = state.copy()
    return ReferenceTrace(stride, snaps)


def sparse_ideal_final(circuit: Circuit, schedule: PulseSchedule | None = None) -> SparseState:
    trace = reference_trace(circuit, stride=max(circuit.num_gates, 1), schedule=schedule)
    return trace.snapshots[circuit.num_gates]


def pulse_counts(circuit: Circuit) -> dict[str, int | float]:
    sched = compile(circuit)
    return {
        "qubits": circuit.num_qubits,
        "gates": sched.num_gates,
        "pulses": sched.num_pulses,
        "pulses_per_gate": sched.num_pulses / max(sched.num_gates, 1),
        "dense_bytes": 4 * (1 << circuit.num_qubits) * 16,
    }
