"""Gate-level circuits and their lowering to laser pulses.

Each gate variant is expanded through a pulse table: an ordered list of
``(kind, role, theta, phi)`` rows where ``role`` names one of the gate's
qubits and the angles may refer to the gate's own parameters (``theta``,
``phi`` for ROT, ``alpha`` for CPHASE). Tables are plain text so that
alternative decompositions can be loaded and checked with
:func:`validate_tables`.
"""

from __future__ import annotations

import ast
import math
import operator
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .engine import KIND_CODES, PHONON_LEVELS, PULSE_KINDS, PulseOp, rotation_block

ROLES = {
    "NOT": ("target",),
    "CNOT": ("control", "target"),
    "CCNOT": ("c1", "c2", "target"),
    "ROT": ("target",),
    "CPHASE": ("control", "target"),
}
PARAMS = {"NOT": (), "CNOT": (), "CCNOT": (), "ROT": ("theta", "phi"), "CPHASE": ("alpha",)}
EXPECTED_PULSES = {"NOT": 3, "CNOT": 5, "CCNOT": 7, "ROT": 1, "CPHASE": 4}


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple[int, ...]
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.name not in ROLES:
            raise ValueError(f"unknown gate {self.name!r}")
        if len(self.qubits) != len(ROLES[self.name]):
            raise ValueError(f"{self.name} takes {len(ROLES[self.name])} qubits")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"{self.name} qubits must be distinct: {self.qubits}")
        if any(q < 0 for q in self.qubits):
            raise ValueError("qubit indices must be non-negative")
        if len(self.params) != len(PARAMS[self.name]):
            raise ValueError(f"{self.name} takes parameters {PARAMS[self.name]}")

    def inverse(self) -> Gate:
        if self.name == "ROT":
            return Gate("ROT", self.qubits, (-self.params[0], self.params[1]))
        if self.name == "CPHASE":
            return Gate("CPHASE", self.qubits, (-self.params[0],))
        return self


def NOT(q: int) -> Gate:
    return Gate("NOT", (q,))


def CNOT(control: int, target: int) -> Gate:
    return Gate("CNOT", (control, target))


def CCNOT(c1: int, c2: int, target: int) -> Gate:
    return Gate("CCNOT", (c1, c2, target))


def ROT(q: int, theta: float, phi: float) -> Gate:
    return Gate("ROT", (q,), (float(theta), float(phi)))


def CPHASE(control: int, target: int, alpha: float) -> Gate:
    return Gate("CPHASE", (control, target), (float(alpha),))


def hadamard_equiv(q: int) -> list[Gate]:
    """Single carrier pulse taking |0> to (|0> + |1>)/sqrt(2)."""
    return [ROT(q, math.pi / 2, math.pi / 2)]


def hadamard_equiv_dagger(q: int) -> list[Gate]:
    """Inverse of :func:`hadamard_equiv`; equals Z.H exactly."""
    return [ROT(q, math.pi / 2, -math.pi / 2)]


def inverse(gates: Sequence[Gate]) -> list[Gate]:
    return [g.inverse() for g in reversed(gates)]


@dataclass
class Circuit:
    """A gate list on ``num_qubits`` qubits starting from ``initial_bits``.

    ``marks`` names gate boundaries (number of gates completed) that must be
    sampled, e.g. ``pre_qft`` or grover iteration ends. ``fidelity_mark``
    names the boundary treated as the end of the run for fidelity purposes.
    """

    num_qubits: int
    gates: list[Gate]
    initial_bits: int = 0
    name: str = "custom"
    marks: dict[str, int] = field(default_factory=dict)
    fidelity_mark: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for g in self.gates:
            if max(g.qubits) >= self.num_qubits:
                raise ValueError(f"gate {g} out of range for {self.num_qubits} qubits")

    @property
    def num_gates(self) -> int:
        return len(self.gates)

    @property
    def fidelity_gate(self) -> int:
        if self.fidelity_mark is None:
            return self.num_gates
        return self.marks[self.fidelity_mark]


# ---------------------------------------------------------------------------
# angle expressions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval_node(node, names):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return math.pi
        if node.id in names:
            return names[node.id]
        raise ValueError(f"unknown name {node.id!r} in angle expression")
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_node(node.left, names), _eval_node(node.right, names))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
        return _UNARY[type(node.op)](_eval_node(node.operand, names))
    raise ValueError(f"unsupported angle expression: {ast.dump(node)}")


def eval_angle(text: str, names: dict[str, float] | None = None) -> float:
    """Evaluate an angle literal such as ``pi/128``, ``-pi/2``, ``0.25`` or ``alpha-pi``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"bad angle expression {text!r}") from exc
    value = _eval_node(tree, names or {})
    if not math.isfinite(value):
        raise ValueError(f"angle {text!r} is not finite")
    return value


# ---------------------------------------------------------------------------
# pulse tables


@dataclass(frozen=True)
class PulseEntry:
    kind: str
    role: str
    theta: str
    phi: str


class TableError(ValueError):
    pass


class TableValidationError(TableError):
    def __init__(self, failures: dict[str, str], report: dict):
        self.failures = failures
        self.report = report
        names = ", ".join(f"{k} ({v})" for k, v in failures.items())
        super().__init__(f"pulse table validation failed: {names}")


DEFAULT_TABLE_TEXT = """\
# variant  kind role     theta   phi
NOT        V    target   pi/2    0
NOT        V    target   pi/4    0
NOT        V    target   pi/4    0

CNOT       V    target   pi/2    -pi/2
CNOT       U    control  pi      0
CNOT       A    target   2*pi    0
CNOT       U    control  pi      0
CNOT       V    target   pi/2    pi/2

CCNOT      V    target   pi/2    -pi/2
CCNOT      U    c1       pi      0
CCNOT      P    c2       pi      0
CCNOT      A    target   2*pi    0
CCNOT      P    c2       pi      0
CCNOT      U    c1       pi      0
CCNOT      V    target   pi/2    pi/2

ROT        V    target   theta   phi

CPHASE     U    control  pi      0
CPHASE     A    target   pi      0
CPHASE     A    target   pi      alpha-pi
CPHASE     U    control  pi      alpha+pi
"""


class PulseTable:
    """Per-variant pulse expansions."""

    def __init__(self, entries: dict[str, tuple[PulseEntry, ...]]):
        missing = set(ROLES) - set(entries)
        if missing:
            raise TableError(f"pulse table missing variants: {sorted(missing)}")
        for variant, rows in entries.items():
            if variant not in ROLES:
                raise TableError(f"unknown variant {variant!r}")
            for row in rows:
                if row.kind not in KIND_CODES:
                    raise TableError(f"{variant}: unknown pulse kind {row.kind!r}")
                if row.role not in ROLES[variant]:
                    raise TableError(f"{variant}: unknown role {row.role!r}")
                names = {p: 0.0 for p in PARAMS[variant]}
                eval_angle(row.theta, names)
                eval_angle(row.phi, names)
        self.entries = {k: tuple(v) for k, v in entries.items()}
        self.validated = False

    @classmethod
    def parse(cls, text: str) -> PulseTable:
        entries: dict[str, list[PulseEntry]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise TableError(f"line {lineno}: expected 'variant kind role theta phi'")
            variant, kind, role, theta, phi = parts
            entries.setdefault(variant.upper(), []).append(PulseEntry(kind.upper(), role, theta, phi))
        return cls({k: tuple(v) for k, v in entries.items()})

    @classmethod
    def load(cls, path: str | Path) -> PulseTable:
        return cls.parse(Path(path).read_text())

    def dump(self) -> str:
        lines = []
        for variant, rows in self.entries.items():
            for r in rows:
                lines.append(f"{variant} {r.kind} {r.role} {r.theta} {r.phi}")
        return "\n".join(lines) + "\n"

    def pulse_count(self, variant: str) -> int:
        return len(self.entries[variant])

    def expand(self, gate: Gate, start_index: int = 0) -> list[PulseOp]:
        rows = _expand_cached(self, gate.name, gate.params)
        return [
            PulseOp(PULSE_KINDS[kind], gate.qubits[role], theta, phi, start_index + k)
            for k, (kind, role, theta, phi) in enumerate(rows)
        ]


@lru_cache(maxsize=4096)
def _expand_cached(table: PulseTable, variant: str, params: tuple[float, ...]):
    names = dict(zip(PARAMS[variant], params))
    roles = ROLES[variant]
    return tuple(
        (KIND_CODES[r.kind], roles.index(r.role), eval_angle(r.theta, names), eval_angle(r.phi, names))
        for r in table.entries[variant]
    )


_default_table: PulseTable | None = None


def default_tables() -> PulseTable:
    global _default_table
    if _default_table is None:
        table = PulseTable.parse(DEFAULT_TABLE_TEXT)
        validate_tables(table)
        _default_table = table
    return _default_table


# ---------------------------------------------------------------------------
# brute-force validation


def pulse_matrix(kind: str, qubit: int, theta: float, phi: float, num_qubits: int) -> np.ndarray:
    """Explicit matrix of one pulse over the ``4 * 2**M`` space."""
    dim_q = 1 << num_qubits
    dim = PHONON_LEVELS * dim_q
    r = rotation_block(theta, phi)
    mat = np.eye(dim, dtype=np.complex128)
    bit = 1 << qubit
    if kind == "V":
        pairs = [((p, 0), (p, 1)) for p in range(PHONON_LEVELS)]
    elif kind == "U":
        pairs = [((1, 0), (0, 1))]
    elif kind == "A":
        pairs = [((1, 0), (2, 0))]
    elif kind == "P":
        pairs = [((1, 0), (3, 0))]
    else:
        raise ValueError(kind)
    for b in range(dim_q):
        if b & bit:
            continue
        for (pa, qa), (pb, qb) in pairs:
            i0 = pa * dim_q + (b | (bit if qa else 0))
            i1 = pb * dim_q + (b | (bit if qb else 0))
            mat[i0, i0] = r[0, 0]
            mat[i0, i1] = r[0, 1]
            mat[i1, i0] = r[1, 0]
            mat[i1, i1] = r[1, 1]
    return mat


def _qubit_action(gate: Gate, b: int) -> list[tuple[int, complex]]:
    """Image of basis bit-string ``b`` under the textbook gate."""
    q = gate.qubits
    bit = lambda i: (b >> q[i]) & 1  # noqa: E731
    if gate.name == "NOT":
        return [(b ^ (1 << q[0]), 1.0)]
    if gate.name == "CNOT":
        return [(b ^ (1 << q[1]), 1.0)] if bit(0) else [(b, 1.0)]
    if gate.name == "CCNOT":
        return [(b ^ (1 << q[2]), 1.0)] if bit(0) and bit(1) else [(b, 1.0)]
    if gate.name == "CPHASE":
        return [(b, complex(np.exp(1j * gate.params[0])) if bit(0) and bit(1) else 1.0)]
    r = rotation_block(*gate.params)
    v = bit(0)
    b0 = b & ~(1 << q[0])
    return [(b0, r[0, v]), (b0 | (1 << q[0]), r[1, v])]


def ideal_unitary(gate: Gate, num_qubits: int) -> np.ndarray:
    """Textbook gate on every phonon plane, identity on the phonon levels."""
    if num_qubits > 3:
        raise ValueError("ideal_unitary is meant for M <= 3")
    dim_q = 1 << num_qubits
    mat = np.zeros((PHONON_LEVELS * dim_q, PHONON_LEVELS * dim_q), dtype=np.complex128)
    for p in range(PHONON_LEVELS):
        for b in range(dim_q):
            for out, amp in _qubit_action(gate, b):
                mat[p * dim_q + out, p * dim_q + b] += amp
    return mat


def composed_matrix(table: PulseTable, gate: Gate, num_qubits: int) -> np.ndarray:
    dim = PHONON_LEVELS << num_qubits
    total = np.eye(dim, dtype=np.complex128)
    for op in table.expand(gate):
        total = pulse_matrix(op.kind, op.qubit, op.theta, op.phi, num_qubits) @ total
    return total


_VALIDATION_CASES = {
    "NOT": [(NOT(0), 1), (NOT(1), 2)],
    "CNOT": [(CNOT(0, 1), 2), (CNOT(1, 0), 2), (CNOT(2, 0), 3)],
    "CCNOT": [(CCNOT(0, 1, 2), 3), (CCNOT(2, 0, 1), 3)],
    "ROT": [
        (ROT(0, math.pi / 2, math.pi / 2), 1),
        (ROT(0, 0.37, -1.3), 1),
        (ROT(1, math.pi, 0.0), 2),
    ],
    "CPHASE": [
        (CPHASE(0, 1, math.pi), 2),
        (CPHASE(0, 1, math.pi / 2), 2),
        (CPHASE(1, 0, math.pi / 8), 2),
        (CPHASE(0, 1, -0.7), 2),
    ],
}


def validate_tables(table: PulseTable, tol: float = 1e-10) -> dict[str, dict]:
    """Compare each variant's composed pulses to its ideal unitary.

    Only columns starting on phonon level 0 are compared: a gate must map
    the computational subspace onto itself, with no residue on levels >= 1,
    up to one global phase. Raises :class:`TableValidationError` on failure;
    on success marks the table validated and returns the report.
    """
    report: dict[str, dict] = {}
    failures: dict[str, str] = {}
    for variant, cases in _VALIDATION_CASES.items():
        worst = 0.0
        leak = 0.0
        phase = 1.0 + 0j
        for gate, m in cases:
            dim_q = 1 << m
            got = composed_matrix(table, gate, m)[:, :dim_q]
            want = ideal_unitary(gate, m)[:, :dim_q]
            leak = max(leak, float(np.max(np.abs(got[dim_q:]))))
            i, j = np.unravel_index(np.argmax(np.abs(want)), want.shape)
            ph = got[i, j] / want[i, j]
            ph = ph / abs(ph) if abs(ph) > 0 else 1.0
            dev = float(np.max(np.abs(got - ph * want)))
            if dev >= worst:
                worst, phase = dev, complex(ph)
        report[variant] = {
            "max_deviation": worst,
            "global_phase": phase,
            "phonon_residue": leak,
            "pulses": table.pulse_count(variant),
        }
        if worst > tol or leak > tol:
            failures[variant] = f"deviation {worst:.3g}"
    if failures:
        raise TableValidationError(failures, report)
    table.validated = True
    return report


# ---------------------------------------------------------------------------
# compilation


@dataclass
class PulseSchedule:
    """Flat pulse arrays with gate boundaries.

    ``gate_ends[g]`` is the exclusive end pulse index of gate ``g``, so the
    pulses of gate ``g`` are ``gate_ends[g-1]:gate_ends[g]``.
    """

    num_qubits: int
    kinds: np.ndarray
    qubits: np.ndarray
    thetas: np.ndarray
    phis: np.ndarray
    gate_ends: np.ndarray

    @property
    def num_pulses(self) -> int:
        return int(self.kinds.shape[0])

    @property
    def num_gates(self) -> int:
        return int(self.gate_ends.shape[0])

    @property
    def gate_boundaries(self) -> dict[int, int]:
        """gate index -> index of its last pulse"""
        return {g: int(e) - 1 for g, e in enumerate(self.gate_ends)}

    def pulses_before(self, gates_done: int) -> int:
        return 0 if gates_done == 0 else int(self.gate_ends[gates_done - 1])

    def op(self, k: int) -> PulseOp:
        return PulseOp(
            PULSE_KINDS[self.kinds[k]], int(self.qubits[k]), float(self.thetas[k]), float(self.phis[k]), k
        )

    def ops(self) -> Iterable[PulseOp]:
        for k in range(self.num_pulses):
            yield self.op(k)

    def kind_counts(self) -> dict[str, int]:
        counts = np.bincount(self.kinds, minlength=len(PULSE_KINDS))
        return {PULSE_KINDS[i]: int(c) for i, c in enumerate(counts)}


def compile_circuit(
    gates: Sequence[Gate], num_qubits: int, tables: PulseTable | None = None
) -> PulseSchedule:
    tables = tables or default_tables()
    if not tables.validated:
        raise TableError("pulse table has not been validated")
    kinds, qubits, thetas, phis, ends = [], [], [], [], []
    for gate in gates:
        if max(gate.qubits) >= num_qubits:
            raise ValueError(f"gate {gate} out of range for {num_qubits} qubits")
        for kind, role, theta, phi in _expand_cached(tables, gate.name, gate.params):
            kinds.append(kind)
            qubits.append(gate.qubits[role])
            thetas.append(theta)
            phis.append(phi)
        ends.append(len(kinds))
    return PulseSchedule(
        num_qubits,
        np.array(kinds, dtype=np.int64),
        np.array(qubits, dtype=np.int64),
        np.array(thetas, dtype=np.float64),
        np.array(phis, dtype=np.float64),
        np.array(ends, dtype=np.int64),
    )


def compile(circuit: Circuit, tables: PulseTable | None = None) -> PulseSchedule:  # noqa: A001
    return compile_circuit(circuit.gates, circuit.num_qubits, tables)


# ---------------------------------------------------------------------------
# text format

_GATE_LINE = re.compile(r"^(NOT|CNOT|CCNOT|ROT|CPHASE)\s+(.*)$", re.IGNORECASE)


def parse_circuit(text: str, num_qubits: int | None = None, name: str = "custom") -> Circuit:
    """Parse ``NOT q0`` / ``CNOT q0 q1`` / ``ROT q0 pi/2 pi/2`` lines.

    Optional directives: ``qubits <n>`` and ``init <bits>``.
    """
    gates: list[Gate] = []
    init = 0
    declared = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head.lower() == "qubits":
            declared = int(rest[0])
            continue
        if head.lower() == "init":
            init = int(rest[0], 0)
            continue
        if not _GATE_LINE.match(line):
            raise ValueError(f"line {lineno}: cannot parse {raw!r}")
        gname = head.upper()
        nq = len(ROLES[gname])
        if len(rest) != nq + len(PARAMS[gname]):
            raise ValueError(f"line {lineno}: {gname} expects {nq} qubits and {len(PARAMS[gname])} angles")
        try:
            qs = tuple(int(tok.lstrip("qQ")) for tok in rest[:nq])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad qubit token") from exc
        params = tuple(eval_angle(tok) for tok in rest[nq:])
        gates.append(Gate(gname, qs, params))
    n = num_qubits or declared or (1 + max((max(g.qubits) for g in gates), default=0))
    return Circuit(n, gates, initial_bits=init, name=name)


def format_circuit(circuit: Circuit) -> str:
    lines = [f"qubits {circuit.num_qubits}", f"init {circuit.initial_bits}"]
    for g in circuit.gates:
        parts = [g.name] + [f"q{q}" for q in g.qubits] + [repr(p) for p in g.params]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
