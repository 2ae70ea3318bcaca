"""Numba kernels for the dense amplitude vector and the sorted sparse map.

Layout: index = phonon_level * 2**num_qubits + bitstring, four phonon levels.
Pulse kinds are encoded as small integers (V=0, U=1, A=2, P=3).
"""

import cmath
import math

import numpy as np
from numba import njit

# (first plane, first qubit value, second plane, second qubit value)
SIDEBAND_PAIRS = np.array(
    [
        [0, 0, 0, 1],  # V: unused, carrier couples within every plane
        [1, 0, 0, 1],  # U
        [1, 0, 2, 0],  # A
        [1, 0, 3, 0],  # P
    ],
    dtype=np.int64,
)


@njit(cache=True, nogil=True)
def apply_pulse(psi, num_qubits, kind, q, theta, phi):
    dim = 1 << num_qubits
    c = math.cos(0.5 * theta)
    s = math.sin(0.5 * theta)
    m01 = -1j * cmath.exp(-1j * phi) * s
    m10 = -1j * cmath.exp(1j * phi) * s
    bit = 1 << q
    nhigh = dim >> (q + 1)
    if kind == 0:
        for p in range(4):
            off = p * dim
            for h in range(nhigh):
                base = off + (h << (q + 1))
                for low in range(bit):
                    i0 = base + low
                    i1 = i0 + bit
                    a0 = psi[i0]
                    a1 = psi[i1]
                    psi[i0] = c * a0 + m01 * a1
                    psi[i1] = m10 * a0 + c * a1
    else:
        off0 = SIDEBAND_PAIRS[kind, 0] * dim + SIDEBAND_PAIRS[kind, 1] * bit
        off1 = SIDEBAND_PAIRS[kind, 2] * dim + SIDEBAND_PAIRS[kind, 3] * bit
        for h in range(nhigh):
            base = h << (q + 1)
            for low in range(bit):
                b0 = base + low
                i0 = off0 + b0
                i1 = off1 + b0
                a0 = psi[i0]
                a1 = psi[i1]
                psi[i0] = c * a0 + m01 * a1
                psi[i1] = m10 * a0 + c * a1


@njit(cache=True, nogil=True)
def apply_decay(psi, num_qubits, factor, top_level):
    dim = 1 << num_qubits
    for i in range(dim, (top_level + 1) * dim):
        psi[i] *= factor


@njit(cache=True, nogil=True)
def run_pulses(psi, num_qubits, kinds, qubits, thetas, phis, start, stop, factor, top_level):
    """Apply pulses ``start:stop`` with a decay step after each one."""
    decays = factor != 1.0
    for k in range(start, stop):
        apply_pulse(psi, num_qubits, kinds[k], qubits[k], thetas[k], phis[k])
        if decays:
            apply_decay(psi, num_qubits, factor, top_level)


@njit(cache=True, nogil=True)
def norm_sq(psi):
    total = 0.0
    for i in range(psi.shape[0]):
        a = psi[i]
        total += a.real * a.real + a.imag * a.imag
    return total


@njit(cache=True, nogil=True)
def sparse_pulse(idx, vals, num_qubits, kind, q, theta, phi, prune):
    """One pulse on sorted ``(idx, vals)``; returns new sorted arrays.

    Each coupled pair is visited once from whichever member is present; the
    partner is found by binary search.  Results below ``prune`` are dropped.
    """
    n = idx.shape[0]
    out_i = np.empty(2 * n, dtype=np.int64)
    out_v = np.empty(2 * n, dtype=np.complex128)
    handled = np.zeros(n, dtype=np.bool_)
    c = math.cos(0.5 * theta)
    s = math.sin(0.5 * theta)
    m01 = -1j * cmath.exp(-1j * phi) * s
    m10 = -1j * cmath.exp(1j * phi) * s
    bit = 1 << q
    low_mask = ((1 << num_qubits) - 1) & ~bit
    pa, qa, pb, qb = SIDEBAND_PAIRS[kind, 0], SIDEBAND_PAIRS[kind, 1], SIDEBAND_PAIRS[kind, 2], SIDEBAND_PAIRS[kind, 3]
    k = 0
    for i in range(n):
        if handled[i]:
            continue
        x = idx[i]
        p = x >> num_qubits
        qv = (x >> q) & 1
        b = x & low_mask
        if kind == 0:
            i0 = (p << num_qubits) | b
            i1 = i0 | bit
        elif (p == pa and qv == qa) or (p == pb and qv == qb):
            i0 = (pa << num_qubits) | b | (qa * bit)
            i1 = (pb << num_qubits) | b | (qb * bit)
        else:
            if abs(vals[i]) >= prune:
                out_i[k] = x
                out_v[k] = vals[i]
                k += 1
            continue
        other = i1 if x == i0 else i0
        j = np.searchsorted(idx, other)
        partner = 0j
        if j < n and idx[j] == other:
            partner = vals[j]
            handled[j] = True
        if x == i0:
            a0, a1 = vals[i], partner
        else:
            a0, a1 = partner, vals[i]
        n0 = c * a0 + m01 * a1
        n1 = m10 * a0 + c * a1
        if abs(n0) >= prune:
            out_i[k] = i0
            out_v[k] = n0
            k += 1
        if abs(n1) >= prune:
            out_i[k] = i1
            out_v[k] = n1
            k += 1
    order = np.argsort(out_i[:k], kind="mergesort")
    return out_i[:k][order], out_v[:k][order]


@njit(cache=True, nogil=True)
def run_pulses_sparse(idx, vals, num_qubits, kinds, qubits, thetas, phis, start, stop, factor, top_level, prune):
    for k in range(start, stop):
        idx, vals = sparse_pulse(idx, vals, num_qubits, kinds[k], qubits[k], thetas[k], phis[k], prune)
        if factor != 1.0:
            for t in range(idx.shape[0]):
                p = idx[t] >> num_qubits
                if 1 <= p <= top_level:
                    vals[t] *= factor
    return idx, vals
