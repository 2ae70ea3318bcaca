"""Operational-error and decoherence models.

Random numbers come from counter-based streams: the value used for pulse
``k`` on a given channel depends only on ``(seed, channel, k)``, never on
the order in which pulses or replications are evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .engine import PulseOp, QuantumState

CHANNELS = {"theta": 0, "phi": 1, "jump": 2}
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ErrorModel:
    """Gaussian deviations added to every pulse's ``theta`` and ``phi``.

    ``mu_*`` are systematic (calibration) offsets, ``sigma_*`` the spread
    from laser noise. All in radians.
    """

    mu_theta: float = 0.0
    sigma_theta: float = 0.0
    mu_phi: float = 0.0
    sigma_phi: float = 0.0

    def __post_init__(self):
        for name in ("mu_theta", "sigma_theta", "mu_phi", "sigma_phi"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sigma_theta < 0 or self.sigma_phi < 0:
            raise ValueError("standard deviations must be >= 0")

    @property
    def is_zero(self) -> bool:
        return not (self.mu_theta or self.sigma_theta or self.mu_phi or self.sigma_phi)

    @property
    def is_stochastic(self) -> bool:
        return self.sigma_theta > 0 or self.sigma_phi > 0


@dataclass(frozen=True)
class DecoherenceModel:
    """Phonon decay per laser pulse.

    ``mode='decay'`` multiplies excited-bus amplitudes by ``exp(-dec/2)``
    after each pulse and never renormalizes; ``mode='jump'`` renormalizes and
    fires discrete emissions. ``aux_levels=False`` restricts decay to level 1.
    """

    dec: float = 0.0
    mode: str = "decay"
    aux_levels: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.dec) and self.dec >= 0):
            raise ValueError("dec must be finite and >= 0")
        if self.mode not in ("decay", "jump"):
            raise ValueError(f"unknown decoherence mode {self.mode!r}")


@dataclass(frozen=True)
class NoiseStream:
    seed: int

    def _words(self, channel: str, start: int, count: int) -> np.ndarray:
        key = [self.seed & _MASK64, CHANNELS[channel]]
        gen = np.random.Philox(key=key, counter=start)
        return gen.random_raw(4 * count)[::4]

    def uniforms(self, channel: str, start: int, count: int) -> np.ndarray:
        """Open-interval uniforms for pulse indices ``start .. start+count-1``."""
        if count <= 0:
            return np.empty(0)
        words = self._words(channel, start, count)
        return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normals(self, channel: str, start: int, count: int) -> np.ndarray:
        return ndtri(self.uniforms(channel, start, count))

    def uniform(self, channel: str, pulse_index: int) -> float:
        return float(self.uniforms(channel, pulse_index, 1)[0])


def draw_gaussian(
    stream: NoiseStream, pulse_index: int, channel: str, mu: float, sigma: float
) -> float:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return mu
    return mu + sigma * float(stream.normals(channel, pulse_index, 1)[0])


def draw_gaussians(
    stream: NoiseStream, start: int, count: int, channel: str, mu: float, sigma: float
) -> np.ndarray:
    """Vectorized :func:`draw_gaussian` for a contiguous block of pulses."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.full(count, mu, dtype=np.float64)
    return mu + sigma * stream.normals(channel, start, count)


def perturb(op: PulseOp, model: ErrorModel, stream: NoiseStream) -> PulseOp:
    d_theta = draw_gaussian(stream, op.pulse_index, "theta", model.mu_theta, model.sigma_theta)
    d_phi = draw_gaussian(stream, op.pulse_index, "phi", model.mu_phi, model.sigma_phi)
    return op.with_angles(op.theta + d_theta, op.phi + d_phi)


def perturb_angles(
    thetas: np.ndarray, phis: np.ndarray, model: ErrorModel, stream: NoiseStream, start: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    n = thetas.shape[0]
    if model.is_zero:
        return thetas, phis
    t = thetas + draw_gaussians(stream, start, n, "theta", model.mu_theta, model.sigma_theta)
    p = phis + draw_gaussians(stream, start, n, "phi", model.mu_phi, model.sigma_phi)
    return t, p


def jump_step(
    state: QuantumState,
    dec: float,
    stream: NoiseStream,
    pulse_index: int,
    aux_levels: bool = True,
) -> tuple[QuantumState, bool]:
    """One quantum-jump decoherence step following a pulse.

    The state is decayed, then renormalized. With probability equal to the
    norm lost in the decay an emission fires: the excited-bus component is
    returned to level 0 and renormalized, everything else is discarded.
    """
    if dec == 0:
        return state, False
    before = state.norm_sq()
    state.apply_decay(dec, aux_levels)
    after = state.norm_sq()
    survival = after / before if before > 0 else 1.0
    emitted = stream.uniform("jump", pulse_index) < 1.0 - survival
    if emitted:
        state.reset_phonon(aux_levels)
        after = state.norm_sq()
    if after > 0:
        state.scale(1.0 / math.sqrt(after))
    return state, bool(emitted)
