"""
Service module for the geometric scene and the delay-Doppler channels.
Maps target geometry to communication (one-way) and sensing (round-trip)
DD paths, builds ULA steering vectors and beamforming gains, applies DD
channels and adds receiver noise.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from app.core.errors import ChannelIndexError, TargetAtOriginError
from app.schemas.grid import ArrayConfig, CarrierConfig, DDGrid
from app.services.otfs_modem import DDFrame, build_X_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Target:
    """Scene element; the BS sits at the origin with boresight along +y."""

    position: np.ndarray
    velocity: np.ndarray
    rcs: float = 25.0
    is_ue: bool = True
    carrier_phase: float = 0.0
    reflection_phase: float = 0.0

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float).reshape(2)
        velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        if not np.linalg.norm(position) > 0:
            raise TargetAtOriginError("target at origin")
        if not self.rcs > 0:
            raise ValueError("rcs must be positive")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "velocity", velocity)

    @property
    def range(self) -> float:
        return float(np.linalg.norm(self.position))

    @property
    def angle(self) -> float:
        return float(np.arctan2(self.position[0], self.position[1]))

    @property
    def radial_velocity(self) -> float:
        # Positive for closing targets
        return float(-np.dot(self.position, self.velocity) / self.range)

    def moved(self, delta_t: float) -> "Target":
        return Target(
            position=self.position + self.velocity * delta_t,
            velocity=self.velocity,
            rcs=self.rcs,
            is_ue=self.is_ue,
            carrier_phase=self.carrier_phase,
            reflection_phase=self.reflection_phase,
        )


@dataclass(frozen=True)
class DDPath:
    l: int
    k: int
    gain: complex
    angle: float
    tau: float
    nu: float

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError("path gain must be finite")


def quantize_index(value: float, size: int) -> int:
    """Round half away from zero, then wrap modulo the grid size."""
    snapped = np.round(float(value), 9)
    rounded = np.sign(snapped) * np.floor(np.abs(snapped) + 0.5)
    return int(rounded) % size


def steering_vector(theta: float, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("steering vector needs at least one element")
    if abs(theta) > np.pi / 2 + 1e-12:
        raise ValueError(f"angle {theta!r} outside [-pi/2, pi/2]")
    return np.exp(1j * np.pi * np.arange(n) * np.sin(theta))


def composite_gain(
    tx_angle_steered: float,
    true_angle: float,
    rx_beam_angle: float,
    arrays: ArrayConfig,
    power: float,
) -> complex:
    """Sensing-path gain b^H a_Nr(theta) a_Nt^H(theta) f with f = sqrt(p/N_t) a_Nt(theta_tx)."""
    f = np.sqrt(power / arrays.n_tx) * steering_vector(tx_angle_steered, arrays.n_tx)
    b = steering_vector(rx_beam_angle, arrays.n_rx)
    receive = np.vdot(b, steering_vector(true_angle, arrays.n_rx))
    transmit = np.vdot(steering_vector(true_angle, arrays.n_tx), f)
    return complex(receive * transmit)


def comm_composite_gain(
    tx_angle_steered: float,
    true_angle: float,
    ue_beam_angle: Optional[float],
    arrays: ArrayConfig,
    power: float,
) -> complex:
    """
    Downlink gain u^H a_Nu(theta) a_Nt^H(theta) f. The UE combiner is
    a_Nu(theta_ue)/sqrt(N_u); None means a single UE element is used.
    """
    f = np.sqrt(power / arrays.n_tx) * steering_vector(tx_angle_steered, arrays.n_tx)
    transmit = np.vdot(steering_vector(true_angle, arrays.n_tx), f)
    if ue_beam_angle is None:
        return complex(transmit)
    u = steering_vector(ue_beam_angle, arrays.n_ue) / np.sqrt(arrays.n_ue)
    return complex(np.vdot(u, steering_vector(true_angle, arrays.n_ue)) * transmit)


def _kinematics(target: Target, carrier: CarrierConfig) -> tuple:
    d = target.range
    tau = d / carrier.c
    nu = carrier.f_c * target.radial_velocity / carrier.c
    return d, tau, nu


def comm_path_from_target(
    target: Target,
    carrier: CarrierConfig,
    grid: DDGrid,
    rng: Optional[np.random.Generator] = None,
) -> DDPath:
    d, tau, nu = _kinematics(target, carrier)
    magnitude = np.sqrt(carrier.c / (4 * np.pi * carrier.f_c * d**2))
    phase = target.carrier_phase - 2 * np.pi * carrier.f_c * d / carrier.c
    if rng is not None:
        phase += rng.uniform(0.0, 2 * np.pi)
    return DDPath(
        l=quantize_index(tau * grid.M * grid.delta_f, grid.M),
        k=quantize_index(nu * grid.N * grid.T, grid.N),
        gain=complex(magnitude * np.exp(1j * phase)),
        angle=target.angle,
        tau=tau,
        nu=nu,
    )


def sensing_path_from_target(
    target: Target,
    carrier: CarrierConfig,
    grid: DDGrid,
    rng: Optional[np.random.Generator] = None,
) -> DDPath:
    """Round-trip echo path; delay and Doppler are exactly twice the one-way values."""
    d, tau, nu = _kinematics(target, carrier)
    eta = 2.0 * tau
    upsilon = 2.0 * nu
    # Monostatic radar equation
    power_gain = target.rcs * carrier.c**2 / ((4 * np.pi) ** 3 * carrier.f_c**2 * d**4)
    phase = target.reflection_phase - 2 * np.pi * carrier.f_c * 2 * d / carrier.c
    if rng is not None:
        phase += rng.uniform(0.0, 2 * np.pi)
    return DDPath(
        l=quantize_index(eta * grid.M * grid.delta_f, grid.M),
        k=quantize_index(upsilon * grid.N * grid.T, grid.N),
        gain=complex(np.sqrt(power_gain) * np.exp(1j * phase)),
        angle=target.angle,
        tau=eta,
        nu=upsilon,
    )


def _check_paths(paths: Iterable[DDPath], grid: DDGrid):
    for path in paths:
        if not (0 <= path.l < grid.M and 0 <= path.k < grid.N):
            raise ChannelIndexError(f"path index ({path.l}, {path.k}) outside {grid.M}x{grid.N} grid")


def apply_dd_channel(x: DDFrame, paths: Sequence[DDPath], composite_gain: complex) -> DDFrame:
    _check_paths(paths, x.grid)
    received = np.zeros(x.grid.shape, dtype=complex)
    for path in paths:
        received += path.gain * np.roll(x.symbols, (path.l, path.k), axis=(0, 1))
    return DDFrame(x.grid, composite_gain * received)


def add_awgn(x: DDFrame, n0: float, rng: np.random.Generator) -> DDFrame:
    if n0 < 0:
        raise ValueError(f"noise power must be nonnegative (got {n0})")
    if n0 == 0:
        return x
    noise = rng.standard_normal(x.grid.shape) + 1j * rng.standard_normal(x.grid.shape)
    return DDFrame(x.grid, x.symbols + np.sqrt(n0 / 2.0) * noise)


def channel_kernel(paths: Sequence[DDPath], grid: DDGrid) -> DDFrame:
    """DD-domain impulse response H_DD[l, k] of a set of paths."""
    _check_paths(paths, grid)
    kernel = np.zeros(grid.shape, dtype=complex)
    for path in paths:
        kernel[path.l, path.k] += path.gain
    return DDFrame(grid, kernel)


def dd_channel_matrix(paths: Sequence[DDPath], grid: DDGrid, composite_gain: complex = 1.0) -> np.ndarray:
    # Convolution commutes, so the kernel's own X-matrix realises the channel
    return composite_gain * build_X_matrix(channel_kernel(paths, grid))


def channel_eigenvalues(paths: Sequence[DDPath], grid: DDGrid, composite_gain: complex = 1.0) -> np.ndarray:
    """Eigenvalues of the block-circulant channel matrix (2D DFT of the kernel)."""
    return composite_gain * np.fft.fft2(channel_kernel(paths, grid).symbols)
