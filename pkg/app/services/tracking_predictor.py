"""
Service module for target tracking and downlink pre-compensation.
Turns sensing estimates into target states, predicts the next-block state,
angle and communication channel, pre-compensates the downlink frame and
localizes a reflector from a sequence of delay measurements.
"""

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from app.core.errors import ConvergenceError, TargetAtOriginError, UnobservableGeometryError
from app.schemas.grid import CarrierConfig, DDGrid
from app.services.geometry_channel import DDPath, Target, comm_path_from_target, sensing_path_from_target
from app.services.otfs_modem import DDFrame
from app.services.sensing_estimator import SensingEstimate

logger = logging.getLogger(__name__)

MIN_HEADING_PROJECTION = 0.1
ML_STEP_TOLERANCE = 1e-9
ML_MAX_ITERATIONS = 50
# Share of a block's range error folded into the radial speed
RANGE_RATE_GAIN = 0.5
ANGLE_TOLERANCE = 1e-9


def radial_unit(theta: float) -> np.ndarray:
    return np.array([np.sin(theta), np.cos(theta)])


@dataclass(frozen=True)
class TrackState:
    """Estimated or predicted kinematic state of one target."""

    position: np.ndarray
    velocity: np.ndarray
    angle: float
    range: float
    block_index: int = 0
    # Carrier phase reference of the downlink path
    phase_offset: float = 0.0
    # Unit direction of motion; None means radial motion
    heading: Optional[np.ndarray] = None
    misses: int = 0
    # Echo phase at zero range; None until the first gated measurement
    echo_reference: Optional[float] = None

    def __post_init__(self):
        position = np.array(self.position, dtype=float).reshape(2)
        if abs(self.range - np.linalg.norm(position)) > 1e-9 * max(1.0, self.range):
            raise ValueError("track range must equal the norm of its position")
        if self.range > 0 and abs(_wrap(self.angle - np.arctan2(position[0], position[1]))) > ANGLE_TOLERANCE:
            raise ValueError("track angle must equal atan2(p_x, p_y) of its position")
        object.__setattr__(self, "position", position)
        object.__setattr__(self, "velocity", np.array(self.velocity, dtype=float).reshape(2))

    @classmethod
    def at(cls, position, velocity, **kwargs) -> "TrackState":
        position = np.asarray(position, dtype=float)
        return cls(
            position=position,
            velocity=velocity,
            angle=predict_angle(position),
            range=float(np.linalg.norm(position)),
            **kwargs,
        )

    @classmethod
    def from_target(cls, target: Target, block_index: int = 0, heading: Optional[np.ndarray] = None) -> "TrackState":
        return cls.at(
            target.position,
            target.velocity,
            block_index=block_index,
            phase_offset=target.carrier_phase,
            heading=heading,
        )

    def as_target(self) -> Target:
        return Target(position=self.position, velocity=self.velocity, carrier_phase=self.phase_offset)


def localize(eta_hat: float, theta_hat: float, c: float) -> np.ndarray:
    """Position from round-trip delay and angle; range is c * eta / 2."""
    if eta_hat < 0:
        raise ValueError(f"delay must be nonnegative (got {eta_hat})")
    return c * eta_hat / 2.0 * radial_unit(theta_hat)


def estimate_velocity(
    phi_hat: float,
    theta_hat: float,
    f_c: float,
    c: float,
    heading: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Velocity from the round-trip Doppler along a known heading.

    Args:
        phi_hat: Echo Doppler in Hz, positive for a closing target.
        theta_hat: Target angle in radians.
        f_c: Carrier frequency in Hz.
        c: Propagation speed in m/s.
        heading: Unit direction of motion; None means motion along the radial line.

    Returns:
        np.ndarray: 2D velocity in m/s.
    """
    radial = radial_unit(theta_hat)
    heading = radial if heading is None else np.asarray(heading, dtype=float)
    if abs(np.linalg.norm(heading) - 1.0) > 1e-9:
        raise ValueError("heading must be a unit vector")
    projection = float(np.dot(heading, radial))
    if abs(projection) < MIN_HEADING_PROJECTION:
        raise UnobservableGeometryError("unobservable geometry: heading is nearly perpendicular to the line of sight")
    radial_speed = c * phi_hat / (2.0 * f_c)
    # Closing speed points against the outward radial direction
    return -radial_speed / projection * heading


def predict_angle(p_tilde: np.ndarray) -> float:
    p_tilde = np.asarray(p_tilde, dtype=float)
    if not np.linalg.norm(p_tilde) > 0:
        raise TargetAtOriginError("target at origin")
    return float(np.arctan2(p_tilde[0], p_tilde[1]))


def predict_state(s: TrackState, delta_t: float) -> TrackState:
    if not delta_t > 0:
        raise ValueError(f"prediction interval must be positive (got {delta_t})")
    return TrackState.at(
        s.position + s.velocity * delta_t,
        s.velocity,
        block_index=s.block_index + 1,
        phase_offset=s.phase_offset,
        heading=s.heading,
        misses=s.misses,
        echo_reference=s.echo_reference,
    )


def predict_channel(s: TrackState, carrier: CarrierConfig, grid: DDGrid) -> DDPath:
    return comm_path_from_target(s.as_target(), carrier, grid)


def predict_sensing_bins(s: TrackState, carrier: CarrierConfig, grid: DDGrid) -> tuple:
    path = sensing_path_from_target(s.as_target(), carrier, grid)
    return path.l, path.k


def precompensate(x: DDFrame, predicted: DDPath, g_comp: complex) -> DDFrame:
    """
    Undo the predicted DD shift and the phase of predicted.gain * g_comp.
    Amplitude is left untouched, so the frame energy is preserved.
    """
    rotation = np.exp(-1j * np.angle(predicted.gain * g_comp))
    shifted = np.roll(x.symbols, (-predicted.l, -predicted.k), axis=(0, 1))
    return DDFrame(x.grid, rotation * shifted)


def _fuse_measurement(
    track: TrackState,
    estimate: SensingEstimate,
    carrier: CarrierConfig,
    grid: DDGrid,
    angle_gate: float,
) -> TrackState:
    """
    Refine a track from a gated measurement.

    The echo peak phase is reference - 4 pi f_c d / c. Its deviation from
    the phase the predicted range implies corrects the range far below a
    delay bin; a share of that correction per block corrects the radial
    speed. The measured angle replaces the predicted one when the two
    disagree by more than half the gate.
    """
    wavenumber = 4.0 * np.pi * carrier.f_c / carrier.c
    peak = estimate.h_hat.data[estimate.l_hat + grid.M * estimate.k_hat]
    echo_phase = float(np.angle(peak))
    if track.echo_reference is None:
        reference = echo_phase + wavenumber * track.range
        range_error = 0.0
    else:
        reference = track.echo_reference
        range_error = -float(_wrap(echo_phase - (reference - wavenumber * track.range))) / wavenumber

    angle = track.angle if abs(estimate.theta_hat - track.angle) <= angle_gate / 2 else float(estimate.theta_hat)
    position = localize(2.0 * (track.range + range_error) / carrier.c, angle, carrier.c)
    doppler_error = -2.0 * carrier.f_c * RANGE_RATE_GAIN * range_error / (carrier.c * grid.frame_duration)
    try:
        correction = estimate_velocity(doppler_error, angle, carrier.f_c, carrier.c, track.heading)
    except UnobservableGeometryError:
        correction = np.zeros(2)
    logger.debug(
        f"Block {track.block_index}: gated echo corrects range by {range_error * 1e3:.2f} mm, "
        f"angle {np.rad2deg(angle - track.angle):+.2f} deg"
    )
    return TrackState.at(
        position,
        track.velocity + correction,
        block_index=track.block_index,
        phase_offset=track.phase_offset,
        heading=track.heading,
        echo_reference=reference,
    )


def update_track(
    track: TrackState,
    estimate: SensingEstimate,
    carrier: CarrierConfig,
    grid: DDGrid,
    angle_gate: float,
    max_misses: int = 3,
) -> TrackState:
    """
    Gate a sensing estimate against the track and fold it in.

    The measurement is in the gate when its echo bins equal the bins the
    track predicts and its angle lies within angle_gate radians of the
    track angle; the track is then refined from the echo peak phase and the
    measured angle. A track that misses the gate coasts on its prediction;
    after max_misses consecutive misses it is re-initialised from the
    measurement's bin-centre delay and Doppler.
    """
    expected = predict_sensing_bins(track, carrier, grid)
    in_gate = (estimate.l_hat, estimate.k_hat) == expected and abs(estimate.theta_hat - track.angle) <= angle_gate
    if in_gate:
        return _fuse_measurement(track, estimate, carrier, grid, angle_gate)
    if track.misses + 1 < max_misses:
        logger.debug(f"Block {track.block_index}: measurement outside gate, coasting ({track.misses + 1} misses)")
        return replace(track, misses=track.misses + 1)

    position = localize(estimate.eta_hat, estimate.theta_hat, carrier.c)
    if not np.linalg.norm(position) > 0:
        logger.warning(f"Block {track.block_index}: echo at zero delay, keeping predicted track")
        return replace(track, misses=0)
    try:
        velocity = estimate_velocity(estimate.phi_hat, estimate.theta_hat, carrier.f_c, carrier.c, track.heading)
    except UnobservableGeometryError:
        logger.warning(f"Block {track.block_index}: velocity unobservable, assuming a static target")
        velocity = np.zeros(2)
    logger.warning(
        f"Block {track.block_index}: track re-initialised at bins ({estimate.l_hat}, {estimate.k_hat}), "
        f"angle {np.rad2deg(estimate.theta_hat):.1f} deg"
    )
    return TrackState.at(
        position,
        velocity,
        block_index=track.block_index,
        phase_offset=track.phase_offset,
        heading=track.heading,
    )


@dataclass(frozen=True)
class ReflectorFix:
    position: np.ndarray
    iterations: int
    residual: float


def _wrap(angle: np.ndarray) -> np.ndarray:
    return (angle + np.pi) % (2 * np.pi) - np.pi


def locate_reflector_ml(
    delays: Sequence[float],
    angles: Sequence[float],
    sigma: float,
    c: float,
    sigma_theta: float = 1e-3,
) -> ReflectorFix:
    """
    Maximum-likelihood reflector position from round-trip delays and angles.

    Under iid Gaussian errors the likelihood maximum is the weighted least
    squares fit of 2|p|/c to the delays and atan2(p_x, p_y) to the angles,
    solved by Gauss-Newton from the first measurement.

    Args:
        delays: Measured round-trip delays in seconds.
        angles: Measured angles in radians, one per delay.
        sigma: Delay noise standard deviation in seconds.
        c: Propagation speed in m/s.
        sigma_theta: Angle noise standard deviation in radians.

    Returns:
        ReflectorFix: Position, Gauss-Newton iterations used and final weighted residual.
    """
    delays = np.asarray(delays, dtype=float)
    angles = np.asarray(angles, dtype=float)
    if delays.size == 0 or delays.shape != angles.shape:
        raise ValueError("need at least one delay measurement and one angle per delay")
    if not (sigma > 0 and sigma_theta > 0):
        raise ValueError("noise standard deviations must be positive")

    def residuals(p: np.ndarray) -> np.ndarray:
        distance = np.linalg.norm(p)
        delay_residual = (delays - 2.0 * distance / c) / sigma
        angle_residual = _wrap(angles - np.arctan2(p[0], p[1])) / sigma_theta
        return np.concatenate([delay_residual, angle_residual])

    position = localize(delays[0], angles[0], c)
    for iteration in range(1, ML_MAX_ITERATIONS + 1):
        distance = np.linalg.norm(position)
        if not distance > 0:
            raise TargetAtOriginError("target at origin")
        delay_row = 2.0 * position / (c * distance) / sigma
        angle_row = np.array([position[1], -position[0]]) / distance**2 / sigma_theta
        jacobian = np.vstack([np.tile(delay_row, (delays.size, 1)), np.tile(angle_row, (angles.size, 1))])
        step, *_ = np.linalg.lstsq(jacobian, residuals(position), rcond=None)
        position = position + step
        if np.linalg.norm(step) < ML_STEP_TOLERANCE:
            return ReflectorFix(position, iteration, float(np.sum(residuals(position) ** 2)))

    residual = float(np.sum(residuals(position) ** 2))
    raise ConvergenceError(
        "reflector localization did not converge",
        residual=residual,
        iterations=ML_MAX_ITERATIONS,
    )
