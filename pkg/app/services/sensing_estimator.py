"""
Service module for sensing-echo processing.
Estimates the DD channel vector, the delay/Doppler bins and the angle of a
target from its echo, and evaluates the CRB of the channel estimate.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from app.core.errors import NoPeakError, RankDeficientError
from app.schemas.grid import ArrayConfig
from app.services.geometry_channel import composite_gain
from app.services.otfs_modem import DDFrame, DDVector, dd_coordinates, devectorize, require_same_grid, vectorize

logger = logging.getLogger(__name__)

# Relative eigenvalue floor below which X^H X counts as singular
RANK_TOLERANCE = 1e-12


def signed_unwrap(k: int, n: int) -> int:
    """Map a Doppler bin k > N/2 to the negative bin k - N."""
    return k - n if k > n / 2 else k


@dataclass(frozen=True)
class SensingEstimate:
    h_hat: DDVector
    l_hat: int
    k_hat: int
    theta_hat: float
    eta_hat: float
    phi_hat: float
    peak_magnitude: float

    @classmethod
    def from_bins(cls, h_hat: DDVector, l_hat: int, k_hat: int, theta_hat: float, peak_magnitude: float):
        grid = h_hat.grid
        if not (0 <= l_hat < grid.M and 0 <= k_hat < grid.N):
            raise ValueError(f"bins ({l_hat}, {k_hat}) outside {grid.M}x{grid.N} grid")
        return cls(
            h_hat=h_hat,
            l_hat=int(l_hat),
            k_hat=int(k_hat),
            theta_hat=float(theta_hat),
            eta_hat=l_hat / (grid.M * grid.delta_f),
            phi_hat=signed_unwrap(k_hat, grid.N) / (grid.N * grid.T),
            peak_magnitude=float(peak_magnitude),
        )


def matched_filter(r: DDVector, x: DDFrame) -> DDVector:
    """
    X^H r as a 2D circular cross-correlation of the received frame with the
    transmitted frame.

    Args:
        r: Received echo, stacked with index l + M*k.
        x: Known transmitted DD frame.

    Returns:
        DDVector: Matched-filter output on the same grid.
    """
    require_same_grid(r.grid, x.grid)
    received = devectorize(r).symbols
    correlation = np.fft.ifft2(np.fft.fft2(received) * np.conj(np.fft.fft2(x.symbols)))
    return vectorize(DDFrame(x.grid, correlation))


def _frame_spectrum_power(x: DDFrame) -> np.ndarray:
    # Eigenvalues of X^H X for the block-circulant X
    return np.abs(np.fft.fft2(x.symbols)) ** 2


def lmmse_estimate(r: DDVector, x: DDFrame, n0: float, prior_var: float, g: complex) -> DDVector:
    """
    LMMSE channel estimate (G^H G + n0/prior_var I)^-1 G^H r with G = g X,
    solved in the 2D DFT basis that diagonalises X. prior_var = inf gives
    the least-squares (ML) estimate.
    """
    require_same_grid(r.grid, x.grid)
    if n0 < 0:
        raise ValueError(f"noise power must be nonnegative (got {n0})")
    if not prior_var > 0:
        raise ValueError(f"prior variance must be positive (got {prior_var})")
    ratio = 0.0 if np.isinf(prior_var) else n0 / prior_var
    spectrum = np.fft.fft2(x.symbols)
    normal = abs(g) ** 2 * np.abs(spectrum) ** 2 + ratio
    if ratio == 0 and (normal.max() == 0 or normal.min() <= RANK_TOLERANCE * normal.max()):
        raise RankDeficientError("rank deficient: X^H X is singular and no prior regularises it")
    received = np.fft.fft2(devectorize(r).symbols)
    estimate = np.fft.ifft2(np.conj(g) * np.conj(spectrum) * received / normal)
    return vectorize(DDFrame(x.grid, estimate))


def peak_pick(h_hat: DDVector) -> Tuple[int, int, complex]:
    """Largest-magnitude entry as (l, k, value); ties go to the smallest linear index."""
    magnitude = np.abs(h_hat.data)
    if magnitude.size == 0 or not magnitude.max() > 0:
        raise NoPeakError("no peak: estimate is identically zero")
    index = int(np.argmax(magnitude))
    l, k = dd_coordinates(h_hat.grid, index)
    return l, k, complex(h_hat.data[index])


def angle_grid(step_deg: float = 1.0, sector_deg: float = 60.0) -> np.ndarray:
    """Beam directions in radians covering [-sector, sector] in steps of step_deg."""
    if not step_deg > 0:
        raise ValueError("angle step must be positive")
    count = int(np.floor(2 * sector_deg / step_deg + 1e-9))
    return np.deg2rad(-sector_deg + step_deg * np.arange(count + 1))


def estimate_angle_beamsweep(echo_energy: Sequence[Tuple[float, float]]) -> float:
    if len(echo_energy) == 0:
        raise NoPeakError("no peak: beam sweep is empty")
    angles, energies = zip(*echo_energy)
    return float(angles[int(np.argmax(energies))])


def receive_beam_sweep(
    true_angle: float,
    tx_angle: float,
    gamma: complex,
    frame_energy: float,
    n0: float,
    arrays: ArrayConfig,
    power: float,
    angles: Sequence[float],
    rng: np.random.Generator,
) -> List[Tuple[float, float]]:
    """
    Matched-filter peak energy seen through every receive beam. The peak of
    X^H r at the echo bin is G_s(beam) * gamma * ||x||^2 and the noise there
    has variance n0 * ||x||^2.
    """
    sweep = []
    scale = np.sqrt(n0 * frame_energy / 2.0)
    for beam in angles:
        noise = scale * (rng.standard_normal() + 1j * rng.standard_normal())
        peak = composite_gain(tx_angle, true_angle, beam, arrays, power) * gamma * frame_energy + noise
        sweep.append((float(beam), float(abs(peak) ** 2)))
    return sweep


def estimate(r: DDVector, x: DDFrame, sweep: Sequence[Tuple[float, float]]) -> SensingEstimate:
    """Matched filter, peak pick and beam-sweep angle combined into one estimate."""
    correlation = matched_filter(r, x)
    h_hat = DDVector(x.grid, correlation.data / x.energy)
    l_hat, k_hat, peak = peak_pick(h_hat)
    theta_hat = estimate_angle_beamsweep(sweep)
    logger.debug(f"Echo peak at bins ({l_hat}, {k_hat}), |peak| {abs(peak):.3e}, angle {np.rad2deg(theta_hat):.1f} deg")
    return SensingEstimate.from_bins(h_hat, l_hat, k_hat, theta_hat, abs(peak))


def crb_h(x: DDFrame, n0: float, g: complex) -> float:
    """
    Trace of the inverse Fisher information (g^2/n0 X^H X)^-1 for r = g X h + w.

    Args:
        x: Transmitted DD frame.
        n0: Noise power per received sample.
        g: Composite gain; only its magnitude matters.

    Returns:
        float: Sum of per-tap error variances.
    """
    if not n0 > 0:
        raise ValueError(f"noise power must be positive (got {n0})")
    eigenvalues = abs(g) ** 2 * _frame_spectrum_power(x)
    if eigenvalues.max() == 0 or eigenvalues.min() <= RANK_TOLERANCE * eigenvalues.max():
        raise RankDeficientError("rank deficient: X^H X is singular")
    return float(n0 * np.sum(1.0 / eigenvalues))
