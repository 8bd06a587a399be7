"""
Service module for communication/sensing metrics and the DD power design.
Covers capacity, BER and BPSK symbol mapping, the comm/sensing channel
cross-correlation, water-filling and the CRB-constrained power allocation.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import erfc

from app.core.errors import GridMismatchError, InfeasibleDesignError, RankDeficientError
from app.schemas.grid import DDGrid
from app.schemas.results import DesignResult
from app.services.geometry_channel import DDPath, channel_eigenvalues, dd_channel_matrix
from app.services.otfs_modem import DDFrame
from app.services.sensing_estimator import crb_h

logger = logging.getLogger(__name__)

BLEND_TOLERANCE = 1e-4
SCAN_POINTS = 32


def _eigen_power_gains(h_paths: Sequence[DDPath], g: complex, grid: DDGrid) -> np.ndarray:
    # Flattened in DD-vector order (index l + M*k)
    return np.abs(channel_eigenvalues(h_paths, grid, g)).reshape(-1, order="F") ** 2


def capacity(
    h_paths: Sequence[DDPath],
    g: complex,
    r_x: Sequence[float],
    n0: float,
    grid: DDGrid,
    basis: str = "delay_doppler",
) -> float:
    """
    Bits per frame log2 det(I + H R_x H^H / n0).

    Args:
        h_paths: Paths of the DD channel.
        g: Composite beamforming gain.
        r_x: Per-bin powers; diagonal of R_x in the chosen basis.
        n0: Noise power.
        grid: DD grid of the frame.
        basis: "delay_doppler" for a diagonal DD covariance, "eigen" for
            powers loaded on the channel eigenmodes (2D DFT bins).

    Returns:
        float: Capacity in bits per frame.
    """
    if not n0 > 0:
        raise ValueError(f"noise power must be positive (got {n0})")
    r_x = np.asarray(r_x, dtype=float).reshape(-1)
    if r_x.size != grid.size:
        raise GridMismatchError(f"power vector has length {r_x.size}, grid expects {grid.size}")
    if basis == "eigen":
        return float(np.sum(np.log2(1.0 + _eigen_power_gains(h_paths, g, grid) * r_x / n0)))
    if basis != "delay_doppler":
        raise ValueError(f"unknown basis {basis!r}")
    h = dd_channel_matrix(h_paths, grid, g)
    covariance = np.eye(grid.size) + (h * r_x) @ h.conj().T / n0
    _, logdet = np.linalg.slogdet(covariance)
    return float(logdet / np.log(2.0))


def ber(tx_bits: Sequence[int], rx_bits: Sequence[int]) -> float:
    tx_bits = np.asarray(tx_bits).reshape(-1)
    rx_bits = np.asarray(rx_bits).reshape(-1)
    if tx_bits.size == 0 or tx_bits.size != rx_bits.size:
        raise ValueError(f"bit streams must be nonempty and of equal length ({tx_bits.size} vs {rx_bits.size})")
    return float(np.count_nonzero(tx_bits != rx_bits) / tx_bits.size)


def bpsk_map(bits: Sequence[int], grid: DDGrid, power: float = 1.0) -> DDFrame:
    """0 -> +sqrt(p), 1 -> -sqrt(p), bit i placed at DD index i = l + M*k."""
    bits = np.asarray(bits).reshape(-1)
    if bits.size != grid.size:
        raise GridMismatchError(f"got {bits.size} bits, grid carries {grid.size}")
    symbols = np.sqrt(power) * (1.0 - 2.0 * bits)
    return DDFrame(grid, symbols.reshape(grid.shape, order="F"))


def bpsk_demap(frame: DDFrame, derotation: float = 0.0) -> np.ndarray:
    decisions = np.real(np.exp(-1j * derotation) * frame.symbols) < 0
    return decisions.reshape(-1, order="F").astype(np.int8)


def bpsk_theoretical_ber(snr_linear) -> np.ndarray:
    """Q(sqrt(2 gamma)) = erfc(sqrt(gamma)) / 2."""
    return 0.5 * erfc(np.sqrt(np.asarray(snr_linear, dtype=float)))


def snr_at_ber(snr_db: Sequence[float], ber_values: Sequence[float], target: float = 1e-3) -> float:
    """
    SNR where a BER curve first crosses the target, by linear interpolation
    of log10(BER) against SNR in dB. NaN if the curve never crosses.
    """
    snr_db = np.asarray(snr_db, dtype=float)
    log_ber = np.log10(np.maximum(np.asarray(ber_values, dtype=float), 1e-15))
    log_target = np.log10(target)
    for i in range(snr_db.size - 1):
        upper, lower = log_ber[i], log_ber[i + 1]
        if upper >= log_target >= lower and upper != lower:
            fraction = (upper - log_target) / (upper - lower)
            return float(snr_db[i] + fraction * (snr_db[i + 1] - snr_db[i]))
    if snr_db.size and log_ber[0] == log_target:
        return float(snr_db[0])
    return float("nan")


def cross_correlation(
    comm_draws: Sequence[np.ndarray],
    sens_draws: Sequence[np.ndarray],
) -> Tuple[np.ndarray, float]:
    """
    Sample mean of H_c H_s^H over paired channel draws.

    Returns:
        tuple: (R_cs, dominance) where dominance = min_i(|R_ii| - sum_{j!=i} |R_ij|).
    """
    if len(comm_draws) == 0 or len(comm_draws) != len(sens_draws):
        raise ValueError("need the same nonzero number of communication and sensing draws")
    total = None
    for h_c, h_s in zip(comm_draws, sens_draws):
        h_c, h_s = np.asarray(h_c), np.asarray(h_s)
        if h_c.shape != h_s.shape:
            raise GridMismatchError(f"draw shapes differ: {h_c.shape} vs {h_s.shape}")
        product = h_c @ h_s.conj().T
        total = product if total is None else total + product
    r_cs = total / len(comm_draws)
    magnitude = np.abs(r_cs)
    diagonal = np.diag(magnitude)
    dominance = float(np.min(2 * diagonal - magnitude.sum(axis=1)))
    return r_cs, dominance


def water_filling(gains: Sequence[float], total_power: float, n0: float = 1.0) -> np.ndarray:
    """
    Capacity-optimal powers over parallel channels with power gains `gains`.

    Channels are sorted best first and the weakest active channel is dropped
    until the common water level clears every remaining noise floor.
    """
    gains = np.asarray(gains, dtype=float)
    if not total_power > 0:
        raise ValueError(f"total power must be positive (got {total_power})")
    active = np.flatnonzero(gains > 0)
    if active.size == 0:
        raise RankDeficientError("rank deficient: every channel gain is zero")
    order = active[np.argsort(gains[active], kind="stable")[::-1]]
    floors = n0 / gains[order]
    count = order.size
    level = (total_power + floors.sum()) / count
    while count > 1 and level <= floors[count - 1]:
        count -= 1
        level = (total_power + floors[:count].sum()) / count
    allocation = np.zeros(gains.size)
    allocation[order[:count]] = level - floors[:count]
    return allocation


def fisher_weights(rng: np.random.Generator, frames: int, grid: DDGrid) -> np.ndarray:
    """
    Per-eigenmode power of `frames` complex Gaussian frames, averaged.

    A frame drawn with allocation p carries p_i * w_i on eigenmode i, so the
    returned weights scale the Fisher information of every bin.
    """
    if frames < 1:
        raise ValueError(f"need at least one frame (got {frames})")
    symbols = rng.standard_normal((frames, grid.size)) + 1j * rng.standard_normal((frames, grid.size))
    return np.mean(np.abs(symbols) ** 2, axis=0) / 2.0


def _mean_crb(allocation: np.ndarray, weights: np.ndarray, n0: float, g: complex, grid: DDGrid) -> float:
    """CRB of h from the Fisher information averaged over the drawn frames."""
    spectrum = np.sqrt(allocation * weights).reshape(grid.shape, order="F")
    symbols = np.fft.ifft2(spectrum, norm="ortho")
    try:
        return crb_h(DDFrame(grid, symbols), n0, g)
    except RankDeficientError:
        return float("inf")


def design_allocation(
    h_paths: Sequence[DDPath],
    g: complex,
    n0: float,
    p_total: float,
    t_crb: float,
    frames_for_crb: int,
    rng: np.random.Generator,
    grid: DDGrid,
    sensing_gain: Optional[complex] = None,
    sensing_n0: Optional[float] = None,
) -> DesignResult:
    """
    Maximise capacity subject to CRB <= t_crb and mean per-bin power P_T.

    The allocation is the blend (1 - lambda) * water-filling + lambda * uniform
    over the channel eigenmodes with the smallest lambda that meets t_crb.

    Args:
        h_paths: Communication channel paths.
        g: Composite gain of the communication link.
        n0: Noise power at the communication receiver.
        p_total: Average per-bin power P_T.
        t_crb: CRB threshold; inf disables the sensing constraint.
        frames_for_crb: Number of random frames behind the CRB estimate.
        rng: Stream for the random frames.
        grid: DD grid of the frame.
        sensing_gain: Echo gain used in the CRB; defaults to g.
        sensing_n0: Noise power at the sensing receiver; defaults to n0.

    Returns:
        DesignResult: Feasible allocation with its capacity and CRB.
    """
    if not (p_total > 0 and t_crb > 0):
        raise ValueError("p_total and t_crb must be positive")
    gains = _eigen_power_gains(h_paths, g, grid)
    filled = water_filling(gains, grid.size * p_total, n0)
    uniform = np.full(grid.size, float(p_total))
    sensing_gain = g if sensing_gain is None else sensing_gain
    sensing_n0 = n0 if sensing_n0 is None else sensing_n0
    weights = fisher_weights(rng, frames_for_crb, grid)

    def blended(blend: float) -> np.ndarray:
        return (1.0 - blend) * filled + blend * uniform

    def crb_at(blend: float) -> float:
        return _mean_crb(blended(blend), weights, sensing_n0, sensing_gain, grid)

    if np.isinf(t_crb):
        blend = 0.0
    else:
        best = crb_at(1.0)
        if best > t_crb:
            raise InfeasibleDesignError(f"T_CRB infeasible at this power (best CRB {best:.3e} > {t_crb:.3e})")
        blend = 0.0 if crb_at(0.0) <= t_crb else _smallest_feasible_blend(crb_at, t_crb)

    allocation = blended(blend)
    result = DesignResult(
        power_allocation=allocation.tolist(),
        achieved_capacity=capacity(h_paths, g, allocation, n0, grid, basis="eigen"),
        achieved_crb=crb_at(blend),
        blend=blend,
        p_total=p_total,
        t_crb=t_crb,
    )
    logger.info(f"Design at P_T={p_total:.3e}: blend {blend:.4f}, capacity {result.achieved_capacity:.1f} bits")
    return result


def _smallest_feasible_blend(crb_at, t_crb: float) -> float:
    scan = np.linspace(0.0, 1.0, SCAN_POINTS)
    values = np.array([crb_at(blend) for blend in scan])
    feasible = np.flatnonzero(values <= t_crb)
    first = int(feasible[0])
    # Convex in the blend: falling up to the first feasible point
    finite = values[: first + 1][np.isfinite(values[: first + 1])]
    if not np.all(np.diff(finite) <= 1e-12 * np.abs(finite[:-1])):
        logger.warning("CRB is not monotone in the blend, using the grid scan result")
        return float(scan[first])
    low, high = float(scan[first - 1]), float(scan[first])
    while high - low > BLEND_TOLERANCE:
        middle = 0.5 * (low + high)
        if crb_at(middle) <= t_crb:
            high = middle
        else:
            low = middle
    return high
