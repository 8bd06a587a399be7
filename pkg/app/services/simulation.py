"""
Service module for the block-level link simulation.
Runs the sensing-assisted (proposed) protocol and the ideal and pilot-based
baselines over Monte-Carlo trials and an SNR sweep, and produces the
single-shot sensing report and the waveform design for a scenario.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from itertools import chain
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigError, RankDeficientError
from app.schemas.grid import ArrayConfig, CarrierConfig, DDGrid
from app.schemas.results import BlockRecord, DesignResult, SensingReport, TargetSensingReport
from app.schemas.scenario import ScenarioConfig
from app.services.geometry_channel import (
    DDPath,
    Target,
    add_awgn,
    apply_dd_channel,
    comm_composite_gain,
    comm_path_from_target,
    composite_gain,
    sensing_path_from_target,
)
from app.services.metrics_design import bpsk_demap, bpsk_map, design_allocation
from app.services.otfs_modem import DDFrame, vectorize
from app.services.sensing_estimator import (
    angle_grid,
    crb_h,
    estimate,
    estimate_angle_beamsweep,
    receive_beam_sweep,
)
from app.services.tracking_predictor import (
    TrackState,
    localize,
    precompensate,
    predict_channel,
    predict_state,
    update_track,
)

logger = logging.getLogger(__name__)

DATA_STREAM, SENSING_STREAM, SWEEP_STREAM, DESIGN_STREAM = range(4)


@dataclass(frozen=True)
class LinkContext:
    """Scenario constants shared by every block of a run."""

    grid: DDGrid
    carrier: CarrierConfig
    arrays: ArrayConfig
    power: float
    angles: np.ndarray
    angle_gate: float
    delta_t: float

    @classmethod
    def from_config(cls, cfg: ScenarioConfig, beams: int) -> "LinkContext":
        return cls(
            grid=cfg.grid,
            carrier=cfg.carrier,
            arrays=cfg.arrays,
            power=cfg.tx_power_w / beams,
            angles=angle_grid(cfg.angle_step_deg, cfg.angle_sector_deg),
            # 1.5 sweep steps, widened to the receive beamwidth for small arrays
            angle_gate=max(1.5 * float(np.deg2rad(cfg.angle_step_deg)), 2.0 / cfg.n_rx),
            delta_t=cfg.grid.frame_duration,
        )


@dataclass(frozen=True)
class PilotLayout:
    """Embedded impulse pilot with its guard region."""

    l_p: int
    k_p: int
    max_delay: int
    max_doppler: int
    guard: np.ndarray
    pilot_amplitude: float
    data_amplitude: float

    @property
    def n_data(self) -> int:
        return int(np.count_nonzero(~self.guard))


@dataclass(frozen=True)
class BlockOutcome:
    bits_sent: int
    bit_errors: int
    l_hat: int
    k_hat: int
    theta_hat: float
    position_error: float


def pilot_layout(cfg: ScenarioConfig) -> PilotLayout:
    """
    Pilot at (l_max, N // 2) inside a guard of delay span 2*l_max + 1 and
    Doppler span 4*k_max + 1. Sweep airtime and pilot power come out of the
    same per-frame energy budget as the data.
    """
    grid = cfg.grid
    l_max, k_max = cfg.pilot_max_delay, cfg.pilot_max_doppler
    if 2 * l_max + 1 > grid.M or 4 * k_max + 1 > grid.N:
        raise ConfigError(
            f"pilot guard region ({2 * l_max + 1} x {4 * k_max + 1}) exceeds the {grid.M}x{grid.N} grid"
        )
    l_p, k_p = l_max, grid.N // 2
    guard = np.zeros(grid.shape, dtype=bool)
    rows = np.arange(l_p - l_max, l_p + l_max + 1) % grid.M
    cols = np.arange(k_p - 2 * k_max, k_p + 2 * k_max + 1) % grid.N
    guard[np.ix_(rows, cols)] = True
    n_data = int(np.count_nonzero(~guard))
    budget = (1.0 - cfg.pilot_sweep_energy_fraction) * grid.size
    return PilotLayout(
        l_p=l_p,
        k_p=k_p,
        max_delay=l_max,
        max_doppler=k_max,
        guard=guard,
        pilot_amplitude=float(np.sqrt(cfg.pilot_power_fraction * budget)),
        data_amplitude=float(np.sqrt((1.0 - cfg.pilot_power_fraction) * budget / max(n_data, 1))),
    )


def _heading_vector(heading_deg: Optional[float]) -> Optional[np.ndarray]:
    if heading_deg is None:
        return None
    heading = np.deg2rad(heading_deg)
    return np.array([np.sin(heading), np.cos(heading)])


def _snap_to_delay_bin(position: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    bin_width = cfg.c / (cfg.M * cfg.delta_f)
    distance = np.linalg.norm(position)
    bins = max(1, int(np.round(distance / bin_width)))
    return position * (bins * bin_width / distance)


def build_scene(cfg: ScenarioConfig, trial: int) -> List[Tuple[Target, Optional[np.ndarray]]]:
    """Targets of one trial with their configured headings (None = radial approach)."""
    rng = np.random.default_rng([cfg.seed, trial])
    scene = []
    for spec in cfg.targets:
        position = np.array(spec.position, dtype=float)
        if cfg.exact_grid:
            position = _snap_to_delay_bin(position, cfg)
        speed = rng.uniform(*spec.speed)
        heading = _heading_vector(spec.heading_deg)
        direction = -position / np.linalg.norm(position) if heading is None else heading
        target = Target(
            position=position,
            velocity=speed * direction,
            rcs=spec.rcs,
            is_ue=spec.is_ue,
            carrier_phase=rng.uniform(0.0, 2 * np.pi),
            reflection_phase=rng.uniform(0.0, 2 * np.pi),
        )
        scene.append((target, heading))
    return scene


def _noise_power(signal_power: float, snr_db: float) -> float:
    if np.isposinf(snr_db):
        return 0.0
    return float(signal_power / 10 ** (snr_db / 10.0))


def noise_powers(cfg: ScenarioConfig, ctx: LinkContext, target: Target, snr_db: float) -> Tuple[float, float]:
    """
    (n0, n0_s) for the downlink and the echo.

    In normalized mode snr_db is the per-symbol SNR after ideal beamforming
    at the UE and the per-sample echo SNR (plus the sensing offset). In
    link-budget mode it is the transmit SNR P_tx / n0.
    """
    sensing_snr_db = snr_db + cfg.sensing_snr_offset_db
    if cfg.snr_mode == "link_budget":
        return _noise_power(cfg.tx_power_w, snr_db), _noise_power(cfg.tx_power_w, sensing_snr_db)
    comm = comm_path_from_target(target, ctx.carrier, ctx.grid)
    echo = sensing_path_from_target(target, ctx.carrier, ctx.grid)
    theta = target.angle
    comm_power = abs(comm.gain * comm_composite_gain(theta, theta, theta, ctx.arrays, ctx.power)) ** 2
    echo_power = abs(echo.gain * composite_gain(theta, theta, theta, ctx.arrays, ctx.power)) ** 2
    return _noise_power(comm_power, snr_db), _noise_power(echo_power, sensing_snr_db)


def _count_errors(received: DDFrame, bits: np.ndarray) -> int:
    return int(np.count_nonzero(bpsk_demap(received) != bits))


def _ideal_block(ctx: LinkContext, target: Target, comm: DDPath, bits: np.ndarray, n0: float, rng) -> BlockOutcome:
    theta = target.angle
    gain = comm_composite_gain(theta, theta, theta, ctx.arrays, ctx.power)
    tx = precompensate(bpsk_map(bits, ctx.grid), comm, gain)
    received = add_awgn(apply_dd_channel(tx, [comm], gain), n0, rng)
    return BlockOutcome(ctx.grid.size, _count_errors(received, bits), comm.l, comm.k, theta, 0.0)


def _proposed_block(
    ctx: LinkContext,
    target: Target,
    comm: DDPath,
    track: TrackState,
    bits: np.ndarray,
    n0: float,
    n0_s: float,
    data_rng,
    sensing_rng,
) -> Tuple[BlockOutcome, TrackState]:
    predicted = predict_channel(track, ctx.carrier, ctx.grid)
    beam = track.angle
    compensation = comm_composite_gain(beam, beam, beam, ctx.arrays, ctx.power)
    tx = precompensate(bpsk_map(bits, ctx.grid), predicted, compensation)
    downlink_gain = comm_composite_gain(beam, target.angle, beam, ctx.arrays, ctx.power)
    received = add_awgn(apply_dd_channel(tx, [comm], downlink_gain), n0, data_rng)

    # The same frame doubles as the radar waveform
    echo_path = sensing_path_from_target(target, ctx.carrier, ctx.grid)
    echo_gain = composite_gain(beam, target.angle, beam, ctx.arrays, ctx.power)
    echo = add_awgn(apply_dd_channel(tx, [echo_path], echo_gain), n0_s, sensing_rng)
    sweep = receive_beam_sweep(
        target.angle, beam, echo_path.gain, tx.energy, n0_s, ctx.arrays, ctx.power, ctx.angles, sensing_rng
    )
    measurement = estimate(vectorize(echo), tx, sweep)

    outcome = BlockOutcome(
        bits_sent=ctx.grid.size,
        bit_errors=_count_errors(received, bits),
        l_hat=predicted.l,
        k_hat=predicted.k,
        theta_hat=measurement.theta_hat,
        position_error=float(np.linalg.norm(track.position - target.position)),
    )
    updated = update_track(track, measurement, ctx.carrier, ctx.grid, ctx.angle_gate)
    return outcome, predict_state(updated, ctx.delta_t)


def _pilot_block(
    ctx: LinkContext,
    layout: PilotLayout,
    threshold: float,
    sweep_fraction: float,
    target: Target,
    comm: DDPath,
    bits: np.ndarray,
    n0: float,
    data_rng,
    sweep_rng,
) -> BlockOutcome:
    grid = ctx.grid
    # Transmit beam sweep towards a single UE element
    symbols_per_beam = sweep_fraction * grid.size / ctx.angles.size
    sweep_energy = []
    for beam in ctx.angles:
        noise = np.sqrt(n0 / 2.0) * (sweep_rng.standard_normal() + 1j * sweep_rng.standard_normal())
        signal = comm.gain * comm_composite_gain(beam, target.angle, None, ctx.arrays, ctx.power)
        sweep_energy.append((float(beam), float(abs(signal * np.sqrt(symbols_per_beam) + noise) ** 2)))
    theta_hat = estimate_angle_beamsweep(sweep_energy)

    data_bits = bits[: layout.n_data]
    data_mask = ~layout.guard.reshape(-1, order="F")
    vector = np.zeros(grid.size, dtype=complex)
    vector[data_mask] = layout.data_amplitude * (1.0 - 2.0 * data_bits)
    frame = vector.reshape(grid.shape, order="F")
    frame[layout.l_p, layout.k_p] = layout.pilot_amplitude
    gain = comm_composite_gain(theta_hat, target.angle, theta_hat, ctx.arrays, ctx.power)
    received = add_awgn(apply_dd_channel(DDFrame(grid, frame), [comm], gain), n0, data_rng).symbols

    # Threshold detection inside the pilot window
    rows = np.arange(layout.l_p, layout.l_p + layout.max_delay + 1) % grid.M
    cols = np.arange(layout.k_p - layout.max_doppler, layout.k_p + layout.max_doppler + 1) % grid.N
    window = np.abs(received[np.ix_(rows, cols)]) ** 2
    row, col = np.unravel_index(int(np.argmax(window)), window.shape)
    if window[row, col] > threshold * n0:
        l_hat = int(rows[row] - layout.l_p) % grid.M
        k_hat = int(cols[col] - layout.k_p) % grid.N
        tap = received[rows[row], cols[col]] / layout.pilot_amplitude
    else:
        logger.debug("Pilot below threshold, equalising without a channel estimate")
        l_hat, k_hat, tap = 0, 0, 1.0
    equalised = np.roll(received, (-l_hat, -k_hat), axis=(0, 1)) * np.conj(tap) / abs(tap)
    decisions = (np.real(equalised).reshape(-1, order="F") < 0).astype(np.int8)[data_mask]
    return BlockOutcome(
        bits_sent=layout.n_data,
        bit_errors=int(np.count_nonzero(decisions != data_bits)),
        l_hat=l_hat,
        k_hat=k_hat,
        theta_hat=theta_hat,
        position_error=float("nan"),
    )


def _block_streams(cfg: ScenarioConfig, trial: int, snr_index: int, block: int, target_index: int) -> list:
    # Shared across schemes so every scheme sees the same bits and noise draws
    return [
        np.random.default_rng([cfg.seed, trial, snr_index, block, target_index, stream])
        for stream in (DATA_STREAM, SENSING_STREAM, SWEEP_STREAM)
    ]


def _run_target(
    cfg: ScenarioConfig,
    ctx: LinkContext,
    layout: Optional[PilotLayout],
    scheme: str,
    trial: int,
    snr_index: int,
    target_index: int,
    target: Target,
    heading: Optional[np.ndarray],
) -> List[BlockRecord]:
    snr_db = cfg.snr_grid_db[snr_index]
    n0, n0_s = noise_powers(cfg, ctx, target, snr_db)
    # Detection stage summarised as a perfect-knowledge bootstrap
    track = TrackState.from_target(target, heading=heading)
    records = []
    for block in range(cfg.blocks_per_trial):
        data_rng, sensing_rng, sweep_rng = _block_streams(cfg, trial, snr_index, block, target_index)
        bits = data_rng.integers(0, 2, ctx.grid.size).astype(np.int8)
        comm = comm_path_from_target(target, ctx.carrier, ctx.grid)
        if scheme == "ideal":
            outcome = _ideal_block(ctx, target, comm, bits, n0, data_rng)
        elif scheme == "proposed":
            outcome, track = _proposed_block(ctx, target, comm, track, bits, n0, n0_s, data_rng, sensing_rng)
        else:
            outcome = _pilot_block(
                ctx,
                layout,
                cfg.pilot_threshold,
                cfg.pilot_sweep_energy_fraction,
                target,
                comm,
                bits,
                n0,
                data_rng,
                sweep_rng,
            )
        logger.debug(
            f"{scheme} trial {trial} snr {snr_db} block {block} target {target_index}: "
            f"{outcome.bit_errors}/{outcome.bits_sent} errors, bins ({outcome.l_hat}, {outcome.k_hat}) "
            f"vs ({comm.l}, {comm.k})"
        )
        records.append(
            BlockRecord(
                trial=trial,
                block=block,
                scheme=scheme,
                snr_db=snr_db,
                bits_sent=outcome.bits_sent,
                bit_errors=outcome.bit_errors,
                l_true=comm.l,
                l_hat=outcome.l_hat,
                k_true=comm.k,
                k_hat=outcome.k_hat,
                theta_true_deg=float(np.rad2deg(target.angle)),
                theta_hat_deg=float(np.rad2deg(outcome.theta_hat)),
                position_error_m=outcome.position_error,
                target=target_index,
            )
        )
        target = target.moved(ctx.delta_t)
    return records


def _run_trial(cfg: ScenarioConfig, schemes: Sequence[str], trial: int) -> List[BlockRecord]:
    ctx = LinkContext.from_config(cfg, beams=len(cfg.ue_indices))
    layout = pilot_layout(cfg) if "pilot" in schemes else None
    scene = build_scene(cfg, trial)
    records = []
    for scheme in schemes:
        for snr_index in range(len(cfg.snr_grid_db)):
            for target_index in cfg.ue_indices:
                target, heading = scene[target_index]
                records.extend(
                    _run_target(cfg, ctx, layout, scheme, trial, snr_index, target_index, target, heading)
                )
    return records


def _validate(cfg: ScenarioConfig, schemes: Sequence[str]):
    if not cfg.ue_indices:
        raise ConfigError("scenario has no UE target to carry downlink data")
    if "pilot" in schemes:
        pilot_layout(cfg)


def run_simulation(
    cfg: ScenarioConfig,
    workers: Optional[int] = None,
    schemes: Optional[Sequence[str]] = None,
) -> List[BlockRecord]:
    """
    Run the configured schemes over every SNR point, trial and block.

    Args:
        cfg: Validated scenario.
        workers: Thread-pool size for trial-level parallelism.
        schemes: Subset of schemes to run; defaults to cfg.schemes.

    Returns:
        List[BlockRecord]: Records sorted by (scheme, snr, trial, block, target).
    """
    schemes = list(cfg.schemes if schemes is None else schemes)
    _validate(cfg, schemes)
    workers = workers or cfg.workers or settings.MAX_WORKERS
    logger.info(
        f"Simulating {', '.join(schemes)} over {len(cfg.snr_grid_db)} SNR points, "
        f"{cfg.trials} trials x {cfg.blocks_per_trial} blocks ({workers} workers)"
    )
    with ThreadPoolExecutor(max_workers=workers) as executor:
        batches = list(executor.map(partial(_run_trial, cfg, schemes), range(cfg.trials)))
    records = sorted(chain.from_iterable(batches), key=lambda record: record.sort_key)
    for scheme in schemes:
        scheme_records = [record for record in records if record.scheme == scheme]
        errors = sum(record.bit_errors for record in scheme_records)
        sent = sum(record.bits_sent for record in scheme_records)
        logger.info(f"{scheme}: {errors}/{sent} bit errors over all SNR points")
    return records


def run_proposed(cfg: ScenarioConfig, workers: Optional[int] = None) -> List[BlockRecord]:
    return run_simulation(cfg, workers, schemes=["proposed"])


def run_ideal(cfg: ScenarioConfig, workers: Optional[int] = None) -> List[BlockRecord]:
    return run_simulation(cfg, workers, schemes=["ideal"])


def run_pilot_baseline(cfg: ScenarioConfig, workers: Optional[int] = None) -> List[BlockRecord]:
    return run_simulation(cfg, workers, schemes=["pilot"])


def _sounding_crb(sounding: DDFrame, n0_s: float, gain: complex) -> Optional[float]:
    # None for a noiseless echo or a sounding with a null in its spectrum
    if not n0_s > 0:
        return None
    try:
        return crb_h(sounding, n0_s, gain)
    except RankDeficientError:
        logger.debug("Sounding frame is rank deficient, no CRB reported")
        return None


def sense_targets(cfg: ScenarioConfig, snr_db: Optional[float] = None) -> SensingReport:
    """
    Single-shot echo estimation for every target of trial 0, each sounded by
    a random BPSK frame on a beam pointed at its true angle.
    """
    snr_db = max(cfg.snr_grid_db) if snr_db is None else snr_db
    ctx = LinkContext.from_config(cfg, beams=len(cfg.targets))
    reports = []
    for index, (target, _) in enumerate(build_scene(cfg, 0)):
        _, n0_s = noise_powers(cfg, ctx, target, snr_db)
        data_rng, sensing_rng, _ = _block_streams(cfg, 0, 0, 0, index)
        sounding = bpsk_map(data_rng.integers(0, 2, ctx.grid.size), ctx.grid)
        theta = target.angle
        echo_path = sensing_path_from_target(target, ctx.carrier, ctx.grid)
        echo_gain = composite_gain(theta, theta, theta, ctx.arrays, ctx.power)
        echo = add_awgn(apply_dd_channel(sounding, [echo_path], echo_gain), n0_s, sensing_rng)
        sweep = receive_beam_sweep(
            theta, theta, echo_path.gain, sounding.energy, n0_s, ctx.arrays, ctx.power, ctx.angles, sensing_rng
        )
        measurement = estimate(vectorize(echo), sounding, sweep)
        position = localize(measurement.eta_hat, measurement.theta_hat, cfg.c)
        reports.append(
            TargetSensingReport(
                target=index,
                is_ue=target.is_ue,
                l_true=echo_path.l,
                l_hat=measurement.l_hat,
                k_true=echo_path.k,
                k_hat=measurement.k_hat,
                theta_true_deg=float(np.rad2deg(theta)),
                theta_hat_deg=float(np.rad2deg(measurement.theta_hat)),
                eta_hat_s=measurement.eta_hat,
                phi_hat_hz=measurement.phi_hat,
                range_true_m=target.range,
                range_hat_m=cfg.c * measurement.eta_hat / 2.0,
                radial_speed_true_mps=target.radial_velocity,
                radial_speed_hat_mps=cfg.c * measurement.phi_hat / (2.0 * cfg.f_c),
                position_hat_m=position.tolist(),
                position_error_m=float(np.linalg.norm(position - target.position)),
                peak_magnitude=measurement.peak_magnitude,
                crb_h=_sounding_crb(sounding, n0_s, echo_path.gain * echo_gain),
            )
        )
    logger.info(f"Sensed {len(reports)} targets at {snr_db} dB")
    return SensingReport(
        snr_db=snr_db,
        seed=cfg.seed,
        range_resolution_m=cfg.grid.range_resolution(cfg.c),
        velocity_resolution_mps=cfg.grid.velocity_resolution(cfg.f_c, cfg.c),
        targets=reports,
    )


def design_for_scenario(cfg: ScenarioConfig, t_crb: float, snr_db: Optional[float] = None) -> DesignResult:
    """
    CRB-constrained power design for the first UE target of trial 0, with
    unit average symbol power (transmit power sits in the beamformer).
    """
    snr_db = cfg.snr_grid_db[0] if snr_db is None else snr_db
    if not np.isfinite(snr_db):
        raise ConfigError("waveform design needs a finite SNR")
    index = cfg.ue_indices[0] if cfg.ue_indices else 0
    ctx = LinkContext.from_config(cfg, beams=max(1, len(cfg.ue_indices)))
    target, _ = build_scene(cfg, 0)[index]
    theta = target.angle
    n0, n0_s = noise_powers(cfg, ctx, target, snr_db)
    comm = comm_path_from_target(target, ctx.carrier, ctx.grid)
    echo_path = sensing_path_from_target(target, ctx.carrier, ctx.grid)
    return design_allocation(
        [comm],
        comm_composite_gain(theta, theta, theta, ctx.arrays, ctx.power),
        n0,
        p_total=1.0,
        t_crb=t_crb,
        frames_for_crb=cfg.frames_for_crb,
        rng=np.random.default_rng([cfg.seed, 0, DESIGN_STREAM]),
        grid=ctx.grid,
        sensing_gain=echo_path.gain * composite_gain(theta, theta, theta, ctx.arrays, ctx.power),
        sensing_n0=n0_s,
    )
