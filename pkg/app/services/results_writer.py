"""
Service module for simulation outputs.
Aggregates block records per scheme and SNR and writes records.csv,
summary.json and the BER-vs-SNR plot.
"""

import json
import logging
import math
import os
from typing import Any, Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from app.core.config import settings  # noqa: E402
from app.core.errors import ResultsWriteError  # noqa: E402
from app.schemas.results import RECORD_COLUMNS, BlockRecord  # noqa: E402
from app.schemas.scenario import SCHEME_ORDER, ScenarioConfig  # noqa: E402
from app.services.metrics_design import bpsk_theoretical_ber, snr_at_ber  # noqa: E402

logger = logging.getLogger(__name__)

TARGET_BER = 1e-3
# Floor for drawing zero-error points on a log axis
PLOT_BER_FLOOR = 1e-7


def records_frame(records: Sequence[BlockRecord]) -> pd.DataFrame:
    return pd.DataFrame([record.model_dump() for record in records])


def _json_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def _ordered_schemes(frame: pd.DataFrame) -> List[str]:
    present = set(frame["scheme"])
    return [scheme for scheme in SCHEME_ORDER if scheme in present]


def summarize(records: Sequence[BlockRecord], cfg: ScenarioConfig) -> Dict[str, Any]:
    """
    Per-scheme, per-SNR aggregates of the block records.

    Args:
        records: Records of one simulation run.
        cfg: Scenario that produced them.

    Returns:
        dict: BER, analytic BPSK reference (normalized mode), bin/angle
        recovery rates, position error, SNR at BER 1e-3 and the gap to the
        ideal scheme, plus the scenario echo and seed.
    """
    if not records:
        raise ValueError("no records to summarize")
    frame = records_frame(records)
    frame["bins_recovered"] = (frame["l_hat"] == frame["l_true"]) & (frame["k_hat"] == frame["k_true"])
    frame["angle_error_deg"] = (frame["theta_hat_deg"] - frame["theta_true_deg"]).abs()

    schemes: Dict[str, Any] = {}
    for scheme in _ordered_schemes(frame):
        grouped = frame[frame["scheme"] == scheme].groupby("snr_db", sort=True)
        table = grouped.agg(
            bits_sent=("bits_sent", "sum"),
            bit_errors=("bit_errors", "sum"),
            blocks=("block", "count"),
            bin_recovery_rate=("bins_recovered", "mean"),
            mean_angle_error_deg=("angle_error_deg", "mean"),
            mean_position_error_m=("position_error_m", "mean"),
        ).reset_index()
        table["ber"] = table["bit_errors"] / table["bits_sent"]
        if cfg.snr_mode == "normalized":
            table["ber_theory"] = bpsk_theoretical_ber(10 ** (table["snr_db"] / 10.0))
        schemes[scheme] = {
            "points": table.to_dict(orient="records"),
            "snr_at_ber_1e-3": snr_at_ber(table["snr_db"], table["ber"], TARGET_BER),
        }

    if "ideal" in schemes:
        reference = schemes["ideal"]["snr_at_ber_1e-3"]
        for entry in schemes.values():
            entry["gap_to_ideal_db"] = entry["snr_at_ber_1e-3"] - reference

    return _json_safe(
        {
            "seed": cfg.seed,
            "snr_mode": cfg.snr_mode,
            "target_ber": TARGET_BER,
            "schemes": schemes,
            "config": cfg.model_dump(),
        }
    )


def plot_ber(summary: Dict[str, Any], path: str):
    fig, ax = plt.subplots(figsize=(5, 3.8))
    theory_drawn = False
    for scheme, entry in summary["schemes"].items():
        points = [point for point in entry["points"] if isinstance(point["snr_db"], (int, float))]
        snr = [point["snr_db"] for point in points]
        ax.semilogy(snr, [max(point["ber"], PLOT_BER_FLOOR) for point in points], "o-", lw=1.2, ms=4, label=scheme)
        if not theory_drawn and points and points[0].get("ber_theory") is not None:
            ax.semilogy(snr, [point["ber_theory"] for point in points], "k--", lw=0.8, label="BPSK theory")
            theory_drawn = True
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("BER")
    ax.grid(True, which="both", ls="--", alpha=0.3)
    ax.legend()
    fig.savefig(path, format=settings.PLOT_FORMAT, bbox_inches="tight", metadata={"Date": None})
    plt.close(fig)


def emit_results(
    records: Sequence[BlockRecord],
    out_dir: str,
    cfg: ScenarioConfig,
    plot: bool = False,
) -> Dict[str, str]:
    """
    Write records.csv, summary.json and optionally the BER plot.

    Args:
        records: Records of one simulation run.
        out_dir: Output directory, created when missing.
        cfg: Scenario echoed into the summary.
        plot: Also draw ber_curve.svg.

    Returns:
        dict: Paths of the written files keyed by kind.
    """
    if not records:
        raise ValueError("no records to write")
    summary = summarize(records, cfg)
    paths = {
        "records": os.path.join(out_dir, "records.csv"),
        "summary": os.path.join(out_dir, "summary.json"),
    }
    try:
        os.makedirs(out_dir, exist_ok=True)
        ordered = sorted(records, key=lambda record: record.sort_key)
        records_frame(ordered)[RECORD_COLUMNS].to_csv(
            paths["records"], index=False, float_format="%.6f", lineterminator="\n"
        )
        with open(paths["summary"], "w") as f:
            json.dump(summary, f, indent=2, allow_nan=False)
        if plot:
            paths["plot"] = os.path.join(out_dir, f"ber_curve.{settings.PLOT_FORMAT}")
            plot_ber(summary, paths["plot"])
    except OSError as e:
        raise ResultsWriteError(f"cannot write results to {out_dir}: {e}") from e
    for kind, path in paths.items():
        logger.info(f"Wrote {kind} to {path}")
    return paths
