"""
Command line for the OTFS-ISAC link simulator.

    python cli.py simulate --config scenarios/reference.env --out results --plot
    python cli.py sense --config scenarios/reference.env --snr 10
    python cli.py design --config scenarios/reference.env --tcrb 1e-3
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from app.core.config import settings
from app.core.errors import SimulationError
from app.services.results_writer import emit_results
from app.services.scenario_loader import load_scenario
from app.services.simulation import design_for_scenario, run_simulation, sense_targets

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="OTFS-ISAC delay-Doppler link-level simulator")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL, help="Logging level (default from settings)")
    subparsers = parser.add_subparsers(dest="command", required=True, help="Command to run")

    sim_parser = subparsers.add_parser("simulate", help="Run the BER/SNR sweep and write results")
    sim_parser.add_argument("--config", required=True, help="Scenario config file")
    sim_parser.add_argument("--snr", help="Comma-separated SNR grid in dB (overrides the config)")
    sim_parser.add_argument("--trials", type=int, help="Monte-Carlo trials (overrides the config)")
    sim_parser.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    sim_parser.add_argument("--workers", type=int, help="Trial-level worker threads")
    sim_parser.add_argument("--out", default=settings.DEFAULT_OUTPUT_DIR, help="Output directory")
    sim_parser.add_argument("--plot", action="store_true", help="Also write the BER curve")

    sense_parser = subparsers.add_parser("sense", help="Single-shot sensing report")
    sense_parser.add_argument("--config", required=True, help="Scenario config file")
    sense_parser.add_argument("--snr", type=float, help="SNR in dB (default: highest grid point)")

    design_parser = subparsers.add_parser("design", help="CRB-constrained power allocation")
    design_parser.add_argument("--config", required=True, help="Scenario config file")
    design_parser.add_argument("--tcrb", type=float, required=True, help="CRB threshold T_CRB")
    design_parser.add_argument("--snr", type=float, help="SNR in dB (default: first grid point)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s [%(levelname)s] %(name)s: %(message)s")

    try:
        if args.command == "simulate":
            overrides = {"snr_grid_db": args.snr, "trials": args.trials, "seed": args.seed, "workers": args.workers}
            cfg = load_scenario(args.config, overrides)
            records = run_simulation(cfg, workers=cfg.workers)
            paths = emit_results(records, args.out, cfg, plot=args.plot)
            print(json.dumps(paths, indent=2))
        elif args.command == "sense":
            report = sense_targets(load_scenario(args.config), args.snr)
            print(report.model_dump_json(indent=2))
        elif args.command == "design":
            result = design_for_scenario(load_scenario(args.config), args.tcrb, args.snr)
            print(result.model_dump_json(indent=2))
    except SimulationError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
