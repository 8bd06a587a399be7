import logging
from typing import Any, Dict

from fastapi import APIRouter, Depends, HTTPException

from app.core.deps import get_worker_count
from app.core.errors import SimulationError
from app.schemas.scenario import ScenarioConfig
from app.services import results_writer, simulation

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/run", response_model=Dict[str, Any])
def run_simulation(scenario: ScenarioConfig, workers: int = Depends(get_worker_count)):
    """
    Run every configured scheme and return the per-scheme summary
    (nothing is written to disk)
    """
    try:
        records = simulation.run_simulation(scenario, workers=scenario.workers or workers)
        return results_writer.summarize(records, scenario)
    except SimulationError as e:
        logger.error(f"Simulation request failed: {e}")
        raise HTTPException(status_code=400, detail=str(e))
