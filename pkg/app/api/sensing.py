import logging
from typing import Optional

from fastapi import APIRouter, HTTPException, Query

from app.core.errors import SimulationError
from app.schemas.results import SensingReport
from app.schemas.scenario import ScenarioConfig
from app.services import simulation

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/report", response_model=SensingReport)
def sensing_report(scenario: ScenarioConfig, snr_db: Optional[float] = Query(None)):
    """
    Single-shot delay/Doppler/angle estimates for every target
    """
    try:
        return simulation.sense_targets(scenario, snr_db)
    except SimulationError as e:
        logger.error(f"Sensing request failed: {e}")
        raise HTTPException(status_code=400, detail=str(e))
