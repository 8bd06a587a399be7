import logging

from fastapi import APIRouter, HTTPException

from app.core.errors import SimulationError
from app.schemas.results import DesignRequest, DesignResult
from app.services import simulation

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/allocate", response_model=DesignResult)
def allocate_power(request: DesignRequest):
    """
    CRB-constrained DD power allocation for the scenario's first UE
    """
    try:
        return simulation.design_for_scenario(request.scenario, request.t_crb, request.snr_db)
    except SimulationError as e:
        logger.error(f"Design request failed: {e}")
        raise HTTPException(status_code=400, detail=str(e))
