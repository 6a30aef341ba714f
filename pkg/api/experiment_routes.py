from fastapi import APIRouter, HTTPException, Request

from core.errors import DiffusionClassifierError

from . import get_engine, http_error

router = APIRouter(prefix="/api/experiment", tags=["experiment"])


@router.get("/state")
async def get_experiment_state(request: Request):
    """Config hashes, schedule, network status, recent TrainLog rows and metrics."""
    engine = get_engine(request)
    try:
        return engine.get_state()
    except DiffusionClassifierError as e:
        raise http_error(e)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error getting experiment state: {e}")
