from fastapi import HTTPException, Request

from core.errors import CheckpointError, ConfigurationError, DiffusionClassifierError, ShapeError, UsageError

CLIENT_ERRORS = (UsageError, ConfigurationError, ShapeError, CheckpointError)


def get_engine(request: Request):
    """The served ExperimentEngine, or 404 when nothing is loaded."""
    engine = getattr(request.app.state, 'engine', None)
    if engine is None:
        raise HTTPException(status_code=404, detail="No model loaded")
    return engine


def http_error(exc: DiffusionClassifierError) -> HTTPException:
    status = 400 if isinstance(exc, CLIENT_ERRORS) else 500
    return HTTPException(status_code=status, detail=exc.to_dict())
