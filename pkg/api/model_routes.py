from pathlib import Path
from typing import List, Optional

from fastapi import APIRouter, File, HTTPException, Request, UploadFile
from pydantic import BaseModel, Field

from core.errors import DiffusionClassifierError
from core.experiment_engine import ExperimentEngine
from data import decode_dataset

from . import get_engine, http_error

router = APIRouter(prefix="/api/model", tags=["model"])


class LoadRequest(BaseModel):
    checkpoint: str


class PredictRequest(BaseModel):
    pixels: List  # nested [ch][H][W] (or [H][W] for one channel)
    n_samples: Optional[int] = Field(None, ge=1)
    seed: Optional[int] = None


@router.post("/load")
async def load_model(request: Request, body: LoadRequest):
    """Load a diffusion checkpoint into the served engine."""
    if not Path(body.checkpoint).exists():
        raise HTTPException(status_code=404, detail=f"Checkpoint not found: {body.checkpoint}")
    try:
        engine = ExperimentEngine.from_checkpoint(body.checkpoint)
    except DiffusionClassifierError as e:
        raise http_error(e)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error loading checkpoint: {e}")
    request.app.state.engine = engine
    return {
        "status": "Model loaded",
        "checkpoint": body.checkpoint,
        "config_hash": engine.config_hash,
        "class_names": engine.class_names,
    }


@router.post("/predict")
async def predict(request: Request, body: PredictRequest):
    """Class label and probabilities for one image."""
    engine = get_engine(request)
    try:
        return engine.predict(body.pixels, n_samples=body.n_samples, seed=body.seed)
    except DiffusionClassifierError as e:
        raise http_error(e)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=f"Invalid pixels: {e}")
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error predicting: {e}")


@router.post("/predict_file")
async def predict_file(request: Request, file: UploadFile = File(...),
                       n_samples: Optional[int] = None, seed: Optional[int] = None):
    """One prediction per image of an uploaded DSET file."""
    engine = get_engine(request)
    try:
        dataset = decode_dataset(await file.read(), source=file.filename or "upload",
                                 class_names=None, require_all_classes=False)
        classifier = engine.require_classifier()
        n_samples = n_samples or engine.config.inference.n_samples
        seed = engine.config.train_seed('inference') if seed is None else seed
        result = classifier.predict_batch(dataset.images, n_samples, seed)
    except DiffusionClassifierError as e:
        raise http_error(e)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Error predicting file: {e}")
    names = engine.class_names
    return {
        "count": len(dataset),
        "config_hash": engine.config_hash,
        "predictions": [
            {"index": i, "label": int(label), "class_name": names[int(label)], "probs": probs.tolist()}
            for i, (label, probs) in enumerate(zip(result.labels, result.probs))
        ],
    }
