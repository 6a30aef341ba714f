from fastapi import FastAPI

from api import experiment_routes, model_routes

app = FastAPI(title="Diffusion Classifier Service")
app.include_router(experiment_routes.router)
app.include_router(model_routes.router)

# Served engine; set by `cli.py serve` or POST /api/model/load
app.state.engine = None


@app.get("/health")
async def health_check():
    """Health check endpoint."""
    engine = app.state.engine
    return {
        "status": "healthy",
        "model_loaded": engine is not None and engine.classifier is not None,
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="127.0.0.1", port=8000)
