import logging

import uvicorn
from config import get_settings, init_sentry, setup_logging
from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from routes.router import central_router
from sentry_sdk.integrations.asgi import SentryAsgiMiddleware
from starlette.requests import Request
from util.exception import SimulationError

setup_logging()

app = FastAPI(
    title="Keep-alive Simulator API",
    version="1.0.1",
    swagger_ui_parameters={"defaultModelsExpandDepth": -1},
)

app.include_router(central_router, prefix=f"/{get_settings().api_endpoint_version}")

# Add CORS middleware

origins = [
    "*",
]

app.add_middleware(
    CORSMiddleware,
    allow_origins=origins,
    allow_credentials=True,
    allow_methods=["GET", "POST", "OPTIONS"],
    allow_headers=["*"],
)

# Add Sentry middleware if environment is not local
if init_sentry():
    app.add_middleware(SentryAsgiMiddleware)


@app.get("/")
async def root():
    return {"detail": f"{get_settings().project_name} {get_settings().api_endpoint_version}"}


@app.exception_handler(SimulationError)
async def simulation_error_exception_handler(request: Request, exc: SimulationError):
    return JSONResponse(
        status_code=exc.status_code,
        content={"detail": exc.detail},
    )


@app.exception_handler(Exception)
async def generic_exception_handler(request: Request, exc: Exception):
    detail = "An internal server error occurred."
    logging.error(msg=detail, exc_info=exc)
    return JSONResponse(
        status_code=500,
        content={"detail": detail},
    )


@app.exception_handler(ValueError)
async def value_error_exception_handler(request, exc):
    return JSONResponse(
        status_code=400,
        content={"detail": f"Failed to process request: {str(exc)}"},
    )


@app.exception_handler(RequestValidationError)
async def validation_exception_handler(request, exc):
    try:
        errs = exc.errors()

        messages = []

        for err in errs:
            location = ".".join(str(loc) for loc in err["loc"][1:]) or str(err["loc"][0])
            messages.append(f"{location}: {err['msg']}")

        return JSONResponse(
            status_code=422,
            content={"detail": f"Failed to validate request: {messages}"},
        )
    except Exception:
        return JSONResponse(
            status_code=422,
            content={"detail": f"Failed to validate request: {str(exc)}"},
        )


def serve(host: str | None = None, port: int | None = None) -> None:
    uvicorn.run(
        app=app,
        host=host or get_settings().host,
        port=port or get_settings().port,
    )


# Run the app
if __name__ == "__main__":
    serve()
