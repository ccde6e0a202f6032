"""HTTP/JSON surface over the screening service.

All errors share the {code, message, stage} body; an optional static API
token guards every route when configured.
"""

from __future__ import annotations

from fastapi import Depends, FastAPI, File, Form, Request, UploadFile
from fastapi.responses import JSONResponse

from ..reports import OcrTransportError, UnparseableReportError
from .core import ScreeningService, ServiceConfig, ServiceError


def create_app(service: ScreeningService) -> FastAPI:
    app = FastAPI(title="hemascreen", version="0.1.0")
    app.state.service = service

    async def check_token(request: Request):
        token = service.config.api_token
        if token and request.headers.get("x-api-token") != token:
            raise ServiceError("missing or invalid API token", stage="auth")

    guarded = [Depends(check_token)]

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request, exc: ServiceError):
        status = 401 if exc.stage == "auth" else exc.status
        return JSONResponse(status_code=status, content=exc.body())

    @app.exception_handler(UnparseableReportError)
    async def parse_error_handler(_request, exc):
        return JSONResponse(status_code=422, content={
            "code": "unparseable_report", "message": str(exc), "stage": "reports",
        })

    @app.exception_handler(OcrTransportError)
    async def transport_error_handler(_request, exc):
        return JSONResponse(status_code=502, content={
            "code": "ocr_transport", "message": str(exc), "stage": "reports",
        })

    @app.post("/patients", status_code=201, dependencies=guarded)
    async def create_patient(request: Request):
        payload = await request.json()
        return service.create_patient(payload)

    @app.get("/patients", dependencies=guarded)
    async def list_patients():
        return service.list_patients()

    @app.get("/patients/{patient_id}", dependencies=guarded)
    async def get_patient(patient_id: str):
        return service.get_patient(patient_id)

    @app.post("/patients/{patient_id}/captures", status_code=201, dependencies=guarded)
    async def ingest_capture(patient_id: str, region: str = Form(...),
                             image: UploadFile = File(...)):
        data = await image.read()
        return service.ingest_capture(patient_id, region, data)

    @app.post("/patients/{patient_id}/reports", status_code=201, dependencies=guarded)
    async def ingest_report(patient_id: str, request: Request):
        content_type = request.headers.get("content-type", "")
        if content_type.startswith("multipart/"):
            form = await request.form()
            upload = form.get("image")
            if upload is None:
                raise ServiceError("multipart report needs an image part",
                                   stage="reports")
            return service.ingest_report(patient_id,
                                         image_bytes=await upload.read())
        payload = await request.json()
        return service.ingest_report(patient_id, payload=payload)

    @app.post("/patients/{patient_id}/screenings", status_code=201, dependencies=guarded)
    async def run_screening(patient_id: str):
        return service.run_screening(patient_id)

    @app.get("/patients/{patient_id}/history", dependencies=guarded)
    async def get_history(patient_id: str):
        return service.get_history(patient_id)

    @app.post("/admin/retrain", dependencies=guarded)
    async def retrain(request: Request):
        body = await request.body()
        min_new = None
        if body:
            payload = await request.json()
            min_new = payload.get("min_new")
        return service.retrain(min_new)

    @app.get("/admin/bundle", dependencies=guarded)
    async def bundle_info():
        return service.bundle_info()

    return app


def build_app(config: ServiceConfig, clock=None) -> FastAPI:
    return create_app(ScreeningService(config, clock=clock))
