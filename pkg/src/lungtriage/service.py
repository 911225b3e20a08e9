"""Local HTTP service backing the interactive annotation loop.

Routes (all JSON unless noted):

    GET  /api/health                          service + checkpoint fingerprints
    POST /api/cases                           NIfTI bytes -> {case_id}
    POST /api/cases/{id}/truth?scheme=seg4    NIfTI mask bytes for Dice reporting
    POST /api/cases/{id}/classify             class probabilities + label
    POST /api/cases/{id}/segment              clicks -> {mask_id, voxel counts, dice?}
    GET  /api/cases/{id}/masks/{mask_id}      gzip+base64 label array
    GET  /api/cases/{id}/slices/{axis}/{i}    PNG, ?overlay=<mask_id> tints labels

Single process, models loaded once at startup, no auth: a local tool.
Payloads match the library calls exactly; rendered slices are
byte-identical to export_overlay output.
"""

from __future__ import annotations

import base64
import gzip
import hashlib
import threading
import uuid

import numpy as np
from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import nifti
from .classifier import classify_volume
from .errors import ClickOutOfBoundsError, LungTriageError
from .labels import SEG_SCHEME_LABELS
from .metrics import dice
from .overlay import encode_png, render_overlay
from .segmenter import DEFAULT_GUIDANCE_SIGMA, GuidanceClick, make_guidance_maps, segment
from .training import load_model
from .volume import SegmentationMask, Volume3D

DEFAULT_MAX_UPLOAD = 256 * 1024 * 1024


class ClickIn(BaseModel):
    x: int
    y: int
    z: int
    polarity: str = Field(pattern="^(positive|negative)$")


class SegmentRequest(BaseModel):
    clicks: list[ClickIn] = Field(default_factory=list)
    scheme: str = "seg4"
    reset: bool = False
    sigma_vox: float = DEFAULT_GUIDANCE_SIGMA


class SessionCase:
    """Server-side state for one uploaded study."""

    def __init__(self, case_id: str, volume: Volume3D):
        self.case_id = case_id
        self.volume = volume
        self.clicks: list[GuidanceClick] = []
        self.masks: dict[str, SegmentationMask] = {}
        self.latest_mask_id: str | None = None
        self.truth: dict[str, SegmentationMask] = {}
        self.lock = threading.Lock()


def checkpoint_fingerprint(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def create_app(classifier_ckpt=None, segmenter_ckpts=None,
               max_upload_bytes: int = DEFAULT_MAX_UPLOAD) -> FastAPI:
    """Build the service; segmenter_ckpts maps scheme -> checkpoint path."""
    app = FastAPI(title="lungtriage", docs_url=None, redoc_url=None)
    cases: dict[str, SessionCase] = {}
    fingerprints: dict[str, str | None] = {"classifier": None, "seg2": None, "seg4": None}

    classifier = None
    if classifier_ckpt is not None:
        classifier, _ = load_model(classifier_ckpt, expect_kind="classifier3")
        fingerprints["classifier"] = checkpoint_fingerprint(classifier_ckpt)
    segmenters = {}
    for scheme, path in (segmenter_ckpts or {}).items():
        segmenters[scheme], _ = load_model(path, expect_kind=scheme)
        fingerprints[scheme] = checkpoint_fingerprint(path)

    def error(status: int, message: str, **extra):
        return JSONResponse({"error": message, **extra}, status_code=status)

    def get_case(case_id: str) -> SessionCase | None:
        return cases.get(case_id)

    @app.get("/api/health")
    def health():
        return {"status": "ok", "checkpoints": fingerprints, "cases": len(cases)}

    @app.post("/api/cases", status_code=201)
    async def upload_case(request: Request):
        body = await request.body()
        if len(body) > max_upload_bytes:
            return error(413, f"upload exceeds {max_upload_bytes} bytes")
        try:
            voxels, spacing, origin, orientation = nifti.parse_nifti_bytes(body, name="upload")
            volume = Volume3D(voxels.astype(np.float32), spacing, origin, orientation)
        except (LungTriageError, ValueError) as exc:
            return error(400, f"malformed volume: {exc}")
        case_id = uuid.uuid4().hex[:12]
        cases[case_id] = SessionCase(case_id, volume)
        return {"case_id": case_id, "shape": list(volume.shape)}

    @app.post("/api/cases/{case_id}/truth")
    async def upload_truth(case_id: str, request: Request, scheme: str = Query("seg4")):
        case = get_case(case_id)
        if case is None:
            return error(404, f"unknown case {case_id}")
        if scheme not in SEG_SCHEME_LABELS:
            return error(400, f"unknown scheme {scheme}")
        body = await request.body()
        if len(body) > max_upload_bytes:
            return error(413, f"upload exceeds {max_upload_bytes} bytes")
        try:
            voxels, _, _, _ = nifti.parse_nifti_bytes(body, name="truth upload")
            mask = SegmentationMask(np.rint(voxels).astype(np.int64), scheme)
        except (LungTriageError, ValueError) as exc:
            return error(400, f"malformed mask: {exc}")
        if mask.shape != case.volume.shape:
            return error(422, f"mask shape {mask.shape} does not match volume {case.volume.shape}")
        with case.lock:
            case.truth[scheme] = mask
        return {"case_id": case_id, "scheme": scheme}

    @app.post("/api/cases/{case_id}/classify")
    def classify(case_id: str):
        case = get_case(case_id)
        if case is None:
            return error(404, f"unknown case {case_id}")
        if classifier is None:
            return error(503, "no classifier checkpoint loaded")
        probs, label = classify_volume(classifier, case.volume)
        return {"case_id": case_id, "probabilities": probs.p, "label": label}

    @app.post("/api/cases/{case_id}/segment")
    def segment_case(case_id: str, req: SegmentRequest):
        case = get_case(case_id)
        if case is None:
            return error(404, f"unknown case {case_id}")
        model = segmenters.get(req.scheme)
        if model is None:
            return error(503, f"no segmenter checkpoint loaded for scheme {req.scheme}")
        new_clicks = [GuidanceClick((c.x, c.y, c.z), c.polarity) for c in req.clicks]
        with case.lock:
            clicks = new_clicks if req.reset else case.clicks + new_clicks
            try:
                guidance = make_guidance_maps(clicks, case.volume.shape, req.sigma_vox)
            except ClickOutOfBoundsError as exc:
                # index reported relative to this request's click list
                offending = exc.click_index - (0 if req.reset else len(case.clicks))
                return error(422, str(exc), click_index=offending)
            case.clicks = clicks
            _, mask = segment(model, case.volume, guidance)
            mask_id = hashlib.sha256(
                mask.labels.tobytes() + req.scheme.encode()
            ).hexdigest()[:16]
            case.masks[mask_id] = mask
            case.latest_mask_id = mask_id
            truth = case.truth.get(req.scheme)
        ids, counts = np.unique(mask.labels, return_counts=True)
        payload = {
            "case_id": case_id,
            "mask_id": mask_id,
            "scheme": req.scheme,
            "click_count": len(clicks),
            "per_label_voxel_counts": {int(i): int(c) for i, c in zip(ids, counts)},
        }
        if truth is not None:
            payload["dice"] = {
                str(lid): dice(mask, truth, lid) for lid in SEG_SCHEME_LABELS[req.scheme]
            }
        return payload

    @app.get("/api/cases/{case_id}/masks/{mask_id}")
    def get_mask(case_id: str, mask_id: str):
        case = get_case(case_id)
        if case is None:
            return error(404, f"unknown case {case_id}")
        mask = case.masks.get(mask_id)
        if mask is None:
            return error(404, f"unknown mask {mask_id}")
        packed = gzip.compress(mask.labels.astype(np.uint8).tobytes(), mtime=0)
        return {
            "mask_id": mask_id,
            "scheme": mask.scheme,
            "shape": list(mask.shape),
            "dtype": "uint8",
            "encoding": "gzip+base64",
            "data": base64.b64encode(packed).decode("ascii"),
        }

    @app.get("/api/cases/{case_id}/slices/{axis}/{index}")
    def get_slice(case_id: str, axis: str, index: int, overlay: str | None = None):
        case = get_case(case_id)
        if case is None:
            return error(404, f"unknown case {case_id}")
        if axis not in ("x", "y", "z"):
            return error(400, f"axis must be x, y or z, got {axis!r}")
        mask = None
        if overlay is not None:
            mask = case.masks.get(overlay)
            if mask is None:
                return error(404, f"unknown mask {overlay}")
        try:
            rgb = render_overlay(case.volume, mask, axis, index)
        except IndexError as exc:
            return error(416, str(exc))
        return Response(content=encode_png(rgb), media_type="image/png")

    return app
