"""HTTP inference service over a trained checkpoint.

JSON in, JSON out, images as base64 PNG. Handlers are pure functions of the
immutable checkpoint, the request body, and the client-supplied seed, so
replaying a request yields byte-identical responses regardless of
concurrency. Malformed bodies return 400, unknown samples 404, out-of-range
labels/dims 422; valid inputs never produce 500.
"""

from __future__ import annotations

import base64
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import evaluation as E
from .config import TrainConfig, resolve_datasets, resolve_likelihood
from .imaging import png_bytes, tile_grid, to_u8
from .model import predict
from .tensor import Tensor
from .training import Checkpoint, load_checkpoint

SAMPLE_CACHE_SIZE = 512


class ServiceState:
    """Immutable model plus a cache of test samples for the UI."""

    def __init__(self, checkpoint: Checkpoint, dataset=None):
        self.checkpoint = checkpoint
        self.model = checkpoint.build_model()
        self.layout = self.model.layout
        if dataset is None:
            dataset = self._try_load_dataset(checkpoint)
        if dataset is not None:
            n = min(SAMPLE_CACHE_SIZE, dataset.n)
            self.images = dataset.flat_images()[:n]
            self.labels = dataset.labels[:n]
            self.image_shape = dataset.image_shape
        else:
            self.images = np.zeros((0, self.model.cfg.input_dim))
            self.labels = np.zeros((0, self.layout.L))
            self.image_shape = tuple(self.model.cfg.image_shape)
        self.dataset_kind = checkpoint.config.get("dataset", {}).get("kind",
                                                                     "unknown")

    @staticmethod
    def _try_load_dataset(checkpoint):
        try:
            cfg = TrainConfig.from_json(checkpoint.config)
            _, test = resolve_datasets(cfg)
            if test is not None and resolve_likelihood(cfg) == "bernoulli":
                test = test.binarized()
            return test
        except Exception:
            return None

    def sample(self, sample_id: int) -> np.ndarray:
        if not 0 <= sample_id < self.images.shape[0]:
            raise KeyError(sample_id)
        return self.images[sample_id]


def _b64png(img2d: np.ndarray) -> str:
    return base64.b64encode(png_bytes(to_u8(img2d))).decode("ascii")


class EncodeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    sample_id: Optional[int] = None
    image: Optional[list] = None


class DecodeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    z: list


class ReconstructRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    sample_id: Optional[int] = None
    image: Optional[list] = None


class InterveneRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    sample_id: int
    label: int
    value: int = 1
    mode: str = "resample"
    seed: int = 0
    set_value: float = 0.0


class TraverseRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    sample_id: int
    dim_i: int
    dim_j: int
    lo: float = -3.0
    hi: float = 3.0
    grid: int = 8


class GenerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    y: list
    n: int = 1
    fix_znotc: bool = False
    seed: int = 0


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message


def build_app(state: ServiceState, cors: bool = False,
              log_requests: bool = False) -> FastAPI:
    app = FastAPI(title="revae inference service", docs_url=None,
                  redoc_url=None)
    if cors:
        from fastapi.middleware.cors import CORSMiddleware
        app.add_middleware(CORSMiddleware, allow_origins=["*"],
                           allow_methods=["*"], allow_headers=["*"])

    if log_requests:
        import json as _json
        import sys
        import time as _time

        @app.middleware("http")
        async def _log(request: Request, call_next):
            t0 = _time.perf_counter()
            response = await call_next(request)
            print(_json.dumps({
                "method": request.method,
                "path": request.url.path,
                "status": response.status_code,
                "ms": round(1000 * (_time.perf_counter() - t0), 2),
            }), file=sys.stderr, flush=True)
            return response

    @app.exception_handler(RequestValidationError)
    async def _schema_error(request: Request, exc):
        return JSONResponse(status_code=400,
                            content={"error": "schema", "detail": str(exc)})

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"error": exc.message})

    @app.exception_handler(Exception)
    async def _unexpected(request: Request, exc):
        # Total functions only: anything unexpected maps to a client error,
        # never a 500.
        return JSONResponse(status_code=400,
                            content={"error": f"bad request ({type(exc).__name__})"})

    model = state.model
    lay = state.layout

    def _resolve_image(sample_id, image) -> np.ndarray:
        if (sample_id is None) == (image is None):
            raise ApiError(400, "provide exactly one of sample_id or image")
        if sample_id is not None:
            try:
                return state.sample(sample_id)
            except KeyError:
                raise ApiError(404, f"sample {sample_id} not cached")
        arr = np.asarray(image, dtype=np.float64).reshape(-1)
        if arr.size != model.cfg.input_dim:
            raise ApiError(422, f"image must have {model.cfg.input_dim} pixels")
        if not np.all(np.isfinite(arr)):
            raise ApiError(422, "image must be finite")
        return np.clip(arr, 0.0, 1.0)

    @app.get("/model/info")
    def model_info():
        return {
            "labels": list(lay.labels),
            "m_c": lay.m_c,
            "m_notc": lay.m_notc,
            "layout": lay.to_json(),
            "dataset": state.dataset_kind,
            "likelihood": model.cfg.likelihood,
            "image_shape": list(state.image_shape),
            "n_samples": int(state.images.shape[0]),
        }

    @app.get("/samples")
    def samples():
        h, w = state.image_shape
        return {
            "ids": list(range(state.images.shape[0])),
            "thumbnails": [_b64png(img.reshape(h, w))
                           for img in state.images],
            "labels": state.labels.tolist(),
        }

    @app.post("/encode")
    def encode(req: EncodeRequest):
        x = _resolve_image(req.sample_id, req.image)
        q = model.encode(Tensor(x[None, :]))
        probs = predict(model, Tensor(x[None, :]), 16,
                        np.random.default_rng(0))
        if lay.is_multiclass:
            probs = probs[0][0]
        else:
            probs = probs[0]
        return {
            "mu": q.mu.values[0].tolist(),
            "sigma": np.exp(q.log_sigma.values[0]).tolist(),
            "labels_pred": np.asarray(probs).tolist(),
        }

    @app.post("/decode")
    def decode(req: DecodeRequest):
        z = np.asarray(req.z, dtype=np.float64).reshape(-1)
        if z.size != lay.m:
            raise ApiError(422, f"z must have {lay.m} entries")
        if not np.all(np.isfinite(z)):
            raise ApiError(422, "z must be finite")
        return {"image": _b64png(E.decode_image(model, z))}

    @app.post("/reconstruct")
    def reconstruct(req: ReconstructRequest):
        x = _resolve_image(req.sample_id, req.image)
        z = E.posterior_mean(model, x)
        return {"image": _b64png(E.decode_image(model, z)), "z": z.tolist()}

    @app.post("/intervene")
    def intervene(req: InterveneRequest):
        x = _resolve_image(req.sample_id, None)
        if not 0 <= req.label < lay.L:
            raise ApiError(422, f"label must be in [0, {lay.L})")
        if req.value not in (0, 1):
            raise ApiError(422, "value must be 0 or 1")
        if req.mode not in ("resample", "mean", "set"):
            raise ApiError(422, "mode must be resample, mean, or set")
        if not np.isfinite(req.set_value):
            raise ApiError(422, "set_value must be finite")
        res = E.intervene(model, E.InterventionRequest(
            image=x, label=req.label, value=req.value, mode=req.mode,
            seed=req.seed, set_value=req.set_value))
        return {
            "image": _b64png(res.image),
            "probs_before": res.probs_before.tolist(),
            "probs_after": res.probs_after.tolist(),
            "z": res.z_after.tolist(),
        }

    @app.post("/traverse")
    def traverse_endpoint(req: TraverseRequest):
        x = _resolve_image(req.sample_id, None)
        for d in (req.dim_i, req.dim_j):
            if not 0 <= d < lay.L:
                raise ApiError(422, f"dim must be in [0, {lay.L})")
        if not 2 <= req.grid <= 16:
            raise ApiError(422, "grid must be in [2, 16]")
        if not (np.isfinite(req.lo) and np.isfinite(req.hi)):
            raise ApiError(422, "lo/hi must be finite")
        cells = E.traverse(model, E.TraversalGrid(
            image=x, dim_i=req.dim_i, dim_j=req.dim_j, lo=req.lo,
            hi=req.hi, g=req.grid))
        tiled = tile_grid([cells[r, c] for r in range(req.grid)
                           for c in range(req.grid)], cols=req.grid)
        return {
            "image": base64.b64encode(png_bytes(tiled)).decode("ascii"),
            "grid": req.grid,
            "values": np.linspace(req.lo, req.hi, req.grid).tolist(),
        }

    @app.post("/generate")
    def generate(req: GenerateRequest):
        if not 1 <= req.n <= 64:
            raise ApiError(422, "n must be in [1, 64]")
        y = np.asarray(req.y, dtype=np.float64).reshape(-1)
        if lay.is_multiclass:
            if y.size != 1 or not 0 <= int(y[0]) < lay.num_classes:
                raise ApiError(422, f"y must be one class in [0, {lay.num_classes})")
            y_use = np.array([int(y[0])])
        else:
            if y.size != lay.L or not np.all((y == 0) | (y == 1)):
                raise ApiError(422, f"y must be {lay.L} binary entries")
            y_use = y
        imgs = E.conditional_generate(model, y_use, req.n,
                                      np.random.default_rng(req.seed),
                                      fix_znotc=req.fix_znotc)
        return {"images": [_b64png(im) for im in imgs]}

    return app


def build_app_from_path(ckpt_path, cors: bool = False) -> FastAPI:
    return build_app(ServiceState(load_checkpoint(ckpt_path)), cors=cors)
