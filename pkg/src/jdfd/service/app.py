"""FastAPI service wrapping the core package.

One endpoint per command. Errors come back as HTTP 400 with a structured
``detail`` carrying a stable ``code`` ("config", "io", "numeric") that
clients map to exit codes.
"""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, commands, runtime
from ..config import ConfigError, TrainConfig, parse_config, with_overrides
from ..data import PpmError
from ..training import NumericError
from . import schemas

app = FastAPI(title="jdfd", version=__version__)


def _error_response(code: str, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": {"code": code, "message": str(exc)}})


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError):
    return _error_response("config", exc)


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError):
    code = "io" if isinstance(exc, PpmError) else "config"
    return _error_response(code, exc)


@app.exception_handler(OSError)
async def _os_error(request: Request, exc: OSError):
    return _error_response("io", exc)


@app.exception_handler(NumericError)
async def _numeric_error(request: Request, exc: NumericError):
    return _error_response("numeric", exc)


def _resolve_config(options: schemas.RunOptions) -> TrainConfig:
    config = parse_config(options.config_text) if options.config_text else TrainConfig().validate()
    config = with_overrides(
        config,
        seed=options.seed,
        out_dir=options.out_dir,
        threads=options.threads,
        deterministic=options.deterministic,
    )
    runtime.apply(config.threads, config.deterministic)
    return config


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


@app.post("/gen-data", response_model=schemas.GenDataResponse)
def gen_data(request: schemas.GenDataRequest) -> schemas.GenDataResponse:
    config = _resolve_config(request)
    summaries = commands.run_gen_data(config)
    return schemas.GenDataResponse(
        out_dir=commands.data_dir(config),
        families=[schemas.FamilySummary(**vars(s)) for s in summaries],
    )


@app.post("/train", response_model=schemas.TrainResponse)
def train(request: schemas.TrainRequest) -> schemas.TrainResponse:
    config = _resolve_config(request)
    outcome = commands.run_train(config)
    return schemas.TrainResponse(
        checkpoint=outcome.checkpoint,
        log_csv=outcome.log_csv,
        epochs=[schemas.EpochRow(**vars(row)) for row in outcome.log_rows],
    )


@app.post("/eval", response_model=schemas.EvalResponse)
def eval_checkpoint(request: schemas.EvalRequest) -> schemas.EvalResponse:
    config = _resolve_config(request)
    outcome = commands.run_eval(
        config, request.checkpoint, request.manifest, request.train_family
    )
    report = outcome.report
    return schemas.EvalResponse(
        auc=report.auc,
        n_real=report.n_real,
        n_fake=report.n_fake,
        train_family=report.train_family,
        test_family=report.test_family,
        report_csv=outcome.report_csv,
        roc_csv=outcome.roc_csv,
        scores_csv=outcome.scores_csv,
    )


@app.post("/ablate", response_model=schemas.AblateResponse)
def ablate(request: schemas.AblateRequest) -> schemas.AblateResponse:
    config = _resolve_config(request)
    outcome = commands.run_ablate(config, request.study)
    seen: list[tuple[str, str]] = []
    for row in outcome.result.rows:
        key = (row.variant, row.report.test_family)
        if key not in seen:
            seen.append(key)
    means = [
        schemas.StudyMeanRow(
            variant=variant,
            test_family=test_family,
            mean_auc=outcome.result.mean_auc(variant, test_family),
        )
        for variant, test_family in seen
    ]
    return schemas.AblateResponse(csv_path=outcome.csv_path, means=means)


@app.post("/gradcheck", response_model=schemas.GradcheckResponse)
def gradcheck(request: schemas.GradcheckRequest) -> schemas.GradcheckResponse:
    rows = commands.run_gradcheck(request.threshold, request.corrupt_layer)
    return schemas.GradcheckResponse(
        passed=all(r.passed for r in rows),
        threshold=request.threshold,
        rows=[
            schemas.GradcheckRowModel(layer=r.layer, max_rel_err=r.max_rel_err, passed=r.passed)
            for r in rows
        ],
    )
