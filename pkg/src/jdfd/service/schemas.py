"""Request and response models for the jdfd service API."""
from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class RunOptions(BaseModel):
    """Common request fields; non-null values override the config file."""

    config_text: str | None = Field(default=None, description="Contents of a key = value config file")
    seed: int | None = None
    out_dir: str | None = None
    threads: int | None = None
    deterministic: bool | None = None


class GenDataRequest(RunOptions):
    pass


class FamilySummary(BaseModel):
    family: str
    n_train: int
    n_test: int
    train_manifest: str
    test_manifest: str


class GenDataResponse(BaseModel):
    out_dir: str
    families: list[FamilySummary]


class TrainRequest(RunOptions):
    pass


class EpochRow(BaseModel):
    epoch: int
    l_cro: float
    l_rec: float
    l_total: float
    lr_cae: float
    lr_cls: float


class TrainResponse(BaseModel):
    checkpoint: str
    log_csv: str
    epochs: list[EpochRow]


class EvalRequest(RunOptions):
    checkpoint: str
    manifest: str
    train_family: str = "?"


class EvalResponse(BaseModel):
    auc: float
    n_real: int
    n_fake: int
    train_family: str
    test_family: str
    report_csv: str
    roc_csv: str
    scores_csv: str


class AblateRequest(RunOptions):
    study: Literal["decoder", "augmentation"]


class StudyMeanRow(BaseModel):
    variant: str
    test_family: str
    mean_auc: float


class AblateResponse(BaseModel):
    csv_path: str
    means: list[StudyMeanRow]


class GradcheckRequest(BaseModel):
    threshold: float = 1e-4
    # Fault injection for negative-control tests of the harness itself.
    corrupt_layer: str | None = None


class GradcheckRowModel(BaseModel):
    layer: str
    max_rel_err: float
    passed: bool


class GradcheckResponse(BaseModel):
    passed: bool
    threshold: float
    rows: list[GradcheckRowModel]


class HealthResponse(BaseModel):
    status: str
    version: str
