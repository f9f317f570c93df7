"""Command orchestration: the operations behind the service endpoints.

Each command reads/writes only under the configured output directory:

    <out_dir>/data/<family>/   images + train/test manifests
    <out_dir>/train/           checkpoint.jdfd, train_log.csv
    <out_dir>/eval/            eval_report.csv, roc.csv, scores.csv
    <out_dir>/ablation/        decoder_study.csv or augmentation_study.csv

Every command echoes the effective config next to its artifacts so a run can
be reproduced from its output directory alone.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from . import gradcheck as gradcheck_mod
from .config import TrainConfig, format_config
from .data import (
    DEFAULT_FAMILIES,
    TEST_MANIFEST,
    TRAIN_MANIFEST,
    Sample,
    load_manifest,
    load_samples,
    make_dataset,
)
from .evaluation import (
    EvalReport,
    StudyResult,
    ablate_decoder,
    augmentation_study,
    evaluate,
    write_report_csv,
    write_roc_csv,
    write_scores_csv,
    write_study_csv,
)
from .model import load_params, save_params
from .training import train

CHECKPOINT_NAME = "checkpoint.jdfd"
TRAIN_LOG_NAME = "train_log.csv"


def _family_specs(config: TrainConfig):
    unknown = [f for f in config.families if f not in DEFAULT_FAMILIES]
    if unknown:
        raise FileNotFoundError(
            f"no synthetic family spec for {unknown}; known families: {sorted(DEFAULT_FAMILIES)}"
        )
    return [DEFAULT_FAMILIES[f] for f in config.families]


def data_dir(config: TrainConfig) -> str:
    return os.path.join(config.out_dir, "data")


def _echo_config(config: TrainConfig, directory: str) -> None:
    with open(os.path.join(directory, "effective_config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(config))


@dataclass
class FamilySummary:
    family: str
    n_train: int
    n_test: int
    train_manifest: str
    test_manifest: str


def run_gen_data(config: TrainConfig) -> list[FamilySummary]:
    """Generate every configured family's dataset under <out>/data."""
    root = data_dir(config)
    os.makedirs(root, exist_ok=True)
    _echo_config(config, root)
    half_train = config.train_per_family // 2
    half_test = config.test_per_family // 2
    counts = (half_train, config.train_per_family - half_train,
              half_test, config.test_per_family - half_test)
    summaries = []
    for spec in _family_specs(config):
        train_m, test_m = make_dataset(
            spec, counts, config.seed, root, config.image_size, config.image_size
        )
        summaries.append(FamilySummary(
            family=spec.name,
            n_train=len(train_m.entries),
            n_test=len(test_m.entries),
            train_manifest=os.path.join(root, spec.name, TRAIN_MANIFEST),
            test_manifest=os.path.join(root, spec.name, TEST_MANIFEST),
        ))
    return summaries


def _load_split(config: TrainConfig, family: str, split: str) -> list[Sample]:
    manifest_path = os.path.join(data_dir(config), family, split)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(
            f"missing manifest {manifest_path}; run gen-data first"
        )
    return load_samples(load_manifest(manifest_path), dtype=config.dtype)


@dataclass
class TrainOutcome:
    checkpoint: str
    log_csv: str
    log_rows: list


def run_train(config: TrainConfig) -> TrainOutcome:
    """Train on the configured family; write checkpoint and epoch log."""
    run_dir = os.path.join(config.out_dir, "train")
    os.makedirs(run_dir, exist_ok=True)
    _echo_config(config, run_dir)
    primary = _load_split(config, config.train_family, TRAIN_MANIFEST)
    foreign = []
    if config.foreign_ratio > 0:
        foreign = [
            _load_split(config, family, TRAIN_MANIFEST)
            for family in config.families
            if family != config.train_family
        ]
    result = train(config, primary, foreign)
    checkpoint = os.path.join(run_dir, CHECKPOINT_NAME)
    save_params(result.params, checkpoint)
    log_csv = os.path.join(run_dir, TRAIN_LOG_NAME)
    with open(log_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_cro", "l_rec", "l_total", "lr_cae", "lr_cls"])
        for row in result.log:
            writer.writerow([row.epoch, repr(row.l_cro), repr(row.l_rec),
                             repr(row.l_total), repr(row.lr_cae), repr(row.lr_cls)])
    return TrainOutcome(checkpoint=checkpoint, log_csv=log_csv, log_rows=result.log)


@dataclass
class EvalOutcome:
    report: EvalReport
    report_csv: str
    roc_csv: str
    scores_csv: str


def run_eval(
    config: TrainConfig,
    checkpoint: str,
    manifest: str,
    train_family: str = "?",
) -> EvalOutcome:
    """Evaluate a checkpoint on a labeled manifest; write all report files."""
    eval_dir = os.path.join(config.out_dir, "eval")
    os.makedirs(eval_dir, exist_ok=True)
    _echo_config(config, eval_dir)
    params = load_params(checkpoint, dtype=np.float64)
    samples = load_samples(load_manifest(manifest), dtype=np.float64)
    report = evaluate(params, samples, train_family=train_family)
    report_csv = os.path.join(eval_dir, "eval_report.csv")
    roc_csv = os.path.join(eval_dir, "roc.csv")
    scores_csv = os.path.join(eval_dir, "scores.csv")
    write_report_csv([(report, config.seed)], report_csv)
    write_roc_csv(report.roc(), roc_csv)
    write_scores_csv(report, scores_csv)
    return EvalOutcome(report=report, report_csv=report_csv, roc_csv=roc_csv, scores_csv=scores_csv)


@dataclass
class AblateOutcome:
    csv_path: str
    result: StudyResult


def run_ablate(config: TrainConfig, study: str) -> AblateOutcome:
    """Run one of the two ablation studies and write its CSV."""
    if study not in ("decoder", "augmentation"):
        raise ValueError(f"unknown study {study!r}; expected 'decoder' or 'augmentation'")
    ablation_dir = os.path.join(config.out_dir, "ablation")
    os.makedirs(ablation_dir, exist_ok=True)
    _echo_config(config, ablation_dir)
    test_sets = {
        family: _load_split(config, family, TEST_MANIFEST) for family in config.families
    }
    primary = _load_split(config, config.train_family, TRAIN_MANIFEST)
    if study == "decoder":
        result = ablate_decoder(config, primary, test_sets)
        path = os.path.join(ablation_dir, "decoder_study.csv")
        write_study_csv(result, path, "variant")
    else:
        foreign = [
            _load_split(config, family, TRAIN_MANIFEST)
            for family in config.families
            if family != config.train_family
        ]
        result = augmentation_study(config, primary, foreign, test_sets)
        path = os.path.join(ablation_dir, "augmentation_study.csv")
        write_study_csv(result, path, "ratio")
    return AblateOutcome(csv_path=path, result=result)


def run_gradcheck(threshold: float = 1e-4, corrupt_layer: str | None = None):
    """Gradient-check every layer and the joint loss in double precision."""
    return gradcheck_mod.run_suite(threshold=threshold, corrupt_layer=corrupt_layer)
