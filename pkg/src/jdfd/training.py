"""End-to-end training loop for the joint model.

One run is fully determined by (config, seed): the initialization stream and
the data-shuffling stream are derived separately from the run seed, so the
decoder-free baseline sees exactly the batch sequence of the full model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .data import BatchStream, Sample
from .model import JdfdParams, forward_joint, init_params
from .objective import LossWeights, joint_loss
from .optim import GROUP_CAE, GROUP_CLS, SgdConfig, SgdState, scheduler_step, sgd_step
from .rng import Rng, derive_seed

_INIT_TAG = 0x494E4954  # "INIT"
_DATA_TAG = 0x44415441  # "DATA"


class NumericError(RuntimeError):
    """Training hit a non-finite loss; carries the offending batch id."""

    def __init__(self, batch_id: int, message: str):
        self.batch_id = batch_id
        super().__init__(message)


@dataclass
class EpochLog:
    epoch: int
    l_cro: float
    l_rec: float
    l_total: float
    lr_cae: float
    lr_cls: float


@dataclass
class TrainResult:
    params: JdfdParams
    log: list[EpochLog]
    cro_sample_count: int  # samples that contributed classification terms
    step_count: int


def train(
    config: TrainConfig,
    train_samples: list[Sample],
    foreign_samples: list[list[Sample]] | None = None,
    *,
    with_decoder: bool = True,
    seed: int | None = None,
) -> TrainResult:
    """Train on ``train_samples`` (plus optional unlabeled foreign data).

    ``seed`` overrides ``config.seed`` for paired-seed studies. The epoch log
    records sample-weighted mean losses and the learning rates the epoch ran
    at.
    """
    run_seed = config.seed if seed is None else seed
    dtype = config.dtype
    params = init_params(config, Rng(derive_seed(run_seed, _INIT_TAG)), with_decoder=with_decoder)
    weights = LossWeights(beta1=config.beta1, beta2=config.beta2)
    state = SgdState(SgdConfig(
        lr_cae=config.lr_cae,
        lr_cls=config.lr_cls,
        step_size=config.step_size,
        decay=config.decay,
        momentum=config.momentum,
    ))
    stream = BatchStream(
        train_samples,
        foreign_samples or [],
        batch_size=config.batch_size,
        foreign_ratio=config.foreign_ratio,
        rng=Rng(derive_seed(run_seed, _DATA_TAG)),
    )

    log: list[EpochLog] = []
    cro_samples = 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        lr_cae = state.current_lr(GROUP_CAE)
        lr_cls = state.current_lr(GROUP_CLS)
        cro_sum = rec_sum = total_sum = 0.0
        cro_n = rec_n = batch_n = 0
        for batch in stream.epoch_batches():
            x = np.concatenate([s.image for s in batch]).astype(dtype, copy=False)
            labels = np.array([-1 if s.label is None else s.label for s in batch])
            out, cache = forward_joint(x, params, train=True)
            report, dlogits, dxhat = joint_loss(out, x, labels, weights)
            if not np.isfinite(report.l_total):
                raise NumericError(step, f"non-finite loss {report.l_total} at batch {step}")
            params.zero_grads()
            cache.backward(params, dlogits, dxhat)
            sgd_step(params, state)
            cro_sum += report.l_cro * report.n_cro
            rec_sum += report.l_rec * report.n_rec
            total_sum += report.l_total
            cro_n += report.n_cro
            rec_n += report.n_rec
            batch_n += 1
            step += 1
        cro_samples += cro_n
        log.append(EpochLog(
            epoch=epoch,
            l_cro=cro_sum / cro_n if cro_n else 0.0,
            l_rec=rec_sum / rec_n if rec_n else 0.0,
            l_total=total_sum / batch_n if batch_n else 0.0,
            lr_cae=lr_cae,
            lr_cls=lr_cls,
        ))
        scheduler_step(state)
    return TrainResult(params=params, log=log, cro_sample_count=cro_samples, step_count=step)
