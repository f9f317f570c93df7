"""Finite-difference verification of analytic gradients.

``grad_check`` compares the gradients a loss function reports against central
finite differences of the loss itself. ``run_suite`` applies it to every
layer primitive and to the full joint objective, in double precision; the CLI
``gradcheck`` command is a thin wrapper around it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .rng import Rng
from .tensor import Tensor

LossFn = Callable[[], tuple[float, list[np.ndarray]]]


def grad_check(
    f: LossFn,
    params: list[Tensor],
    eps: float = 1e-5,
    max_probes: int | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` evaluates the loss at the current parameter values and returns it
    together with analytic gradients aligned with ``params``. Every parameter
    element is probed unless ``max_probes`` caps the count per tensor, in
    which case the coordinates with the largest analytic gradients are
    probed (small-gradient directions drown in the rounding noise of the
    loss itself and carry no verification signal). The error for one element
    is ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.
    """
    loss, grads = f()
    if not np.isfinite(loss):
        raise FloatingPointError(f"grad_check: non-finite loss {loss}")
    if len(grads) != len(params):
        raise ValueError(f"grad_check: {len(grads)} gradients for {len(params)} parameters")
    worst = 0.0
    for param, grad in zip(params, grads):
        flat = param.data.reshape(-1)
        size = flat.size
        gflat = np.asarray(grad).reshape(-1)
        if max_probes is not None and size > max_probes:
            idx = np.argsort(-np.abs(gflat), kind="stable")[:max_probes]
        else:
            idx = range(size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            hi, _ = f()
            flat[i] = orig - eps
            lo, _ = f()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise FloatingPointError("grad_check: non-finite loss during probing")
            numeric = (hi - lo) / (2.0 * eps)
            analytic = gflat[i]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, err)
    return worst


@dataclass
class GradcheckRow:
    layer: str
    max_rel_err: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def _project(y: np.ndarray, r: np.ndarray) -> float:
    return float((y * r).sum())


def _conv2d_case(rng: Rng) -> tuple[LossFn, list[Tensor]]:
    x = Tensor(rng.gaussian(2 * 3 * 8 * 8).reshape(2, 3, 8, 8))
    w = Tensor(rng.gaussian(4 * 3 * 3 * 3).reshape(4, 3, 3, 3))
    b = Tensor(rng.gaussian(4))
    r = rng.gaussian(2 * 4 * 4 * 4).reshape(2, 4, 4, 4)

    def f():
        y, cache = ops.conv2d(x.data, w.data, b.data, stride=2, pad=1)
        gx, gw, gb = ops.conv2d_backward(r, cache)
        return _project(y, r), [gx, gw, gb]

    return f, [x, w, b]


def _conv_transpose2d_case(rng: Rng) -> tuple[LossFn, list[Tensor]]:
    x = Tensor(rng.gaussian(2 * 4 * 4 * 4).reshape(2, 4, 4, 4))
    w = Tensor(rng.gaussian(4 * 3 * 2 * 2).reshape(4, 3, 2, 2))
    b = Tensor(rng.gaussian(3))
    r = rng.gaussian(2 * 3 * 8 * 8).reshape(2, 3, 8, 8)

    def f():
        y, cache = ops.conv_transpose2d(x.data, w.data, b.data, stride=2, pad=0)
        gx, gw, gb = ops.conv_transpose2d_backward(r, cache)
        return _project(y, r), [gx, gw, gb]

    return f, [x, w, b]


def _batchnorm2d_case(rng: Rng) -> tuple[LossFn, list[Tensor]]:
    x = Tensor(rng.gaussian(4 * 2 * 5 * 5).reshape(4, 2, 5, 5))
    gamma = Tensor(1.0 + 0.1 * rng.gaussian(2))
    beta = Tensor(0.1 * rng.gaussian(2))
    r = rng.gaussian(4 * 2 * 5 * 5).reshape(4, 2, 5, 5)

    def f():
        state = ops.BatchNormState(
            gamma=Tensor(gamma.data),
            beta=Tensor(beta.data),
            running_mean=np.zeros(2),
            running_var=np.ones(2),
        )
        y, cache = ops.batchnorm2d(x.data, state, train=True)
        gx, gg, gb = ops.batchnorm2d_backward(r, cache)
        return _project(y, r), [gx, gg, gb]

    return f, [x, gamma, beta]


def _relu_case(rng: Rng) -> tuple[LossFn, list[Tensor]]:
    vals = rng.gaussian(2 * 3 * 4 * 4)
    # Keep probe points away from the kink at 0.
    vals = np.where(np.abs(vals) < 0.05, 0.05 * np.sign(vals) + (vals == 0) * 0.05, vals)
    x = Tensor(vals.reshape(2, 3, 4, 4))
    r = rng.gaussian(x.size).reshape(x.shape)

    def f():
        y, cache = ops.relu(x.data)
        return _project(y, r), [ops.relu_backward(r, cache)]

    return f, [x]


def _linear_case(rng: Rng) -> tuple[LossFn, list[Tensor]]:
    x = Tensor(rng.gaussian(4 * 10).reshape(4, 10))
    w = Tensor(rng.gaussian(3 * 10).reshape(3, 10))
    b = Tensor(rng.gaussian(3))
    r = rng.gaussian(4 * 3).reshape(4, 3)

    def f():
        y, cache = ops.linear(x.data, w.data, b.data)
        gx, gw, gb = ops.linear_backward(r, cache)
        return _project(y, r), [gx, gw, gb]

    return f, [x, w, b]


def _bilinear_resize_case(rng: Rng) -> tuple[LossFn, list[Tensor]]:
    x = Tensor(rng.gaussian(2 * 3 * 5 * 7).reshape(2, 3, 5, 7))
    r = rng.gaussian(2 * 3 * 8 * 6).reshape(2, 3, 8, 6)

    def f():
        y, cache = ops.bilinear_resize(x.data, 8, 6)
        return _project(y, r), [ops.bilinear_resize_backward(r, cache)]

    return f, [x]


def _joint_case(rng: Rng) -> tuple[LossFn, list[Tensor]]:
    # Imported here to keep the layer cases importable without the model.
    from .config import TrainConfig
    from .model import forward_joint, init_params
    from .objective import LossWeights, joint_loss

    config = TrainConfig(image_size=16, latent_dim=8, precision="double")
    params = init_params(config, Rng(rng.next_u64()))
    x = rng.uniform(2 * 3 * 16 * 16).reshape(2, 3, 16, 16)
    labels = np.array([0, 1])
    weights = LossWeights(beta1=0.8, beta2=0.2)
    tensors = [t for _, t in params.named_parameters()]

    def f():
        for _, t in params.named_parameters():
            t.zero_grad()
        out, cache = forward_joint(x, params, train=True)
        report, dlogits, dxhat = joint_loss(out, x, labels, weights)
        cache.backward(params, dlogits, dxhat)
        grads = [t.grad.copy() for _, t in params.named_parameters()]
        return report.l_total, grads

    return f, tensors


_LAYER_CASES = {
    "conv2d": _conv2d_case,
    "conv_transpose2d": _conv_transpose2d_case,
    "batchnorm2d": _batchnorm2d_case,
    "relu": _relu_case,
    "linear": _linear_case,
    "bilinear_resize": _bilinear_resize_case,
    "joint_loss": _joint_case,
}


def run_suite(
    threshold: float = 1e-4,
    seed: int = 2024,
    corrupt_layer: str | None = None,
) -> list[GradcheckRow]:
    """Gradient-check every layer primitive plus the full joint objective.

    ``corrupt_layer`` deliberately perturbs that layer's analytic gradients
    before comparison; it exists as a negative control for the harness
    itself.
    """
    if corrupt_layer is not None and corrupt_layer not in _LAYER_CASES:
        raise ValueError(f"unknown layer {corrupt_layer!r}")
    rows = []
    for name, build in _LAYER_CASES.items():
        f, params = build(Rng(seed))
        if name == corrupt_layer:
            inner = f

            def f():
                loss, grads = inner()
                return loss, [g * 1.01 + 1e-3 for g in grads]

        if name == "joint_loss":
            # Probing every one of the ~150k parameters is far too slow, and
            # a smaller step keeps finite differences off the ReLU kinks that
            # batch normalization drags close to every perturbation.
            probes, eps = 12, 1e-6
        else:
            probes, eps = None, 1e-5
        err = grad_check(f, params, eps=eps, max_probes=probes)
        rows.append(GradcheckRow(layer=name, max_rel_err=err, threshold=threshold))
    return rows
