"""The joint training objective.

Total loss is ``beta1 * L_cro + beta2 * L_rec``: a weighted sum of the
classification cross-entropy over the labeled samples of a batch and the
reconstruction error over all samples. Unlabeled samples (label -1)
contribute to the reconstruction term only, which is what makes
foreign-data augmentation with unknown labels possible.

``reconstruction_mse`` is the squared Euclidean distance between input and
reconstruction per sample (summed over every channel and pixel), averaged
over the batch. Inside the joint loss that term is additionally divided by
the element count per sample: the curvature of the summed form grows with
the pixel count (the loss Hessian along the output-layer bias alone is
2 * beta2 * h * w), which would make SGD diverge at the default learning
rate for any realistic image size. Normalizing per element keeps the
published weight/rate constants usable at every resolution; it is exactly
the constant rescaling of beta2 the weighting scheme allows. Cross-entropy
averages over the labeled samples.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelOutput
from .ops import ShapeError

UNLABELED = -1
_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    beta1: float = 0.8
    beta2: float = 0.2

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError(f"loss weights must be >= 0, got {self.beta1}, {self.beta2}")
        if self.beta1 == 0 and self.beta2 == 0:
            raise ValueError("loss weights must not both be zero")


@dataclass
class LossReport:
    l_cro: float
    l_rec: float
    l_total: float
    n_cro: int
    n_rec: int


def cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true class.

    ``probabilities`` is (n, 2) with the fake-class probability in column 1;
    ``labels`` is (n,) of {0, 1}. Probabilities are clamped to
    [1e-12, 1 - 1e-12] before the log.
    """
    if probabilities.ndim != 2 or probabilities.shape[1] != 2:
        raise ShapeError(f"expected (n, 2) probabilities, got {probabilities.shape}")
    if len(labels) != probabilities.shape[0]:
        raise ShapeError(f"{len(labels)} labels for {probabilities.shape[0]} samples")
    if len(labels) == 0:
        raise ShapeError("cross_entropy: empty batch")
    p = np.clip(probabilities, _CLAMP, 1.0 - _CLAMP)
    y = np.asarray(labels)
    picked = np.where(y == 1, p[:, 1], p[:, 0])
    return float(-np.mean(np.log(picked)))


def cross_entropy_backward(probabilities: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy with respect to the logits.

    Composed with the softmax this is the standard identity
    ``(probabilities - onehot(labels)) / n``.
    """
    n = probabilities.shape[0]
    onehot = np.zeros_like(probabilities)
    onehot[np.arange(n), np.asarray(labels)] = 1.0
    return (probabilities - onehot) / n


def reconstruction_mse(x: np.ndarray, xhat: np.ndarray) -> float:
    """Per-sample squared Euclidean distance, averaged over the batch."""
    if x.shape != xhat.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    diff = x - xhat
    return float((diff * diff).sum() / x.shape[0])


def reconstruction_mse_backward(x: np.ndarray, xhat: np.ndarray) -> np.ndarray:
    """Gradient of reconstruction_mse with respect to the reconstruction."""
    return (-2.0 / x.shape[0]) * (x - xhat)


def joint_loss(
    output: ModelOutput,
    x: np.ndarray,
    labels: np.ndarray,
    weights: LossWeights,
) -> tuple[LossReport, np.ndarray | None, np.ndarray | None]:
    """Weighted joint loss plus the gradients that seed the backward pass.

    ``labels`` uses -1 for unlabeled samples; those rows are excluded from
    the classification term (a batch with no labeled samples simply records
    ``n_cro = 0``). The reconstruction term is the per-sample squared error
    divided by the element count per sample (see the module docstring).
    Returns ``(report, dlogits, dxhat)`` where either gradient is None when
    its branch carries zero weight, so that branch's parameter gradients
    stay exactly untouched.
    """
    labels = np.asarray(labels)
    n = x.shape[0]
    if n == 0:
        raise ShapeError("joint_loss: empty batch")
    labeled = labels != UNLABELED

    l_cro = 0.0
    n_cro = int(labeled.sum())
    dlogits = None
    if n_cro > 0:
        probs = output.probabilities[labeled]
        l_cro = cross_entropy(probs, labels[labeled])
        if weights.beta1 > 0:
            dlogits = np.zeros_like(output.logits)
            dlogits[labeled] = weights.beta1 * cross_entropy_backward(probs, labels[labeled])

    l_rec = 0.0
    n_rec = 0
    dxhat = None
    if output.reconstruction is not None:
        per_element = 1.0 / (x.shape[1] * x.shape[2] * x.shape[3])
        l_rec = reconstruction_mse(x, output.reconstruction) * per_element
        n_rec = n
        if weights.beta2 > 0:
            dxhat = (weights.beta2 * per_element) * reconstruction_mse_backward(x, output.reconstruction)

    l_total = weights.beta1 * l_cro + weights.beta2 * l_rec
    return LossReport(l_cro=l_cro, l_rec=l_rec, l_total=l_total, n_cro=n_cro, n_rec=n_rec), dlogits, dxhat
