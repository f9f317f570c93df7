"""ROC/AUC metrics, cross-family evaluation, and the two ablation studies.

AUC is the Mann-Whitney statistic (ties credited 0.5), computed by rank
averaging but exactly equal to pairwise counting. The score of a sample is
its fake-class probability under the model; any strictly increasing
transform of the logit would give the same AUC.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .config import TrainConfig
from .data import Sample
from .model import JdfdParams, forward_joint
from .training import TrainResult, train


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _check_binary(scores: np.ndarray, labels: np.ndarray) -> tuple[int, int]:
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvalError(f"scores {scores.shape} and labels {labels.shape} must be equal-length 1D")
    n_fake = int((labels == 1).sum())
    n_real = int((labels == 0).sum())
    if n_fake + n_real != len(labels):
        raise EvalError("labels must be 0 (real) or 1 (fake)")
    if n_fake == 0 or n_real == 0:
        raise EvalError("AUC undefined: need at least one real and one fake sample")
    return n_fake, n_real


def auc(scores, labels) -> float:
    """Probability a random fake outscores a random real (ties count 0.5).

    Computed via tie-averaged ranks in O(n log n); equal to brute-force pair
    counting exactly, including the half credit for ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_fake, n_real = _check_binary(scores, labels)
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - n_fake * (n_fake + 1) / 2.0
    return float(u / (n_fake * n_real))


@dataclass
class RocCurve:
    thresholds: list[float]  # one per point; starts above the max score
    points: list[tuple[float, float]]  # (fpr, tpr), from (0, 0) to (1, 1)

    def area(self) -> float:
        """Trapezoidal area under the curve."""
        total = 0.0
        for (x0, y0), (x1, y1) in zip(self.points, self.points[1:]):
            total += 0.5 * (y0 + y1) * (x1 - x0)
        return total


def roc_points(scores, labels) -> RocCurve:
    """ROC curve swept over every distinct score, descending."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_fake, n_real = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    thresholds = [float("inf")]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        tp += int((sorted_labels[i : j + 1] == 1).sum())
        fp += int((sorted_labels[i : j + 1] == 0).sum())
        thresholds.append(float(sorted_scores[i]))
        points.append((fp / n_real, tp / n_fake))
        i = j + 1
    return RocCurve(thresholds=thresholds, points=points)


# ---------------------------------------------------------------------------
# Model evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    auc: float
    n_real: int
    n_fake: int
    train_family: str
    test_family: str
    scores: list[float]
    labels: list[int]
    ids: list[int]

    def roc(self) -> RocCurve:
        return roc_points(self.scores, self.labels)


def evaluate(
    params: JdfdParams,
    test_samples: list[Sample],
    train_family: str = "?",
    batch_size: int = 64,
) -> EvalReport:
    """Infer-mode forward over a labeled test set; score = fake probability."""
    if not test_samples:
        raise EvalError("empty test set")
    if any(s.label is None for s in test_samples):
        raise EvalError("test set contains unlabeled samples")
    families = {s.family for s in test_samples}
    test_family = families.pop() if len(families) == 1 else "mixed"
    scores: list[float] = []
    for start in range(0, len(test_samples), batch_size):
        chunk = test_samples[start : start + batch_size]
        x = np.concatenate([s.image for s in chunk]).astype(chunk[0].image.dtype, copy=False)
        out, _ = forward_joint(x, params, train=False)
        scores.extend(float(p) for p in out.probabilities[:, 1])
    labels = [s.label for s in test_samples]
    return EvalReport(
        auc=auc(scores, labels),
        n_real=labels.count(0),
        n_fake=labels.count(1),
        train_family=train_family,
        test_family=test_family,
        scores=scores,
        labels=labels,
        ids=[s.id for s in test_samples],
    )


def cross_matrix(
    params: JdfdParams,
    train_family: str,
    test_sets: dict[str, list[Sample]],
) -> list[EvalReport]:
    """One row of the evaluation matrix: the trained model on every family."""
    return [
        evaluate(params, test_sets[family], train_family=train_family)
        for family in test_sets
    ]


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

REPORT_HEADER = ["train_family", "test_family", "auc", "n_real", "n_fake", "seed"]


def write_report_csv(reports: list[tuple[EvalReport, int]], path: str) -> None:
    """Evaluation rows as CSV with 6-decimal fixed-point AUC."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for report, seed in reports:
            writer.writerow([
                report.train_family, report.test_family, f"{report.auc:.6f}",
                report.n_real, report.n_fake, seed,
            ])


def write_roc_csv(curve: RocCurve, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fpr", "tpr"])
        for threshold, (fpr, tpr) in zip(curve.thresholds, curve.points):
            writer.writerow([repr(threshold), repr(fpr), repr(tpr)])


def write_scores_csv(report: EvalReport, path: str) -> None:
    """Per-sample scores, full precision, so the AUC can be re-derived."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "score"])
        for sid, label, score in zip(report.ids, report.labels, report.scores):
            writer.writerow([sid, label, repr(score)])


# ---------------------------------------------------------------------------
# Ablation studies
# ---------------------------------------------------------------------------

@dataclass
class StudyRow:
    variant: str  # "joint" / "baseline", or an augmentation ratio as text
    seed: int
    report: EvalReport


@dataclass
class StudyResult:
    rows: list[StudyRow]

    def mean_auc(self, variant: str, test_family: str) -> float:
        cells = [
            r.report.auc
            for r in self.rows
            if r.variant == variant and r.report.test_family == test_family
        ]
        if not cells:
            raise EvalError(f"no rows for variant={variant!r} test_family={test_family!r}")
        return float(np.mean(cells))


def _study_seeds(config: TrainConfig) -> list[int]:
    return [config.seed + i for i in range(config.ablation_seeds)]


def ablate_decoder(
    config: TrainConfig,
    train_samples: list[Sample],
    test_sets: dict[str, list[Sample]],
) -> StudyResult:
    """Full model vs the decoder-free baseline on identical data and seeds.

    The baseline drops the decoder branch entirely (so its parameters never
    exist, let alone update) and trains with the classification loss alone;
    batch sequences are shared through the common data stream seed.
    """
    rows: list[StudyRow] = []
    for seed in _study_seeds(config):
        for variant in ("joint", "baseline"):
            if variant == "baseline":
                run_config = replace(config, beta2=0.0)
                result = train(run_config, train_samples, with_decoder=False, seed=seed)
            else:
                result = train(config, train_samples, seed=seed)
            for report in cross_matrix(result.params, config.train_family, test_sets):
                rows.append(StudyRow(variant=variant, seed=seed, report=report))
    return StudyResult(rows=rows)


DEFAULT_RATIOS = (0.0, 0.05, 0.10, 0.15)


def augmentation_study(
    config: TrainConfig,
    train_samples: list[Sample],
    foreign_sets: list[list[Sample]],
    test_sets: dict[str, list[Sample]],
    ratios: tuple[float, ...] = DEFAULT_RATIOS,
) -> StudyResult:
    """Unlabeled foreign-data augmentation swept over mixing ratios.

    Ratio 0 reproduces plain training bit for bit under the same seed; the
    foreign samples join with their labels stripped, so they feed the
    reconstruction term only.
    """
    rows: list[StudyRow] = []
    for ratio in ratios:
        run_config = replace(config, foreign_ratio=ratio)
        for seed in _study_seeds(config):
            result = train(run_config, train_samples, foreign_sets, seed=seed)
            for report in cross_matrix(result.params, config.train_family, test_sets):
                rows.append(StudyRow(variant=f"{ratio:g}", seed=seed, report=report))
    return StudyResult(rows=rows)


def write_study_csv(result: StudyResult, path: str, variant_column: str) -> None:
    """Study rows plus per-(variant, test family) mean rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([variant_column] + REPORT_HEADER)
        for row in result.rows:
            writer.writerow([
                row.variant, row.report.train_family, row.report.test_family,
                f"{row.report.auc:.6f}", row.report.n_real, row.report.n_fake, row.seed,
            ])
        seen: list[tuple[str, str, str]] = []
        for row in result.rows:
            key = (row.variant, row.report.train_family, row.report.test_family)
            if key not in seen:
                seen.append(key)
        for variant, train_family, test_family in seen:
            writer.writerow([
                variant, train_family, test_family,
                f"{result.mean_auc(variant, test_family):.6f}", "", "", "mean",
            ])
