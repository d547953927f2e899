"""Per-anomaly-type AUROC evaluation.

Each anomaly category is ranked against the shared set of normal test
samples; the headline number is the unweighted mean over categories. Pooling
all anomalies into one ROC is deliberately not offered: category sizes vary
wildly and would bias the metric.

AUROC is computed as the normalized Mann-Whitney U statistic with midrank
tie handling: the fraction of (anomaly, normal) pairs ranked correctly, ties
counting half. Constant scores therefore give exactly 0.5.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


def auroc(pos_scores, neg_scores) -> float:
    """P(score_pos > score_neg) + 0.5 * P(tie); pos = anomalies."""
    pos = np.asarray(list(pos_scores), dtype=np.float64)
    neg = np.asarray(list(neg_scores), dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auroc: both score lists must be non-empty")
    combined = np.concatenate([pos, neg])
    ranks = _midranks(combined)
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_values = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_points(pos_scores, neg_scores) -> np.ndarray:
    """(FPR, TPR) pairs over all distinct thresholds, for external plotting."""
    pos = np.asarray(list(pos_scores), dtype=np.float64)
    neg = np.asarray(list(neg_scores), dtype=np.float64)
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    points = [(0.0, 0.0)]
    for theta in thresholds:
        tpr = float(np.mean(pos >= theta))
        fpr = float(np.mean(neg >= theta))
        points.append((fpr, tpr))
    points.append((1.0, 1.0))
    return np.array(points)


@dataclass
class EvalReport:
    method: str
    seed: int
    per_category: dict[int, float]
    counts: dict[int, int]
    n_normal: int
    category_names: dict[int, str] = field(default_factory=dict)

    @property
    def mean_auroc(self) -> float:
        return float(np.mean(list(self.per_category.values())))

    def name_of(self, category: int) -> str:
        return self.category_names.get(category, f"category_{category}")


def evaluate(scorer, test_samples, method: str = "", seed: int = 0,
             category_names: dict[int, str] | None = None) -> EvalReport:
    """Score every test sample with ``scorer(sample) -> float`` and compute
    one AUROC per anomaly category against all normal test samples."""
    from .data import NORMAL_CATEGORY  # local import avoids a cycle

    scores: dict[int, list[float]] = {}
    for sample in test_samples:
        scores.setdefault(sample.category, []).append(scorer(sample))
    normal_scores = scores.pop(NORMAL_CATEGORY, [])
    if not normal_scores:
        raise ValueError("evaluate: the test set contains no normal samples")
    if not scores:
        raise ValueError("evaluate: the test set contains no anomalies")

    per_category = {}
    counts = {}
    for category in sorted(scores):
        if not scores[category]:
            log.warning("category %d has no samples; skipped", category)
            continue
        per_category[category] = auroc(scores[category], normal_scores)
        counts[category] = len(scores[category])
    return EvalReport(method, seed, per_category, counts, len(normal_scores),
                      dict(category_names or {}))


@dataclass
class AggregateReport:
    """Mean and sample standard deviation over repeated runs."""

    method: str
    seeds: list[int]
    category_mean: dict[int, float]
    category_std: dict[int, float]
    counts: dict[int, int]
    mean_auroc: float
    std_auroc: float
    category_names: dict[int, str] = field(default_factory=dict)


def aggregate(reports: list[EvalReport]) -> AggregateReport:
    if not reports:
        raise ValueError("aggregate: no reports")
    categories = sorted(reports[0].per_category)
    for rep in reports[1:]:
        if sorted(rep.per_category) != categories:
            raise ValueError("aggregate: reports cover different categories")
    per = {c: np.array([r.per_category[c] for r in reports]) for c in categories}
    means = np.array([r.mean_auroc for r in reports])
    std = lambda a: float(np.std(a, ddof=1)) if len(a) > 1 else 0.0
    return AggregateReport(
        method=reports[0].method,
        seeds=[r.seed for r in reports],
        category_mean={c: float(v.mean()) for c, v in per.items()},
        category_std={c: std(v) for c, v in per.items()},
        counts=dict(reports[0].counts),
        mean_auroc=float(means.mean()),
        std_auroc=std(means),
        category_names=dict(reports[0].category_names),
    )


def render_table(agg: AggregateReport) -> str:
    names = [agg.category_names.get(c, f"category_{c}") for c in agg.category_mean]
    width = max([len(n) for n in names] + [len("mean"), len("anomaly type")])
    lines = [f"{'anomaly type':<{width}}  {'n':>4}  {'auroc':>7}  {'std':>7}",
             "-" * (width + 25)]
    for cat, name in zip(agg.category_mean, names):
        lines.append(f"{name:<{width}}  {agg.counts[cat]:>4}  "
                     f"{100 * agg.category_mean[cat]:>7.2f}  "
                     f"{100 * agg.category_std[cat]:>7.2f}")
    lines.append("-" * (width + 25))
    lines.append(f"{'mean':<{width}}  {'':>4}  {100 * agg.mean_auroc:>7.2f}  "
                 f"{100 * agg.std_auroc:>7.2f}")
    return "\n".join(lines)


def write_report_csv(path, agg: AggregateReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("category,name,n_samples,auroc_mean,auroc_std\n")
        for cat in agg.category_mean:
            name = agg.category_names.get(cat, f"category_{cat}")
            fh.write(f"{cat},{name},{agg.counts[cat]},"
                     f"{agg.category_mean[cat]!r},{agg.category_std[cat]!r}\n")
        fh.write(f",mean,,{agg.mean_auroc!r},{agg.std_auroc!r}\n")


def write_roc_csv(path, points: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("fpr,tpr\n")
        for fpr, tpr in points:
            fh.write(f"{float(fpr)!r},{float(tpr)!r}\n")
