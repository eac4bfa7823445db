"""Evaluation metrics: pairwise preference precision, agreement-based upper
bounds, the between/within variance ratio used for descriptor screening, and
auxiliary absolute-rating error."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

STRONG_CHOICES = ("i_more", "j_more")
WEAK_CHOICES = ("i_little", "j_little")


@dataclass(frozen=True)
class PrefPrediction:
    """Predicted scores for one labeled comparison pair."""

    utt_i: str
    utt_j: str
    score_i: float
    score_j: float
    choice: str


@dataclass(frozen=True)
class ResponseTally:
    """Per-question response counts for the four comparison choices."""

    a1: int  # "i is more so"
    a2: int  # "i is a little more so"
    a3: int  # "j is a little more so"
    a4: int  # "j is more so"

    def __post_init__(self) -> None:
        if min(self.a1, self.a2, self.a3, self.a4) < 0:
            raise ValueError("response counts must be non-negative")
        if self.a1 + self.a2 + self.a3 + self.a4 < 1:
            raise ValueError("a tally needs at least one response")


def _ppref_counts(predictions: Sequence[PrefPrediction],
                  subset: str) -> tuple[int, int, int]:
    if subset == "strong":
        keep = STRONG_CHOICES
    elif subset == "weak":
        keep = WEAK_CHOICES
    else:
        raise ValueError(f"subset must be 'strong' or 'weak', got {subset!r}")
    correct = kept = ties = 0
    for p in predictions:
        if p.choice not in keep:
            continue
        kept += 1
        if p.score_i == p.score_j:
            ties += 1  # exact ties never count as correct
            continue
        j_wins = p.score_j > p.score_i
        if j_wins == (p.choice in ("j_more", "j_little")):
            correct += 1
    return correct, kept, ties


def ppref(predictions: Sequence[PrefPrediction], subset: str) -> float:
    """Precision of predicted score orderings against one label subset:
    "strong" uses the confident choices, "weak" the marginal ones."""
    correct, kept, _ = _ppref_counts(predictions, subset)
    if kept == 0:
        raise ValueError(f"no {subset} labels to evaluate")
    return correct / kept


def metric_report(svd_id: str, predictions: Sequence[PrefPrediction],
                  ub_strong: float | None = None,
                  ub_weak: float | None = None) -> dict:
    """The JSON-ready evaluation summary for one descriptor."""
    c_s, n_s, t_s = _ppref_counts(predictions, "strong")
    c_w, n_w, t_w = _ppref_counts(predictions, "weak")
    return {
        "svd": svd_id,
        "n_pairs_strong": n_s,
        "n_pairs_weak": n_w,
        "ppref_strong": c_s / n_s if n_s else None,
        "ppref_weak": c_w / n_w if n_w else None,
        "ties_strong": t_s,
        "ties_weak": t_w,
        "ub_strong": ub_strong,
        "ub_weak": ub_weak,
    }


def upper_bound_estimate(tallies: Sequence[ResponseTally],
                         ) -> tuple[float | None, float | None]:
    """Estimated precision ceilings from inter-annotator agreement.

    Per question, strong agreement is max(a1,a4)/(a1+a4) and weak agreement
    max(a2,a3)/(a2+a3); each bound averages uniformly over the questions with
    a positive denominator and is None when no question contributes.
    """
    if not tallies:
        raise ValueError("at least one response tally is required")
    strong, weak = [], []
    for t in tallies:
        if t.a1 + t.a4 > 0:
            strong.append(max(t.a1, t.a4) / (t.a1 + t.a4))
        if t.a2 + t.a3 > 0:
            weak.append(max(t.a2, t.a3) / (t.a2 + t.a3))
    ub_strong = sum(strong) / len(strong) if strong else None
    ub_weak = sum(weak) / len(weak) if weak else None
    return ub_strong, ub_weak


def tally_from_labels(labels: Sequence) -> list[ResponseTally]:
    """Aggregate comparison labels into per-question tallies, where a question
    is an ordered (utt_i, utt_j) pair."""
    counts: dict[tuple[str, str], list[int]] = {}
    order = {"i_more": 0, "i_little": 1, "j_little": 2, "j_more": 3}
    for label in labels:
        slot = counts.setdefault((label.utt_i, label.utt_j), [0, 0, 0, 0])
        slot[order[label.choice]] += 1
    return [ResponseTally(*counts[key]) for key in sorted(counts)]


def pseudo_f(groups: Mapping[str, Sequence[float]]) -> float:
    """Between/within variance ratio over speaker-grouped scores
    (the Calinski-Harabasz statistic).

    Returns inf when the within-group variance is zero but group means
    differ; raises for degenerate inputs (everything identical, a single
    group, or no residual degrees of freedom).
    """
    names = [g for g in groups if len(groups[g]) > 0]
    if len(names) < 2:
        raise ValueError("need at least two non-empty groups")
    values = [np.asarray(groups[g], dtype=np.float64) for g in names]
    n = sum(len(v) for v in values)
    k = len(values)
    if n <= k:
        raise ValueError("need more observations than groups")
    grand = sum(float(v.sum()) for v in values) / n
    between = sum(len(v) * (float(v.mean()) - grand) ** 2 for v in values)
    within = sum(float(np.sum((v - v.mean()) ** 2)) for v in values)
    if within == 0.0:
        if between == 0.0:
            raise ValueError("degenerate input: all observations are identical")
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def acr_mse(predicted: Sequence[float], ratings: Sequence[float]) -> float:
    """Mean squared error between predicted scores and absolute ratings."""
    predicted = np.asarray(predicted, dtype=np.float64)
    ratings = np.asarray(ratings, dtype=np.float64)
    if predicted.shape != ratings.shape or predicted.ndim != 1:
        raise ValueError("predictions and ratings must be 1-D and the same length")
    if len(predicted) == 0:
        raise ValueError("cannot average an empty set")
    return float(np.mean((predicted - ratings) ** 2))
