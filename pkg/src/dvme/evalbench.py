"""Evaluation protocol: subtask sizing, class-balanced 5-fold plans with
optional group stratification, AUC / Cohen's kappa, fold aggregation, and
the private/public leaderboard combiner."""

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ParameterError, UndefinedMetricError

# Published subtask sample counts per dataset tier.
TABLE1_SIZES = {
    "patchcam": {"small": 500, "medium": 5000, "full": 50000},
    "aptos": {"small": 50, "medium": 500, "full": 3662},
    "pneumonia": {"small": 50, "medium": 500, "full": 5216},
    "nih": {"small": 20, "medium": 200, "full": 2414},
}

LEADERBOARD_ALPHA = {"patchcam": 0.51, "aptos": 0.85}


@dataclass(frozen=True)
class SubtaskSpec:
    """Training-set size tier; sample_count None means "largest available"."""

    name: str
    sample_count: int | None

    def __post_init__(self):
        if self.sample_count is not None and self.sample_count < 1:
            raise ParameterError("sample_count must be positive or None")


@dataclass(frozen=True)
class Fold:
    train_idx: np.ndarray
    val_idx: np.ndarray


@dataclass(frozen=True)
class FoldPlan:
    k: int
    folds: tuple
    seed: int
    balanced: bool


def _partition_validation(n, group_ids, k, rng):
    if group_ids is None:
        return [np.sort(chunk) for chunk in np.array_split(rng.permutation(n), k)]
    group_ids = np.asarray(group_ids)
    unique = np.unique(group_ids)
    if len(unique) < k:
        raise ParameterError(f"need at least {k} groups, got {len(unique)}")
    members = {g: np.flatnonzero(group_ids == g) for g in unique}
    buckets = [[] for _ in range(k)]
    sizes = np.zeros(k, dtype=int)
    # Greedy bin packing keeps fold sizes close while groups stay whole.
    for g in rng.permutation(unique):
        target = int(np.argmin(sizes))
        buckets[target].append(members[g])
        sizes[target] += len(members[g])
    return [np.sort(np.concatenate(b)) for b in buckets]


def _balanced_subsample(pool, labels, sample_count, rng):
    classes = np.unique(labels)
    pool_labels = labels[pool]
    if sample_count is None:
        smallest = min(int((pool_labels == c).sum()) for c in classes)
        quotas = {int(c): smallest for c in classes}
    else:
        base, extra = divmod(sample_count, len(classes))
        quotas = {int(c): base + (1 if i < extra else 0) for i, c in enumerate(classes)}
    picks = []
    for c in classes:
        available = pool[pool_labels == c]
        need = quotas[int(c)]
        if len(available) < need:
            raise CapacityError(
                f"class {int(c)} has {len(available)} training candidates, "
                f"needs {need}",
                limiting_class=int(c),
            )
        picks.append(rng.choice(available, size=need, replace=False))
    return np.sort(np.concatenate(picks))


def make_folds(labels, subtask, seed, group_ids=None, balanced=True, k=5):
    """Partition into k validation folds, then draw each fold's training
    subsample from the remaining pool (class-balanced unless disabled)."""
    labels = np.asarray(labels)
    n = len(labels)
    if n < k:
        raise ParameterError(f"{n} samples cannot form {k} folds")
    if group_ids is not None and len(np.asarray(group_ids)) != n:
        raise ParameterError("group_ids length does not match labels")

    streams = np.random.SeedSequence(seed).spawn(k + 1)
    val_folds = _partition_validation(n, group_ids, k, np.random.default_rng(streams[0]))

    folds = []
    for f in range(k):
        val_idx = val_folds[f]
        mask = np.ones(n, dtype=bool)
        mask[val_idx] = False
        pool = np.flatnonzero(mask)
        fold_rng = np.random.default_rng(streams[f + 1])
        if balanced:
            train_idx = _balanced_subsample(pool, labels, subtask.sample_count, fold_rng)
        elif subtask.sample_count is None:
            train_idx = pool
        else:
            if subtask.sample_count > len(pool):
                raise CapacityError(
                    f"requested {subtask.sample_count} of {len(pool)} pool samples"
                )
            train_idx = np.sort(
                fold_rng.choice(pool, size=subtask.sample_count, replace=False)
            )
        folds.append(Fold(train_idx=train_idx, val_idx=val_idx))
    return FoldPlan(k=k, folds=tuple(folds), seed=seed, balanced=balanced)


def _tied_ranks(x):
    n = len(x)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    sorted_x = x[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def auc_binary(scores, labels):
    """Mann-Whitney AUC: P(random positive outscores random negative), ties 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.isin(labels, (0, 1)).all():
        raise ParameterError("binary AUC labels must be 0/1")
    num_pos = int((labels == 1).sum())
    num_neg = int((labels == 0).sum())
    if num_pos == 0 or num_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    rank_sum = _tied_ranks(scores)[labels == 1].sum()
    return float((rank_sum - num_pos * (num_pos + 1) / 2) / (num_pos * num_neg))


def auc_macro_ovr(probabilities, labels):
    """Unweighted mean of per-class one-vs-rest AUC on probability columns."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    num_classes = probabilities.shape[1]
    per_class = []
    for c in range(num_classes):
        if not (labels == c).any():
            raise UndefinedMetricError(f"class {c} absent from labels")
        per_class.append(auc_binary(probabilities[:, c], (labels == c).astype(int)))
    return float(np.mean(per_class))


def cohen_kappa(y_true, y_pred, weighting="none", num_classes=None):
    """Chance-corrected agreement, kappa = 1 - sum(wO)/sum(wE)."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ParameterError("rating vectors differ in length")
    n = len(y_true)
    if n == 0:
        raise UndefinedMetricError("kappa of empty input")
    if num_classes is None:
        num_classes = int(max(y_true.max(), y_pred.max())) + 1
    if y_true.min() < 0 or max(y_true.max(), y_pred.max()) >= num_classes:
        raise ParameterError(f"labels must lie in [0, {num_classes})")

    observed = np.zeros((num_classes, num_classes), dtype=np.float64)
    np.add.at(observed, (y_true, y_pred), 1.0)
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n

    idx = np.arange(num_classes)
    if weighting == "none":
        weights = 1.0 - np.eye(num_classes)
    elif weighting == "quadratic":
        if num_classes < 2:
            raise UndefinedMetricError("quadratic weights need at least 2 classes")
        weights = np.subtract.outer(idx, idx) ** 2 / (num_classes - 1) ** 2
    else:
        raise ParameterError(f"unknown weighting {weighting!r}")

    denominator = (weights * expected).sum()
    if denominator == 0:
        raise UndefinedMetricError("single rating value on both sides")
    return float(1.0 - (weights * observed).sum() / denominator)


@dataclass(frozen=True)
class LeaderboardWeights:
    alpha: float
    s_private: float
    s_public: float


def combine_leaderboard(weights):
    """s_avg = alpha * s_private + (1 - alpha) * s_public."""
    if not 0 <= weights.alpha <= 1:
        raise ParameterError(f"alpha must lie in [0, 1], got {weights.alpha}")
    return weights.alpha * weights.s_private + (1 - weights.alpha) * weights.s_public


@dataclass(frozen=True)
class MetricReport:
    metric: str
    fold_scores: tuple
    mean: float
    std: float


def aggregate(fold_scores, metric="auc"):
    """Arithmetic mean and population standard deviation over folds."""
    scores = tuple(float(s) for s in fold_scores)
    if not scores:
        raise ParameterError("aggregate needs at least one fold score")
    return MetricReport(
        metric=metric,
        fold_scores=scores,
        mean=float(np.mean(scores)),
        std=float(np.std(scores)),
    )


def render_report(dataset, subtask, model, report, extra=None):
    """Structured text block with a stable field order (diff-friendly)."""
    lines = [
        f"dataset: {dataset}",
        f"subtask: {subtask}",
        f"model: {model}",
        f"metric: {report.metric}",
        "fold_scores: " + " ".join(repr(s) for s in report.fold_scores),
        f"mean: {report.mean!r}",
        f"std: {report.std!r}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def parse_report(text):
    """Inverse of render_report for the fields it always writes."""
    fields = {}
    for line in text.strip().splitlines():
        key, _, value = line.partition(": ")
        fields[key] = value
    fields["fold_scores"] = tuple(float(v) for v in fields["fold_scores"].split())
    fields["mean"] = float(fields["mean"])
    fields["std"] = float(fields["std"])
    return fields
