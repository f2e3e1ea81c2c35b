"""Cross-validated experiment driver: one model kind, one dataset, k folds."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .evalbench import aggregate, make_folds
from .model import DvmeConfig, DvmeModel, ProbeModel
from .training import fit, take

PROBE = "probe"
DVME = "dvme"


def fold_seed(seed, fold_index):
    """Independent per-fold stream derived from (seed, fold index)."""
    return int(np.random.SeedSequence((seed, fold_index)).generate_state(1)[0])


def derive_dvme_config(dataset, proj_dim=512, use_attention=True, dropout_p=0.2):
    return DvmeConfig(
        num_classes=dataset.num_classes,
        source_dims=dataset.sources,
        proj_dim=proj_dim,
        dropout_p=dropout_p,
        use_attention=use_attention,
    )


@dataclass
class FoldOutcome:
    fold: int
    score: float
    params: dict
    history: object


@dataclass
class ProtocolResult:
    model_label: str
    report: object
    outcomes: list

    @property
    def best_fold(self):
        return max(self.outcomes, key=lambda o: o.score).fold


def _build(dataset, model_kind, source, dvme_config):
    if model_kind == PROBE:
        if source not in dataset.source_names:
            raise ParameterError(f"unknown source {source!r}; dataset has {dataset.source_names}")
        dim = dict(dataset.sources)[source]
        return ProbeModel(dim, dataset.num_classes), dataset.features[source], f"probe[{source}]"
    if model_kind == DVME:
        config = dvme_config or derive_dvme_config(dataset)
        if config.source_dims != dataset.sources:
            raise ParameterError(
                f"model sources {config.source_dims} do not match dataset {dataset.sources}"
            )
        if config.num_classes != dataset.num_classes:
            raise ParameterError("model and dataset disagree on num_classes")
        inputs = {name: dataset.features[name] for name in dataset.source_names}
        label = "dvme" if config.use_attention else "dvme-no-attention"
        return DvmeModel(config), inputs, label
    raise ParameterError(f"unknown model kind {model_kind!r}")


def run_cv(
    dataset,
    model_kind,
    subtask,
    train_config,
    seed,
    source=None,
    dvme_config=None,
    balanced=True,
    k=5,
    jobs=1,
):
    """Train/evaluate one model on every fold; the fold score is the best
    validation value of the monitored metric."""
    model, inputs, label = _build(dataset, model_kind, source, dvme_config)
    plan = make_folds(
        dataset.labels, subtask, seed, group_ids=dataset.group_ids, balanced=balanced, k=k
    )

    def run_fold(index):
        fold = plan.folds[index]
        config = replace(train_config, seed=fold_seed(seed, index))
        result = fit(
            model,
            take(inputs, fold.train_idx),
            dataset.labels[fold.train_idx],
            take(inputs, fold.val_idx),
            dataset.labels[fold.val_idx],
            config,
        )
        best = result.history.records[result.history.best_epoch - 1]
        return FoldOutcome(
            fold=index, score=best.val_score, params=result.params, history=result.history
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_fold, range(plan.k)))
    else:
        outcomes = [run_fold(i) for i in range(plan.k)]

    report = aggregate([o.score for o in outcomes], metric=train_config.monitor_metric)
    return ProtocolResult(model_label=label, report=report, outcomes=outcomes)
