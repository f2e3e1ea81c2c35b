"""Cross-validation driver: determinism, fold scoring, model wiring."""

import numpy as np
import pytest

from dvme.embedstore import SynthConfig, synth_generate
from dvme.errors import ParameterError
from dvme.evalbench import SubtaskSpec
from dvme.protocol import derive_dvme_config, run_cv
from dvme.training import TrainConfig

FAST = TrainConfig(min_epochs=2, max_epochs=6, batch_size=32, initial_lr=0.05)


@pytest.fixture(scope="module")
def redundant_data():
    return synth_generate(
        SynthConfig(2, (6, 6, 6), 50, sigma=0.05, mode="redundant", seed=4)
    )


def test_probe_protocol_on_easy_data(redundant_data):
    result = run_cv(redundant_data, "probe", SubtaskSpec("small", 40), FAST, seed=1, source="swav")
    assert result.model_label == "probe[swav]"
    assert len(result.report.fold_scores) == 5
    assert result.report.mean >= 0.99


def test_protocol_is_deterministic(redundant_data):
    a = run_cv(redundant_data, "probe", SubtaskSpec("small", 40), FAST, seed=2, source="dino")
    b = run_cv(redundant_data, "probe", SubtaskSpec("small", 40), FAST, seed=2, source="dino")
    assert a.report == b.report


def test_jobs_parallelism_matches_serial(redundant_data):
    serial = run_cv(redundant_data, "probe", SubtaskSpec("small", 40), FAST, seed=3, source="simclr")
    threaded = run_cv(
        redundant_data, "probe", SubtaskSpec("small", 40), FAST, seed=3, source="simclr", jobs=3
    )
    assert serial.report == threaded.report


def test_dvme_protocol_and_best_fold(redundant_data):
    config = derive_dvme_config(redundant_data, proj_dim=8)
    result = run_cv(
        redundant_data, "dvme", SubtaskSpec("small", 40), FAST, seed=5, dvme_config=config
    )
    assert result.model_label == "dvme"
    scores = [o.score for o in result.outcomes]
    assert result.best_fold == int(np.argmax(scores))


def test_no_attention_label(redundant_data):
    config = derive_dvme_config(redundant_data, proj_dim=8, use_attention=False)
    result = run_cv(
        redundant_data, "dvme", SubtaskSpec("small", 40), FAST, seed=5, dvme_config=config
    )
    assert result.model_label == "dvme-no-attention"


def test_unknown_source_is_rejected(redundant_data):
    with pytest.raises(ParameterError, match="unknown source"):
        run_cv(redundant_data, "probe", SubtaskSpec("small", 40), FAST, seed=0, source="resnet")


def test_mismatched_dvme_config_is_rejected(redundant_data):
    from dvme.model import DvmeConfig

    wrong = DvmeConfig(num_classes=2, source_dims=(("x", 6),), proj_dim=8)
    with pytest.raises(ParameterError, match="sources"):
        run_cv(redundant_data, "dvme", SubtaskSpec("small", 40), FAST, seed=0, dvme_config=wrong)
