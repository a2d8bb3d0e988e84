import math

import numpy as np
import pytest

from pdvox.data.batching import AgeStats
from pdvox.data.volume import load_volume, save_volume, to_volume
from pdvox.errors import DataError, ShapeError
from pdvox.models.config import ModelConfig
from pdvox.models.subject import Label, Sex
from pdvox.net import build_model, save_checkpoint
from pdvox.utils.inference import diagnose, occlusion_for_volume

EXTENTS = (8, 10, 10)


def age_only_model():
    """PD logit equals the standardized age; the volume is ignored."""
    model = build_model(ModelConfig(use_demographics=True), EXTENTS)
    for p in model.params.values():
        p[...] = 0
    model.params["output.weight"][128:] = [[0.0, 1.0], [0.0, 0.0]]
    return model


@pytest.fixture
def volume_path(tmp_path, rng):
    path = tmp_path / "subject.mvol"
    save_volume(to_volume(rng.standard_normal(EXTENTS) * 40 + 300), path)
    return path


@pytest.fixture
def checkpoint(tmp_path):
    return save_checkpoint(tmp_path / "ckpt", age_only_model(), AgeStats(mean=60, std=10))


def test_diagnose_uses_demographics(log, checkpoint, volume_path):
    probability, label = diagnose(log, checkpoint, volume_path, age=70, sex=Sex.F)
    assert probability == pytest.approx(math.e / (1 + math.e), rel=1e-5)
    assert label is Label.PD


def test_diagnose_younger_subject(log, checkpoint, volume_path):
    probability, label = diagnose(log, checkpoint, volume_path, age=50, sex=Sex.M)
    assert probability == pytest.approx(1 / (1 + math.e), rel=1e-5)
    assert label is Label.HC


def test_missing_age_stats(log, tmp_path, volume_path):
    path = save_checkpoint(tmp_path / "bare", age_only_model())
    with pytest.raises(DataError):
        diagnose(log, path, volume_path, age=60, sex=Sex.F)


def test_wrong_extents(log, tmp_path, checkpoint, rng):
    path = tmp_path / "small.mvol"
    save_volume(to_volume(rng.standard_normal((8, 10, 9))), path)
    with pytest.raises(ShapeError):
        diagnose(log, checkpoint, path, age=60, sex=Sex.F)


def test_occlusion_for_volume(log, tmp_path, checkpoint, volume_path):
    out = occlusion_for_volume(
        log, checkpoint, volume_path, 70, Sex.F, tmp_path / "heat.mvol", box=4, stride=4
    )
    heatmap = load_volume(out)
    assert heatmap.extents == EXTENTS
    assert not np.asarray(heatmap.voxels).any()
