import dataclasses

import numpy as np
import pytest

from adkd.config import TrainConfig
from adkd.data.layout import scan_layout
from adkd.data.synth import CorpusSpec, generate_corpus
from adkd.errors import ConfigError, TrainingDiverged
from adkd.losses import LossSpec
from adkd.trainer import Checkpoint, Model, TrainingData, resume, train, validation_loss


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    spec = CorpusSpec(seed=1, image_size=32, train=6, test_normal=2, test_anomalous=2, defect_size=(4, 8))
    dataset = scan_layout(generate_corpus(spec, root))
    cfg = TrainConfig(epochs=3, batch_size=4, lr=0.01, seed=2, input_size=32, stem_channels=4,
                      stage_channels=(4, 8, 8), blocks_per_stage=1, reduction=4, checkpoint_path="")
    return cfg, TrainingData.from_dataset(dataset, cfg)


def test_split_is_per_class(tiny):
    cfg, data = tiny
    # 4 classes x 6 images, 5 train / 1 val each
    assert data.train.shape == (20, 3, 32, 32)
    assert data.val.shape == (4, 3, 32, 32)


def test_zero_learning_rate_changes_nothing(tiny):
    cfg, data = tiny
    cfg = dataclasses.replace(cfg, lr=0.0, epochs=1)
    before = Model.build(cfg)
    result = train(cfg, data)
    assert result.val_losses[0] == result.initial_val_loss
    for name, arr in before.student.state_dict().items():
        np.testing.assert_array_equal(result.checkpoint.student[name], arr)
    for name, arr in before.dcam.state_dict().items():
        np.testing.assert_array_equal(result.checkpoint.dcam[name], arr)


def test_teacher_is_bitwise_frozen(tiny):
    cfg, data = tiny
    result = train(cfg, data)
    initial = Model.build(cfg).teacher.state_dict()
    assert result.checkpoint is not None
    for name, arr in initial.items():
        np.testing.assert_array_equal(result.checkpoint.teacher[name], arr)
    changed = [n for n, a in Model.build(cfg).student.state_dict().items()
               if not np.array_equal(result.checkpoint.student[n], a)]
    assert changed


def test_best_val_history_strictly_decreasing(tiny):
    cfg, data = tiny
    result = train(dataclasses.replace(cfg, epochs=4), data)
    hist = result.best_val_history
    assert hist and all(b < a for a, b in zip(hist, hist[1:]))
    assert result.checkpoint.best_val_loss == hist[-1]
    assert len(result.step_losses) == 4 * 5


def test_runs_are_deterministic(tiny):
    cfg, data = tiny
    a, b = train(cfg, data), train(cfg, data)
    assert a.step_losses == b.step_losses
    for name, arr in a.checkpoint.tensors().items():
        np.testing.assert_array_equal(b.checkpoint.tensors()[name], arr)


def test_checkpoint_round_trip(tiny, tmp_path):
    cfg, data = tiny
    cfg = dataclasses.replace(cfg, epochs=1, checkpoint_path=str(tmp_path / "ck.adkd"))
    result = train(cfg, data)
    loaded = Checkpoint.load(cfg.checkpoint_path)
    assert loaded.config == cfg
    assert loaded.epoch == result.checkpoint.epoch
    assert loaded.best_val_loss == result.checkpoint.best_val_loss
    for name, arr in result.checkpoint.tensors().items():
        np.testing.assert_array_equal(loaded.tensors()[name], arr)


def test_resume_matches_uninterrupted_run(tiny, tmp_path):
    cfg, data = tiny
    full = train(dataclasses.replace(cfg, epochs=4), data)
    first = train(dataclasses.replace(cfg, epochs=2), data)
    e = first.checkpoint.epoch
    cont = resume(first.checkpoint, data, dataclasses.replace(cfg, epochs=4))
    np.testing.assert_allclose(cont.epoch_losses, full.epoch_losses[e:], rtol=0, atol=1e-4)
    np.testing.assert_allclose(cont.checkpoint.best_val_loss, full.checkpoint.best_val_loss, atol=1e-4)


def test_resume_without_epochs_keeps_checkpoint(tiny, tmp_path):
    cfg, data = tiny
    first = train(dataclasses.replace(cfg, epochs=1), data)
    again = resume(first.checkpoint, data, first.checkpoint.config)
    assert again.checkpoint is first.checkpoint
    a, b = tmp_path / "a.adkd", tmp_path / "b.adkd"
    assert first.checkpoint.save(a) == again.checkpoint.save(b)


def test_resume_refuses_mismatched_loss(tiny):
    cfg, data = tiny
    first = train(dataclasses.replace(cfg, epochs=1), data)
    other = dataclasses.replace(cfg, epochs=2, loss=LossSpec.parse(["mse:channel:1"]))
    with pytest.raises(ConfigError, match="loss"):
        resume(first.checkpoint, data, other)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_the_step(tiny):
    cfg, data = tiny
    with pytest.raises(TrainingDiverged, match="step"):
        train(dataclasses.replace(cfg, lr=1e12, epochs=2), data)


def test_validation_loss_is_eval_mode_mean(tiny):
    cfg, data = tiny
    model = Model.build(cfg)
    v1 = validation_loss(model, data.val, cfg)
    v2 = validation_loss(model, data.val, dataclasses.replace(cfg, batch_size=1))
    assert v1 == pytest.approx(v2, rel=1e-5)
